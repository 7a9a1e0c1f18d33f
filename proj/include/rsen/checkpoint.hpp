#pragma once

// Checkpoint container, all integers and floats little-endian:
//
//   "RSEN"                 4 bytes magic
//   version                u32
//   config text            u32 byte length + UTF-8 "key = value" lines
//   tensor count           u32
//   per tensor             u32 name length + name bytes, u8 rank,
//                          rank x u32 dims, prod(dims) x f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace rsen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ParameterStore<float> params;
    /// Completed epochs and iterations at save time.
    std::size_t epoch = 0;
    std::size_t iteration = 0;
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(CheckpointError::Kind::TruncatedPayload,
                                  "truncated payload: needed " + std::to_string(n) + " bytes at offset " +
                                      std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
        }
    }

    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    detail::ByteWriter out;
    out.raw("RSEN", 4);
    out.u32(kCheckpointVersion);
    ConfigText text;
    write_model_config(text, ckpt.config);
    text.set("state.epoch", std::to_string(ckpt.epoch));
    text.set("state.iteration", std::to_string(ckpt.iteration));
    out.str(text.str());
    out.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        out.str(name);
        out.u8(4);
        const Shape& s = t.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) out.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) out.f32(v);
    }
    return out.bytes();
}

/// Parses a checkpoint and validates its tensors against the architecture
/// described by its own config header.
inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "RSEN", 4) != 0) {
        throw CheckpointError(Kind::Malformed, "not an RSEN checkpoint (bad magic)");
    }
    detail::ByteReader in(std::move(bytes));
    for (int i = 0; i < 4; ++i) in.u8();
    if (const std::uint32_t version = in.u32(); version != kCheckpointVersion) {
        throw CheckpointError(Kind::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                         " is not supported (expected " +
                                                         std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    try {
        const ConfigText text = ConfigText::parse(in.str());
        text.reject_unknown(model_keys(), {"state."});
        ckpt.config = model_config_from(text);
        text.read("state.epoch", [&](const std::string& v) { ckpt.epoch = static_cast<std::size_t>(parse_int(v)); });
        text.read("state.iteration",
                  [&](const std::string& v) { ckpt.iteration = static_cast<std::size_t>(parse_int(v)); });
    } catch (const ConfigError& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint config header: ") + e.what());
    }
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.str();
        const std::uint8_t rank = in.u8();
        if (rank != 4) throw CheckpointError(Kind::Malformed, "tensor '" + name + "' has unsupported rank");
        Shape s;
        s.n = in.u32();
        s.c = in.u32();
        s.h = in.u32();
        s.w = in.u32();
        std::vector<float> data(s.numel());
        for (float& v : data) v = in.f32();
        try {
            ckpt.params.insert(name, Tensor<float>(s, std::move(data)));
        } catch (const ConfigError& e) {
            throw CheckpointError(Kind::Malformed, e.what());
        }
    }
    if (!in.done()) throw CheckpointError(Kind::Malformed, "unexpected trailing bytes after tensor records");
    validate_store(ckpt.params, ckpt.config);
    return ckpt;
}

/// Writes through a temporary file so an interrupted save keeps the
/// previous checkpoint intact.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot write '" + tmp.string() + "'");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError(CheckpointError::Kind::Io, "write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params,
                            const ModelConfig& cfg, std::size_t epoch = 0, std::size_t iteration = 0) {
    save_checkpoint(path, Checkpoint{cfg, params, epoch, iteration});
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot read checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(std::move(bytes));
}

/// Loads and additionally checks the tensors against `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    Checkpoint ckpt = load_checkpoint(path);
    validate_store(ckpt.params, expected);
    ckpt.config = expected;
    return ckpt;
}

} // namespace rsen
