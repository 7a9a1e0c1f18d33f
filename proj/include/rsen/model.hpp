#pragma once

// RSEN: residual squeeze-and-excitation encoder-decoder for rain removal.
//
//   InBlock    conv3x3 3->C, ReLU, RSEBlock(C)
//   EBlock x2  conv3x3 stride 2 (C->2C, 2C->4C), ReLU, RSEBlock
//   Bottleneck RSEBlock(4C) x bottleneck_blocks
//   DBlock x2  RSEBlock(c), conv1x1 c->2c, pixel shuffle r=2  (-> c/2 at 2x size)
//              + optional skip: conv1x1 projection of the mirrored encoder feature
//   OutBlock   RSEBlock(C), conv3x3 C->3                      (= predicted rain R)
//   output     B = I - R
//
// RSEBlock(c): y = conv3x3(ReLU(conv3x3(x))) [+ x], then SE gating.
// SE: s = sigmoid(conv1x1(ReLU(conv1x1(gap(y))))) with a squeeze width, y * s.

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "tensor.hpp"

namespace rsen {

/// Positive rational number, e.g. 1/4.
struct Ratio {
    long num = 1;
    long den = 1;

    [[nodiscard]] double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    [[nodiscard]] std::string str() const {
        return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
    }
    friend bool operator==(const Ratio& a, const Ratio& b) { return a.num * b.den == b.num * a.den; }

    /// Accepts "a/b", integers and plain decimals ("0.25").
    static Ratio parse(const std::string& text) {
        auto fail = [&] { return ConfigError("invalid ratio '" + text + "'"); };
        Ratio r;
        try {
            if (const auto slash = text.find('/'); slash != std::string::npos) {
                std::size_t used = 0;
                r.num = std::stol(text.substr(0, slash), &used);
                if (used != slash) throw fail();
                const std::string den = text.substr(slash + 1);
                r.den = std::stol(den, &used);
                if (used != den.size()) throw fail();
            } else if (const auto dot = text.find('.'); dot != std::string::npos) {
                const std::string digits = text.substr(0, dot) + text.substr(dot + 1);
                std::size_t used = 0;
                r.num = std::stol(digits, &used);
                if (used != digits.size() || text.size() - dot - 1 > 9) throw fail();
                r.den = 1;
                for (std::size_t i = dot + 1; i < text.size(); ++i) r.den *= 10;
            } else {
                std::size_t used = 0;
                r.num = std::stol(text, &used);
                if (used != text.size()) throw fail();
            }
        } catch (const std::logic_error&) {
            throw fail();
        }
        if (r.num <= 0 || r.den <= 0) throw ConfigError("ratio must be positive: '" + text + "'");
        const long g = std::gcd(r.num, r.den);
        return Ratio{r.num / g, r.den / g};
    }
};

struct ModelConfig {
    int base_channels = 64;
    int levels = 2;
    int bottleneck_blocks = 3;
    int se_squeeze = 6;
    bool use_skip = true;
    bool use_res = true;
    bool use_se = true;
    Ratio channel_scale{1, 1};

    /// Published full-size configuration.
    static ModelConfig full() { return {}; }

    /// Desk-scale configuration: 16 base channels.
    static ModelConfig desk() {
        ModelConfig c;
        c.channel_scale = Ratio{1, 4};
        return c;
    }

    /// Channel width at encoder level 0, 1, 2.
    [[nodiscard]] std::size_t width(int level = 0) const {
        return static_cast<std::size_t>(base_channels) * static_cast<std::size_t>(channel_scale.num) /
               static_cast<std::size_t>(channel_scale.den) << level;
    }

    void validate() const {
        if (levels != 2) throw ConfigError("levels must be 2, got " + std::to_string(levels));
        if (base_channels <= 0) throw ConfigError("base_channels must be positive");
        if (bottleneck_blocks < 0) throw ConfigError("bottleneck_blocks must be non-negative");
        if (channel_scale.num <= 0 || channel_scale.den <= 0) throw ConfigError("channel_scale must be positive");
        if ((static_cast<long>(base_channels) * channel_scale.num) % channel_scale.den != 0) {
            throw ConfigError("base_channels * channel_scale = " + std::to_string(base_channels) + " * " +
                              channel_scale.str() + " is not an integer");
        }
        if (width(0) == 0) throw ConfigError("scaled base width is zero");
        if (use_se) {
            if (se_squeeze <= 0) throw ConfigError("se_squeeze must be positive");
            if (width(0) < static_cast<std::size_t>(se_squeeze)) {
                throw ConfigError("channel width " + std::to_string(width(0)) + " is below the SE squeeze width " +
                                  std::to_string(se_squeeze));
            }
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class BlockKind { InBlock, EBlock, Bottleneck, DBlock, SkipProjection, OutBlock };

struct BlockSpec {
    BlockKind kind;
    std::string name;
    std::size_t in_ch;
    std::size_t out_ch;
};

/// Blocks of the network in execution order (skip projections last).
inline std::vector<BlockSpec> block_specs(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c0 = cfg.width(0), c1 = cfg.width(1), c2 = cfg.width(2);
    std::vector<BlockSpec> blocks{
        {BlockKind::InBlock, "encoder/in", 3, c0},
        {BlockKind::EBlock, "encoder/e1", c0, c1},
        {BlockKind::EBlock, "encoder/e2", c1, c2},
    };
    for (int i = 0; i < cfg.bottleneck_blocks; ++i) {
        blocks.push_back({BlockKind::Bottleneck, "bottleneck/rse" + std::to_string(i), c2, c2});
    }
    blocks.push_back({BlockKind::DBlock, "decoder/d1", c2, c1});
    blocks.push_back({BlockKind::DBlock, "decoder/d2", c1, c0});
    blocks.push_back({BlockKind::OutBlock, "decoder/out", c0, 3});
    if (cfg.use_skip) {
        blocks.push_back({BlockKind::SkipProjection, "decoder/skip1", c1, c1});
        blocks.push_back({BlockKind::SkipProjection, "decoder/skip2", c0, c0});
    }
    return blocks;
}

/// Closed-form scalar count, derived from the block list alone.
inline std::size_t param_count(const ModelConfig& cfg) {
    auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
    const auto squeeze = static_cast<std::size_t>(cfg.se_squeeze);
    auto rse = [&](std::size_t c) {
        return 2 * conv(c, c, 3) + (cfg.use_se ? conv(c, squeeze, 1) + conv(squeeze, c, 1) : 0);
    };
    std::size_t total = 0;
    for (const auto& b : block_specs(cfg)) {
        switch (b.kind) {
        case BlockKind::InBlock:
        case BlockKind::EBlock: total += conv(b.in_ch, b.out_ch, 3) + rse(b.out_ch); break;
        case BlockKind::Bottleneck: total += rse(b.in_ch); break;
        case BlockKind::DBlock: total += rse(b.in_ch) + conv(b.in_ch, 4 * b.out_ch, 1); break;
        case BlockKind::SkipProjection: total += conv(b.in_ch, b.out_ch, 1); break;
        case BlockKind::OutBlock: total += rse(b.in_ch) + conv(b.in_ch, b.out_ch, 3); break;
        }
    }
    return total;
}

/// Name and dims of one learnable tensor.
struct ParamSpec {
    std::string name;
    Shape shape;
    /// Fan-in / fan-out used by Glorot initialisation (0 for biases).
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
};

/// Every learnable tensor of the architecture, grouped as encoder/*,
/// bottleneck/*, decoder/*.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
    std::vector<ParamSpec> out;
    auto conv = [&](const std::string& name, std::size_t in, std::size_t o, std::size_t k) {
        out.push_back({name + "/weight", Shape{o, in, k, k}, in * k * k, o * k * k});
        out.push_back({name + "/bias", Shape{1, o, 1, 1}, 0, 0});
    };
    const auto squeeze = static_cast<std::size_t>(cfg.se_squeeze);
    auto rse = [&](const std::string& name, std::size_t c) {
        conv(name + "/conv1", c, c, 3);
        conv(name + "/conv2", c, c, 3);
        if (cfg.use_se) {
            conv(name + "/se/squeeze", c, squeeze, 1);
            conv(name + "/se/excite", squeeze, c, 1);
        }
    };
    for (const auto& b : block_specs(cfg)) {
        switch (b.kind) {
        case BlockKind::InBlock:
        case BlockKind::EBlock:
            conv(b.name + "/conv", b.in_ch, b.out_ch, 3);
            rse(b.name + "/rse", b.out_ch);
            break;
        case BlockKind::Bottleneck: rse(b.name, b.in_ch); break;
        case BlockKind::DBlock:
            rse(b.name + "/rse", b.in_ch);
            conv(b.name + "/up", b.in_ch, 4 * b.out_ch, 1);
            break;
        case BlockKind::SkipProjection: conv(b.name, b.in_ch, b.out_ch, 1); break;
        case BlockKind::OutBlock:
            rse(b.name + "/rse", b.in_ch);
            conv(b.name + "/conv", b.in_ch, b.out_ch, 3);
            break;
        }
    }
    return out;
}

/// Named learnable tensors, ordered by name.
template <typename T>
class ParameterStore {
public:
    using Map = std::map<std::string, Tensor<T>>;

    void insert(const std::string& name, Tensor<T> value) {
        if (!tensors_.emplace(name, std::move(value)).second) {
            throw ConfigError("duplicate parameter name '" + name + "'");
        }
    }

    [[nodiscard]] const Tensor<T>& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) {
            throw CheckpointError(CheckpointError::Kind::NameMismatch, "missing parameter '" + name + "'");
        }
        return it->second;
    }
    [[nodiscard]] Tensor<T>& at(const std::string& name) {
        return const_cast<Tensor<T>&>(static_cast<const ParameterStore&>(*this).at(name));
    }

    [[nodiscard]] bool contains(const std::string& name) const { return tensors_.contains(name); }
    [[nodiscard]] std::size_t size() const noexcept { return tensors_.size(); }
    [[nodiscard]] auto begin() const { return tensors_.begin(); }
    [[nodiscard]] auto end() const { return tensors_.end(); }
    [[nodiscard]] auto begin() { return tensors_.begin(); }
    [[nodiscard]] auto end() { return tensors_.end(); }

    [[nodiscard]] std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.numel();
        return n;
    }

    /// Names under "encoder", "bottleneck" or "decoder".
    [[nodiscard]] std::vector<std::string> group(const std::string& prefix) const {
        std::vector<std::string> names;
        for (const auto& [name, _] : tensors_) {
            if (name.starts_with(prefix + "/")) names.push_back(name);
        }
        return names;
    }

    template <typename U>
    [[nodiscard]] ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [name, t] : tensors_) out.insert(name, t.template cast<U>());
        return out;
    }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.tensors_ == b.tensors_; }

private:
    Map tensors_;
};

/// Throws CheckpointError when names or dims disagree with the architecture
/// of cfg. The message names the first offending tensor.
template <typename T>
void validate_store(const ParameterStore<T>& store, const ModelConfig& cfg) {
    const auto layout = parameter_layout(cfg);
    for (const auto& spec : layout) {
        if (!store.contains(spec.name)) {
            throw CheckpointError(CheckpointError::Kind::NameMismatch,
                                  "parameter '" + spec.name + "' missing for this configuration");
        }
        const Shape& have = store.at(spec.name).shape();
        if (have != spec.shape) {
            throw CheckpointError(CheckpointError::Kind::DimsMismatch, "parameter '" + spec.name + "' has dims " +
                                                                           have.str() + ", configuration expects " +
                                                                           spec.shape.str());
        }
    }
    if (store.size() != layout.size()) {
        for (const auto& [name, _] : store) {
            bool known = false;
            for (const auto& spec : layout) known = known || spec.name == name;
            if (!known) {
                throw CheckpointError(CheckpointError::Kind::NameMismatch,
                                      "parameter '" + name + "' is not part of this configuration");
            }
        }
    }
}

enum class InitMode { Glorot, Zero };

/// Uniform in [0, 1) from the top 53 bits of a 64-bit draw; identical on
/// every platform, unlike std::uniform_real_distribution.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Glorot-uniform weights, zero biases. Deterministic per seed.
template <typename T>
ParameterStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed, InitMode mode = InitMode::Glorot) {
    ParameterStore<T> store;
    std::mt19937_64 rng(seed);
    for (const auto& spec : parameter_layout(cfg)) {
        Tensor<T> t(spec.shape);
        if (mode == InitMode::Glorot && spec.fan_in != 0) {
            const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
            for (auto& v : t.data()) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
        }
        store.insert(spec.name, std::move(t));
    }
    return store;
}

template <typename T>
using VarMap = std::map<std::string, Var<T>>;

/// Places every parameter on the tape as a leaf.
template <typename T>
VarMap<T> attach(Tape<T>& tape, const ParameterStore<T>& store, bool requires_grad = true) {
    VarMap<T> vars;
    for (const auto& [name, t] : store) vars.emplace(name, tape.leaf(t, requires_grad));
    return vars;
}

namespace detail {

template <typename T>
const Var<T>& param(const VarMap<T>& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
        throw CheckpointError(CheckpointError::Kind::NameMismatch, "missing parameter '" + name + "'");
    }
    return it->second;
}

template <typename T>
Var<T> conv(const VarMap<T>& params, const std::string& name, const Var<T>& x, std::size_t stride = 1) {
    const Var<T>& w = param(params, name + "/weight");
    const Var<T>& b = param(params, name + "/bias");
    return conv2d(x, w, b, stride, w.shape().h / 2);
}

} // namespace detail

/// Squeeze-and-excitation gate applied to x.
template <typename T>
Var<T> se_block(const VarMap<T>& params, const std::string& prefix, const Var<T>& x) {
    Var<T> pooled = global_avg_pool(x);
    Var<T> squeezed = relu(detail::conv(params, prefix + "/squeeze", pooled));
    Var<T> gate = sigmoid(detail::conv(params, prefix + "/excite", squeezed));
    return channel_scale(x, gate);
}

template <typename T>
Var<T> rse_block(const VarMap<T>& params, const std::string& prefix, const Var<T>& x, const ModelConfig& cfg) {
    Var<T> y = detail::conv(params, prefix + "/conv2", relu(detail::conv(params, prefix + "/conv1", x)));
    if (cfg.use_res) y = add(y, x);
    if (cfg.use_se) y = se_block(params, prefix + "/se", y);
    return y;
}

template <typename T>
struct ForwardResult {
    Var<T> rain;
    Var<T> derained;
};

/// Spatial multiple required by the two stride-2 levels.
inline constexpr std::size_t kSpatialMultiple = 4;

/// Runs the network on an (n, 3, h, w) input. Inputs whose sides are not
/// multiples of 4 are reflect-padded on the bottom/right and the predicted
/// rain layer is cropped back, so both outputs have the input's dims.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const VarMap<T>& params, const Var<T>& input, const ModelConfig& cfg) {
    const Shape s = input.shape();
    if (s.c != 3) throw DimensionError("forward: expected 3 input channels, got " + s.str());
    if (s.h == 0 || s.w == 0 || s.n == 0) throw DimensionError("forward: empty input " + s.str());

    const std::size_t pad_h = (kSpatialMultiple - s.h % kSpatialMultiple) % kSpatialMultiple;
    const std::size_t pad_w = (kSpatialMultiple - s.w % kSpatialMultiple) % kSpatialMultiple;
    Var<T> x = input;
    if (pad_h != 0 || pad_w != 0) x = tape.constant(kernels::reflect_pad(input.value(), pad_h, pad_w));

    using detail::conv;
    Var<T> level0 = rse_block(params, "encoder/in/rse", relu(conv(params, "encoder/in/conv", x)), cfg);
    Var<T> level1 = rse_block(params, "encoder/e1/rse", relu(conv(params, "encoder/e1/conv", level0, 2)), cfg);
    Var<T> h = rse_block(params, "encoder/e2/rse", relu(conv(params, "encoder/e2/conv", level1, 2)), cfg);

    for (int i = 0; i < cfg.bottleneck_blocks; ++i) h = rse_block(params, "bottleneck/rse" + std::to_string(i), h, cfg);

    h = rse_block(params, "decoder/d1/rse", h, cfg);
    h = pixel_shuffle(conv(params, "decoder/d1/up", h), 2);
    if (cfg.use_skip) h = add(h, conv(params, "decoder/skip1", level1));

    h = rse_block(params, "decoder/d2/rse", h, cfg);
    h = pixel_shuffle(conv(params, "decoder/d2/up", h), 2);
    if (cfg.use_skip) h = add(h, conv(params, "decoder/skip2", level0));

    h = rse_block(params, "decoder/out/rse", h, cfg);
    Var<T> rain = conv(params, "decoder/out/conv", h);
    if (pad_h != 0 || pad_w != 0) rain = crop(rain, 0, 0, s.h, s.w);
    return {rain, sub(input, rain)};
}

template <typename T>
struct Derained {
    Tensor<T> rain;
    Tensor<T> derained;
};

/// Inference without gradient bookkeeping.
template <typename T>
Derained<T> derain(const ParameterStore<T>& store, const Tensor<T>& input, const ModelConfig& cfg) {
    Tape<T> tape(false);
    const VarMap<T> params = attach(tape, store, false);
    auto result = forward(tape, params, tape.constant(input), cfg);
    return {result.rain.value(), result.derained.value()};
}

} // namespace rsen
