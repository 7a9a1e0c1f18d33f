#pragma once

// 8-bit RGB PNG <-> (1, 3, h, w) float tensors in [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <png.h>

#include "errors.hpp"
#include "tensor.hpp"

namespace rsen {

/// Reads an 8-bit RGB PNG; p in {0..255} maps to p / 255. Alpha, grey,
/// palette and 16-bit images are rejected.
inline Tensor<float> read_png(const std::string& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG '" + path + "': " + image.message);
    }
    if (image.format != PNG_FORMAT_RGB) {
        png_image_free(&image);
        throw IoError("'" + path + "' is not an 8-bit RGB PNG without alpha");
    }
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG '" + path + "': " + image.message);
    }
    const std::size_t h = image.height, w = image.width;
    Tensor<float> t(Shape{1, 3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) t(0, c, y, x) = static_cast<float>(buf[(y * w + x) * 3 + c]) / 255.0f;
    return t;
}

/// Clamps to [0, 1] and rounds half up: byte = floor(v * 255 + 0.5).
inline std::uint8_t to_byte(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

/// Writes sample `n` of an (N, 3, h, w) tensor as an 8-bit RGB PNG.
template <typename T>
void write_png(const std::string& path, const Tensor<T>& t, std::size_t n = 0) {
    const Shape& s = t.shape();
    if (s.c != 3 || n >= s.n) throw DimensionError("write_png: expected (n, 3, h, w), got " + s.str());
    std::vector<std::uint8_t> buf(s.h * s.w * 3);
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) buf[(y * s.w + x) * 3 + c] = to_byte(static_cast<double>(t(n, c, y, x)));
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(s.w);
    image.height = static_cast<png_uint_32>(s.h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path + "': " + image.message);
    }
}

/// Rounds a tensor through the 8-bit representation used by write_png.
template <typename T>
Tensor<T> quantize_8bit(const Tensor<T>& t) {
    Tensor<T> out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<T>(to_byte(static_cast<double>(t[i]))) / T{255};
    return out;
}

} // namespace rsen
