#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <rsen/tensor.hpp>

namespace rsen::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("rsen_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> normal_tensor(Shape s, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

/// Direct scalar evaluation of zero-padded cross-correlation; shares no
/// code with the im2col/GEMM path.
template <typename T>
Tensor<T> brute_force_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                           std::size_t pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const std::size_t k = ws.h;
    const std::size_t oh = (xs.h + 2 * pad - k) / stride + 1, ow = (xs.w + 2 * pad - k) / stride + 1;
    Tensor<T> y(Shape{xs.n, ws.n, oh, ow});
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t o = 0; o < ws.n; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = static_cast<double>(b[o]);
                    for (std::size_t c = 0; c < xs.c; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(xs.h) || ix >= static_cast<long>(xs.w))
                                    continue;
                                acc += static_cast<double>(w(o, c, ky, kx)) *
                                       static_cast<double>(x(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
                            }
                    y(n, o, oy, ox) = static_cast<T>(acc);
                }
    return y;
}

} // namespace rsen::test
