#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace rsen {

/// 10 log10(peak^2 / mse) with the mse taken jointly over every channel
/// and pixel. Identical inputs give +infinity.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    if (a.shape() != b.shape()) throw DimensionError("psnr: " + a.shape().str() + " vs " + b.shape().str());
    if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
    if (a.numel() == 0) throw DimensionError("psnr: empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

struct SsimOptions {
    double dynamic_range = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
    double sigma = 1.5;
};

inline constexpr std::size_t kSsimWindow = 11;

namespace detail {

inline std::array<double, kSsimWindow> gaussian_taps(double sigma) {
    std::array<double, kSsimWindow> taps{};
    double total = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double x = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
        taps[i] = std::exp(-x * x / (2.0 * sigma * sigma));
        total += taps[i];
    }
    for (double& t : taps) t /= total;
    return taps;
}

/// Separable 'valid' filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                        const std::array<double, kSsimWindow>& taps) {
    const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
    std::vector<double> tmp(h * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) acc += taps[k] * src[y * w + x + k];
            tmp[y * ow + x] = acc;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) acc += taps[k] * tmp[(y + k) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

} // namespace detail

/// Mean single-scale SSIM over one h x w plane pair ('valid' window positions).
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                         const SsimOptions& opt = {}) {
    const auto taps = detail::gaussian_taps(opt.sigma);
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = detail::filter_valid(a, h, w, taps);
    const auto mu_b = detail::filter_valid(b, h, w, taps);
    const auto e_aa = detail::filter_valid(aa, h, w, taps);
    const auto e_bb = detail::filter_valid(bb, h, w, taps);
    const auto e_ab = detail::filter_valid(ab, h, w, taps);
    const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
    const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), computed on every RGB
/// channel separately and averaged over channels and batch samples.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    if (a.shape() != b.shape()) throw DimensionError("ssim: " + a.shape().str() + " vs " + b.shape().str());
    const Shape& s = a.shape();
    if (s.h < kSsimWindow || s.w < kSsimWindow) {
        throw DimensionError("ssim: images " + s.str() + " are smaller than the 11x11 window");
    }
    double total = 0.0;
    std::vector<double> pa(s.plane()), pb(s.plane());
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.plane(); ++i) {
                pa[i] = static_cast<double>(a.plane(n, c)[i]);
                pb[i] = static_cast<double>(b.plane(n, c)[i]);
            }
            total += ssim_plane(pa, pb, s.h, s.w, opt);
        }
    return total / static_cast<double>(s.n * s.c);
}

struct EvalRow {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double seconds = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
    std::vector<EvalRow> rows;
    /// Mean over rows with finite PSNR.
    double mean_psnr = std::numeric_limits<double>::quiet_NaN();
    double mean_ssim = std::numeric_limits<double>::quiet_NaN();
    std::size_t infinite_psnr = 0;
    std::vector<std::string> warnings;

    /// Recomputes the aggregates from rows.
    void finalize() {
        double psnr_sum = 0.0, ssim_sum = 0.0;
        std::size_t finite = 0;
        infinite_psnr = 0;
        warnings.clear();
        for (const auto& r : rows) {
            ssim_sum += r.ssim;
            if (std::isfinite(r.psnr_db)) {
                psnr_sum += r.psnr_db;
                ++finite;
            } else {
                ++infinite_psnr;
            }
        }
        mean_psnr = finite ? psnr_sum / static_cast<double>(finite) : std::numeric_limits<double>::quiet_NaN();
        mean_ssim = rows.empty() ? std::numeric_limits<double>::quiet_NaN() : ssim_sum / static_cast<double>(rows.size());
        if (infinite_psnr > 0) {
            warnings.push_back(std::to_string(infinite_psnr) +
                               " image(s) identical to ground truth (infinite PSNR) excluded from the PSNR mean");
        }
    }

    [[nodiscard]] std::string csv() const {
        std::ostringstream out;
        out.precision(10);
        out << "id,psnr,ssim\n";
        for (const auto& r : rows) {
            out << r.id << ',';
            if (std::isfinite(r.psnr_db)) out << r.psnr_db; else out << "inf";
            out << ',' << r.ssim << '\n';
        }
        return out.str();
    }

    [[nodiscard]] std::string summary() const {
        std::ostringstream out;
        out.setf(std::ios::fixed);
        out.precision(4);
        out << "images=" << rows.size() << " mean_psnr=" << mean_psnr << " mean_ssim=" << mean_ssim;
        if (infinite_psnr > 0) out << " infinite_psnr=" << infinite_psnr;
        return out.str();
    }
};

/// Compares same-named PNGs of two directories.
inline EvalReport eval_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
    for (const auto& d : {pred_dir, gt_dir}) {
        if (!std::filesystem::is_directory(d)) throw IoError("directory '" + d.string() + "' does not exist");
    }
    const auto pred = detail::png_names(pred_dir);
    const auto gt = detail::png_names(gt_dir);
    std::vector<std::string> unmatched;
    for (const auto& n : pred)
        if (!std::binary_search(gt.begin(), gt.end(), n)) unmatched.push_back(n);
    for (const auto& n : gt)
        if (!std::binary_search(pred.begin(), pred.end(), n)) unmatched.push_back(n);
    if (!unmatched.empty()) {
        std::string list;
        for (const auto& n : unmatched) list += (list.empty() ? "" : ", ") + n;
        throw IoError("prediction and ground-truth directories differ; unmatched: " + list);
    }
    EvalReport report;
    report.rows.resize(pred.size());
    parallel_for(pred.size(), [&](std::size_t i) {
        const auto a = read_png((pred_dir / pred[i]).string());
        const auto b = read_png((gt_dir / pred[i]).string());
        if (a.shape() != b.shape()) throw DimensionError("image '" + pred[i] + "' dims differ between directories");
        report.rows[i] = EvalRow{std::filesystem::path(pred[i]).stem().string(), psnr(a, b), ssim(a, b)};
    });
    report.finalize();
    return report;
}

/// Median of the samples (mean of the two middle values for even counts).
inline double median(std::vector<double> xs) {
    if (xs.empty()) throw ContractError("median of an empty sample");
    std::sort(xs.begin(), xs.end());
    const std::size_t m = xs.size() / 2;
    return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

struct BenchResult {
    std::size_t size = 0;
    double median_seconds = 0.0;
    std::vector<double> runs;

    [[nodiscard]] std::string csv() const {
        std::ostringstream out;
        out << "size,median_s,runs\n" << size << ',' << median_seconds << ',' << runs.size() << '\n';
        return out.str();
    }
};

/// Median wall-clock seconds of `repeats` forward passes on a
/// (1, 3, size, size) image, after `warmup` untimed passes.
template <typename T>
BenchResult bench_forward(const ParameterStore<T>& store, const ModelConfig& cfg, std::size_t size,
                          std::size_t repeats, std::size_t warmup = 1) {
    if (size == 0 || size % kSpatialMultiple != 0) {
        throw ConfigError("benchmark size must be a positive multiple of 4, got " + std::to_string(size));
    }
    if (repeats == 0) throw ConfigError("benchmark repeats must be positive");
    const Tensor<T> input = procedural_background(size, size, 7).template cast<T>();
    for (std::size_t i = 0; i < warmup; ++i) (void)derain(store, input, cfg);
    BenchResult result;
    result.size = size;
    for (std::size_t i = 0; i < repeats; ++i) {
        const auto start = std::chrono::steady_clock::now();
        (void)derain(store, input, cfg);
        result.runs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    result.median_seconds = median(result.runs);
    return result;
}

} // namespace rsen
