#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace rsen {

struct ImagePair {
    Tensor<float> rainy;
    Tensor<float> clean;
    std::string id;
};

namespace detail {

inline std::vector<std::string> png_names(const std::filesystem::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace detail

/// Loads `<path>/rainy/*.png` and `<path>/clean/*.png` with matching file
/// names, sorted byte-wise by name. An empty directory yields no pairs.
inline std::vector<ImagePair> load_pair_dir(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw IoError("dataset directory '" + path.string() + "' does not exist");
    if (fs::is_empty(path)) return {};
    const fs::path rainy_dir = path / "rainy", clean_dir = path / "clean";
    for (const auto& d : {rainy_dir, clean_dir}) {
        if (!fs::is_directory(d)) throw IoError("missing directory '" + d.string() + "'");
    }
    const auto rainy = detail::png_names(rainy_dir);
    const auto clean = detail::png_names(clean_dir);
    for (const auto& name : rainy) {
        if (!std::binary_search(clean.begin(), clean.end(), name)) {
            throw IoError("'" + (rainy_dir / name).string() + "' has no counterpart in " + clean_dir.string());
        }
    }
    for (const auto& name : clean) {
        if (!std::binary_search(rainy.begin(), rainy.end(), name)) {
            throw IoError("'" + (clean_dir / name).string() + "' has no counterpart in " + rainy_dir.string());
        }
    }
    std::vector<ImagePair> pairs(rainy.size());
    parallel_for(rainy.size(), [&](std::size_t i) {
        const std::string& name = rainy[i];
        pairs[i] = ImagePair{read_png((rainy_dir / name).string()), read_png((clean_dir / name).string()),
                             fs::path(name).stem().string()};
        if (pairs[i].rainy.shape() != pairs[i].clean.shape()) {
            throw DimensionError("pair '" + name + "' has mismatched dims " + pairs[i].rainy.shape().str() + " vs " +
                                 pairs[i].clean.shape().str());
        }
    });
    return pairs;
}

/// Writes pairs as `<path>/rainy/<id>.png` and `<path>/clean/<id>.png`.
inline void write_pair_dir(const std::filesystem::path& path, const std::vector<ImagePair>& pairs) {
    std::filesystem::create_directories(path / "rainy");
    std::filesystem::create_directories(path / "clean");
    for (const auto& p : pairs) {
        write_png((path / "rainy" / (p.id + ".png")).string(), p.rainy);
        write_png((path / "clean" / (p.id + ".png")).string(), p.clean);
    }
}

/// Synthetic rain layer parameters. Angle is in degrees from vertical.
struct StreakParams {
    int count = 200;
    double angle = 10.0;
    double length = 20.0;
    double width = 1.0;
    double intensity = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (count < 0) throw ConfigError("rain.count must be non-negative");
        if (!(angle >= -45.0 && angle <= 45.0)) throw ConfigError("rain.angle must lie in [-45, 45] degrees");
        if (!(length > 0.0)) throw ConfigError("rain.length must be positive");
        if (!(width > 0.0)) throw ConfigError("rain.width must be positive");
        if (!(intensity >= 0.0 && intensity <= 1.0)) throw ConfigError("rain.intensity must lie in [0, 1]");
    }
};

inline const std::vector<std::string>& rain_keys() {
    static const std::vector<std::string> keys{"rain.count", "rain.angle",     "rain.length",
                                               "rain.width", "rain.intensity", "rain.seed"};
    return keys;
}

inline StreakParams streak_params_from(const ConfigText& text, StreakParams p = {}) {
    text.read("rain.count", [&](const std::string& v) { p.count = static_cast<int>(parse_int(v)); });
    text.read("rain.angle", [&](const std::string& v) { p.angle = parse_double(v); });
    text.read("rain.length", [&](const std::string& v) { p.length = parse_double(v); });
    text.read("rain.width", [&](const std::string& v) { p.width = parse_double(v); });
    text.read("rain.intensity", [&](const std::string& v) { p.intensity = parse_double(v); });
    text.read("rain.seed", [&](const std::string& v) { p.seed = static_cast<std::uint64_t>(parse_int(v)); });
    p.validate();
    return p;
}

/// Non-negative (1, 1, h, w) streak layer: anti-aliased segments with a
/// little angle jitter, smeared by a short motion blur along the mean
/// streak direction.
inline Tensor<float> render_streaks(std::size_t h, std::size_t w, const StreakParams& p) {
    p.validate();
    constexpr double kPi = 3.14159265358979323846;
    std::vector<double> layer(h * w, 0.0);
    std::mt19937_64 rng(p.seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); };

    for (int s = 0; s < p.count; ++s) {
        const double theta = (p.angle + uniform(-5.0, 5.0)) * kPi / 180.0;
        const double len = p.length * uniform(0.6, 1.4);
        const double brightness = p.intensity * uniform(0.5, 1.0);
        const double cx = uniform(0.0, static_cast<double>(w));
        const double cy = uniform(0.0, static_cast<double>(h));
        const double dx = std::sin(theta), dy = std::cos(theta);
        const double x0 = cx - 0.5 * len * dx, y0 = cy - 0.5 * len * dy;
        const double x1 = cx + 0.5 * len * dx, y1 = cy + 0.5 * len * dy;
        const double reach = 0.5 * p.width + 1.0;
        const auto lo_x = static_cast<long>(std::floor(std::min(x0, x1) - reach));
        const auto hi_x = static_cast<long>(std::ceil(std::max(x0, x1) + reach));
        const auto lo_y = static_cast<long>(std::floor(std::min(y0, y1) - reach));
        const auto hi_y = static_cast<long>(std::ceil(std::max(y0, y1) + reach));
        for (long y = std::max(0L, lo_y); y <= std::min<long>(static_cast<long>(h) - 1, hi_y); ++y) {
            for (long x = std::max(0L, lo_x); x <= std::min<long>(static_cast<long>(w) - 1, hi_x); ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                const double t = std::clamp((px - x0) * dx + (py - y0) * dy, 0.0, len);
                const double dist = std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
                const double coverage = std::clamp(0.5 * p.width + 0.5 - dist, 0.0, 1.0);
                layer[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] += brightness * coverage;
            }
        }
    }

    // Triangle-weighted 5-tap blur along the streak direction, bilinear taps.
    const double theta = p.angle * kPi / 180.0;
    const double dx = std::sin(theta), dy = std::cos(theta);
    constexpr double taps[5] = {1.0 / 9, 2.0 / 9, 3.0 / 9, 2.0 / 9, 1.0 / 9};
    auto sample = [&](double x, double y) {
        const double fx = std::floor(x), fy = std::floor(y);
        const double ax = x - fx, ay = y - fy;
        double acc = 0.0;
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
                const long sx = static_cast<long>(fx) + i, sy = static_cast<long>(fy) + j;
                if (sx < 0 || sy < 0 || sx >= static_cast<long>(w) || sy >= static_cast<long>(h)) continue;
                const double wgt = (i ? ax : 1.0 - ax) * (j ? ay : 1.0 - ay);
                acc += wgt * layer[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
        return acc;
    };
    Tensor<float> out(Shape{1, 1, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k) {
                const double off = static_cast<double>(k - 2);
                acc += taps[k] * sample(static_cast<double>(x) + off * dx, static_cast<double>(y) + off * dy);
            }
            out(0, 0, y, x) = static_cast<float>(acc);
        }
    return out;
}

/// Additive rain: I = clamp(B + R, 0, 1), the same R on all channels.
/// Returns (I, B) with I as `rainy`.
inline ImagePair synthesize_rain(const Tensor<float>& clean, const StreakParams& p, std::string id = {}) {
    p.validate();
    const Shape& s = clean.shape();
    if (s.n != 1 || s.c != 3) throw DimensionError("synthesize_rain: expected (1, 3, h, w), got " + s.str());
    Tensor<float> rainy = clean;
    if (p.count > 0 && p.intensity > 0.0) {
        const Tensor<float> streaks = render_streaks(s.h, s.w, p);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < s.plane(); ++i) {
                float& v = rainy.plane(0, c)[i];
                v = std::clamp(v + streaks[i], 0.0f, 1.0f);
            }
    }
    return ImagePair{std::move(rainy), clean, std::move(id)};
}

/// Smooth synthetic background: per-channel gradients plus a few soft
/// disks and boxes, values within [0.05, 0.75].
inline Tensor<float> procedural_background(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); };
    Tensor<float> img(Shape{1, 3, h, w});
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = uniform(0.2, 0.45);
        gx[c] = uniform(-0.15, 0.15);
        gy[c] = uniform(-0.15, 0.15);
    }
    struct Shape2D {
        bool disk;
        double cx, cy, r, ry;
        double color[3];
    };
    std::vector<Shape2D> shapes(4);
    for (auto& sh : shapes) {
        sh.disk = unit_uniform(rng) < 0.5;
        sh.cx = uniform(0.0, static_cast<double>(w));
        sh.cy = uniform(0.0, static_cast<double>(h));
        sh.r = uniform(0.1, 0.3) * static_cast<double>(std::min(h, w));
        sh.ry = uniform(0.1, 0.3) * static_cast<double>(std::min(h, w));
        for (double& col : sh.color) col = uniform(-0.2, 0.25);
    }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
            double px[3];
            for (int c = 0; c < 3; ++c) px[c] = base[c] + gx[c] * u + gy[c] * v;
            for (const auto& sh : shapes) {
                const double ddx = static_cast<double>(x) + 0.5 - sh.cx, ddy = static_cast<double>(y) + 0.5 - sh.cy;
                double edge;
                if (sh.disk) {
                    edge = sh.r - std::hypot(ddx, ddy);
                } else {
                    edge = std::min(sh.r - std::abs(ddx), sh.ry - std::abs(ddy));
                }
                const double weight = std::clamp(0.5 + edge / 3.0, 0.0, 1.0);
                for (int c = 0; c < 3; ++c) px[c] += weight * sh.color[c];
            }
            for (int c = 0; c < 3; ++c) img(0, static_cast<std::size_t>(c), y, x) = static_cast<float>(std::clamp(px[c], 0.05, 0.75));
        }
    return img;
}

} // namespace rsen
