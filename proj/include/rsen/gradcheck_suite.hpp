#pragma once

// Finite-difference sweep over every differentiable op and the composed
// network. Shared by the gradcheck command and the test suites.

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace rsen {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
};

struct GradCheckSuiteOptions {
    ModelConfig model = ModelConfig::desk();
    std::size_t size = 16;
    std::uint64_t seed = 0;
    double eps = 1e-5;
    double tolerance = 1e-4;
    /// Probes per network parameter tensor (the input is probed in full).
    std::size_t probes_per_tensor = 4;
    /// Standard deviation of the random network parameters.
    double param_stddev = 0.1;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    double seconds = 0.0;

    [[nodiscard]] double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_error);
        return w;
    }
    [[nodiscard]] bool passed() const {
        for (const auto& e : entries) {
            if (!(e.max_rel_error < tolerance) || e.checked == 0) return false;
        }
        return true;
    }
};

namespace detail {

inline Tensor<double> gc_uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    Tensor<double> t(s);
    for (auto& v : t.data()) v = lo + (hi - lo) * unit_uniform(rng);
    return t;
}

inline Tensor<double> gc_normal(Shape s, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<double> t(s);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

/// Moves entries with |x| <= margin to +/- margin so ReLU kinks are avoided.
inline Tensor<double> gc_off_zero(Tensor<double> t, double margin) {
    for (auto& v : t.data()) {
        if (std::abs(v) <= margin) v = v < 0 ? -2 * margin : 2 * margin;
    }
    return t;
}

} // namespace detail

/// Checks each op on random inputs, then every parameter tensor and the
/// input of the toy network under an MSE loss.
inline GradCheckReport run_gradcheck_suite(const GradCheckSuiteOptions& opt) {
    using Build = std::function<Var<double>(Tape<double>&, const Var<double>&)>;
    const auto start = std::chrono::steady_clock::now();
    GradCheckReport report;
    report.tolerance = opt.tolerance;
    std::mt19937_64 rng(opt.seed);
    const double margin = 10 * opt.eps;

    auto record = [&](const std::string& name, const Build& build, const Tensor<double>& x, GradCheckOptions gco) {
        const auto r = finite_diff_check(build, x, opt.eps, gco);
        report.entries.push_back({name, r.max_rel_error, r.checked, r.skipped_kinks});
    };

    const Shape xs{2, 4, 6, 6};
    const auto weights = detail::gc_uniform(xs, rng, -1, 1);
    const auto weights_half = detail::gc_uniform(Shape{2, 4, 3, 3}, rng, -1, 1);
    const auto weights_up = detail::gc_uniform(Shape{2, 1, 12, 12}, rng, -1, 1);
    const auto weights_down = detail::gc_uniform(Shape{2, 16, 3, 3}, rng, -1, 1);
    const auto weights_pool = detail::gc_uniform(Shape{2, 4, 1, 1}, rng, -1, 1);
    const auto weights_crop = detail::gc_uniform(Shape{2, 4, 3, 4}, rng, -1, 1);
    const auto other = detail::gc_uniform(xs, rng, -1, 1);
    const auto gate = detail::gc_uniform(Shape{2, 4, 1, 1}, rng, 0, 1);
    const auto w3 = detail::gc_normal(Shape{4, 4, 3, 3}, rng, 0.3);
    const auto b4 = detail::gc_normal(Shape{1, 4, 1, 1}, rng, 0.1);

    auto dot = [](Tape<double>& t, const Var<double>& y, const Tensor<double>& w) { return sum(mul(y, t.constant(w))); };
    const std::vector<std::pair<std::string, Build>> ops{
        {"conv2d", [&](Tape<double>& t, const Var<double>& v) {
             return dot(t, conv2d(v, t.constant(w3), t.constant(b4), 1, 1), weights);
         }},
        {"conv2d_stride2", [&](Tape<double>& t, const Var<double>& v) {
             return dot(t, conv2d(v, t.constant(w3), t.constant(b4), 2, 1), weights_half);
         }},
        {"relu", [&](Tape<double>& t, const Var<double>& v) { return dot(t, relu(v), weights); }},
        {"sigmoid", [&](Tape<double>& t, const Var<double>& v) { return dot(t, sigmoid(v), weights); }},
        {"global_avg_pool", [&](Tape<double>& t, const Var<double>& v) { return dot(t, global_avg_pool(v), weights_pool); }},
        {"pixel_shuffle", [&](Tape<double>& t, const Var<double>& v) { return dot(t, pixel_shuffle(v, 2), weights_up); }},
        {"space_to_depth",
         [&](Tape<double>& t, const Var<double>& v) { return dot(t, space_to_depth(v, 2), weights_down); }},
        {"add", [&](Tape<double>& t, const Var<double>& v) { return dot(t, add(v, t.constant(other)), weights); }},
        {"sub", [&](Tape<double>& t, const Var<double>& v) { return dot(t, sub(t.constant(other), v), weights); }},
        {"mul", [&](Tape<double>& t, const Var<double>& v) { return dot(t, mul(v, t.constant(other)), weights); }},
        {"channel_scale", [&](Tape<double>& t, const Var<double>& v) {
             return dot(t, channel_scale(v, t.constant(gate)), weights);
         }},
        {"crop", [&](Tape<double>& t, const Var<double>& v) { return dot(t, crop(v, 1, 2, 3, 4), weights_crop); }},
        {"mse_loss", [&](Tape<double>& t, const Var<double>& v) { return mse_loss(v, t.constant(other)); }},
    };
    for (const auto& [name, build] : ops) {
        record(name, build, detail::gc_off_zero(detail::gc_uniform(xs, rng, -1, 1), margin), {});
    }
    record("channel_scale_gate",
           [&](Tape<double>& t, const Var<double>& v) { return dot(t, channel_scale(t.constant(other), v), weights); },
           gate, {});

    // Composed network.
    const Shape in_shape{1, 3, opt.size, opt.size};
    ParameterStore<double> params;
    for (const auto& spec : parameter_layout(opt.model)) {
        params.insert(spec.name, detail::gc_normal(spec.shape, rng, opt.param_stddev));
    }
    const auto input = detail::gc_uniform(in_shape, rng, 0, 1);
    const auto target = detail::gc_uniform(in_shape, rng, 0, 1);

    auto network_loss = [&](Tape<double>& t, const std::string& free_name, const Var<double>& free) {
        VarMap<double> vars;
        for (const auto& [name, value] : params) {
            vars.emplace(name, name == free_name ? free : t.constant(value));
        }
        const Var<double> x = free_name.empty() ? free : t.constant(input);
        return mse_loss(forward(t, vars, x, opt.model).derained, t.constant(target));
    };

    record("network/input", [&](Tape<double>& t, const Var<double>& v) { return network_loss(t, "", v); }, input, {});
    GradCheckEntry net{"network/params", 0.0, 0, 0};
    std::uint64_t probe_seed = opt.seed;
    for (const auto& [name, value] : params) {
        const auto r = finite_diff_check(
            [&, n = name](Tape<double>& t, const Var<double>& v) { return network_loss(t, n, v); }, value, opt.eps,
            GradCheckOptions{opt.probes_per_tensor, ++probe_seed});
        net.max_rel_error = std::max(net.max_rel_error, r.max_rel_error);
        net.checked += r.checked;
        net.skipped_kinks += r.skipped_kinks;
    }
    report.entries.push_back(net);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace rsen
