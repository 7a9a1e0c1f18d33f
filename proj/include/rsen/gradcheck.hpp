#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <type_traits>
#include <vector>

#include "autograd.hpp"

namespace rsen {

struct GradCheckOptions {
    /// Number of elements to probe; 0 probes every element.
    std::size_t max_elements = 0;
    std::uint64_t seed = 0;
};

template <typename T>
struct GradCheckResult {
    T max_rel_error = T{0};
    std::size_t checked = 0;
    /// Elements whose +/- perturbation changed a ReLU activation pattern.
    std::size_t skipped_kinks = 0;
};

/// Compares reverse-mode gradients against central differences.
///
/// `build(tape, leaf)` must construct a scalar graph from `leaf` on `tape`.
/// The relative error per element is |a - n| / max(1e-8, |a| + |n|).
/// Probes whose perturbation flips any ReLU are discarded and replaced.
template <typename T, typename Build>
GradCheckResult<T> finite_diff_check(Build&& build, const Tensor<T>& leaf, T eps, GradCheckOptions options = {}) {
    static_assert(std::is_same_v<T, double>, "finite differences require 64-bit precision");
    if (!(eps > T{0})) throw ContractError("finite_diff_check: epsilon must be positive");

    auto& monitor = hooks::ReluPatternMonitor::current();
    const bool was_active = monitor.active;
    monitor.active = true;

    monitor.reset();
    Tape<T> tape;
    Var<T> var = tape.leaf(leaf);
    Var<T> loss = build(tape, var);
    const std::uint64_t base_pattern = monitor.hash;
    tape.backward(loss);
    const Tensor<T> analytic = var.grad();

    auto evaluate = [&](const Tensor<T>& probe, std::uint64_t& pattern) {
        monitor.reset();
        Tape<T> frozen(false);
        const T value = build(frozen, frozen.leaf(probe)).value().item();
        pattern = monitor.hash;
        return value;
    };

    std::vector<std::size_t> order(leaf.numel());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_elements != 0 && options.max_elements < order.size()) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    const std::size_t target = options.max_elements == 0 ? order.size() : std::min(options.max_elements, order.size());

    GradCheckResult<T> result;
    Tensor<T> probe = leaf;
    for (std::size_t idx : order) {
        if (result.checked >= target) break;
        const T original = probe[idx];
        std::uint64_t plus_pattern = 0, minus_pattern = 0;
        probe[idx] = original + eps;
        const T f_plus = evaluate(probe, plus_pattern);
        probe[idx] = original - eps;
        const T f_minus = evaluate(probe, minus_pattern);
        probe[idx] = original;
        if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
            ++result.skipped_kinks;
            continue;
        }
        const T numeric = (f_plus - f_minus) / (T{2} * eps);
        const T a = analytic[idx];
        const T rel = std::abs(a - numeric) / std::max(T{1e-8}, std::abs(a) + std::abs(numeric));
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.checked;
    }
    monitor.active = was_active;
    return result;
}

} // namespace rsen
