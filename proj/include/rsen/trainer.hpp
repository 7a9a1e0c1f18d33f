#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace rsen {

/// L = sum (B_hat - B)^2 / (2 N C H W): the per-image half mean squared
/// error averaged over the batch.
template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Var<T>& target) {
    const Shape& s = prediction.shape();
    if (s != target.shape()) throw DimensionError("mse_loss: " + s.str() + " vs " + target.shape().str());
    const T denom = static_cast<T>(s.numel());
    T acc{0};
    const Tensor<T>& p = prediction.value();
    const Tensor<T>& q = target.value();
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const T d = p[i] - q[i];
        acc += d * d;
    }
    Tensor<T> value(Shape{1, 1, 1, 1}, acc / (T{2} * denom));
    return detail::tape_of(prediction)
        .apply("mse_loss", std::move(value), {prediction, target}, [denom](const Node<T>& self, const Tensor<T>& g) {
            const Tensor<T>& p = self.inputs[0]->value;
            const Tensor<T>& q = self.inputs[1]->value;
            Tensor<T> dp(p.shape()), dq(p.shape());
            const T k = g[0] / denom;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                dp[i] = k * (p[i] - q[i]);
                dq[i] = -dp[i];
            }
            return std::vector<Tensor<T>>{std::move(dp), std::move(dq)};
        });
}

template <typename T>
struct AdamState {
    struct Moments {
        Tensor<T> m;
        Tensor<T> v;
    };

    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::map<std::string, Moments> moments;
};

/// One bias-corrected Adam update of every tensor in `store`. Throws
/// DivergenceError, leaving store and state untouched, if any gradient is
/// non-finite.
template <typename T>
void adam_step(ParameterStore<T>& store, const ParameterStore<T>& grads, AdamState<T>& state, double lr) {
    for (const auto& [name, p] : store) {
        const Tensor<T>& g = grads.at(name);
        if (g.shape() != p.shape()) throw DimensionError("adam_step: gradient dims differ for '" + name + "'");
        if (!g.all_finite()) throw DivergenceError("non-finite gradient for '" + name + "'");
    }
    ++state.step;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (auto& [name, p] : store) {
        const Tensor<T>& g = grads.at(name);
        auto& mom = state.moments[name];
        if (mom.m.shape() != p.shape()) {
            mom.m = Tensor<T>(p.shape());
            mom.v = Tensor<T>(p.shape());
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double m = b1 * static_cast<double>(mom.m[i]) + (1.0 - b1) * gi;
            const double v = b2 * static_cast<double>(mom.v[i]) + (1.0 - b2) * gi * gi;
            mom.m[i] = static_cast<T>(m);
            mom.v[i] = static_cast<T>(v);
            const double update = lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
        }
    }
}

struct TrainConfig {
    std::size_t batch_size = 4;
    std::size_t patch_size = 256;
    std::size_t epochs = 700;
    double lr0 = 1e-4;
    std::size_t lr_halve_every = 150;
    std::uint64_t seed = 0;
    /// Write a checkpoint every this many epochs (and at the end); 0 = only at the end.
    std::size_t checkpoint_every = 50;
    /// Held-out PSNR every this many epochs; 0 disables it.
    std::size_t validate_every = 1;
    /// Stop after this many optimiser steps in total; 0 = no cap.
    std::size_t max_iterations = 0;
    InitMode init = InitMode::Glorot;

    void validate() const {
        if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
        if (patch_size == 0 || patch_size % kSpatialMultiple != 0) {
            throw ConfigError("train.patch_size must be a positive multiple of 4");
        }
        if (epochs == 0) throw ConfigError("train.epochs must be positive");
        if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
        if (lr_halve_every == 0) throw ConfigError("train.lr_halve_every must be positive");
    }
};

inline const std::vector<std::string>& train_keys() {
    static const std::vector<std::string> keys{
        "train.batch_size",       "train.patch_size",     "train.epochs",         "train.lr0",
        "train.lr_halve_every",   "train.seed",           "train.checkpoint_every", "train.validate_every",
        "train.max_iterations",   "train.init",           "train.data_dir",       "train.out_dir"};
    return keys;
}

inline TrainConfig train_config_from(const ConfigText& text, TrainConfig cfg = {}) {
    auto size = [](const std::string& v) {
        const long x = parse_int(v);
        if (x < 0) throw ConfigError("must be non-negative");
        return static_cast<std::size_t>(x);
    };
    text.read("train.batch_size", [&](const std::string& v) { cfg.batch_size = size(v); });
    text.read("train.patch_size", [&](const std::string& v) { cfg.patch_size = size(v); });
    text.read("train.epochs", [&](const std::string& v) { cfg.epochs = size(v); });
    text.read("train.lr0", [&](const std::string& v) { cfg.lr0 = parse_double(v); });
    text.read("train.lr_halve_every", [&](const std::string& v) { cfg.lr_halve_every = size(v); });
    text.read("train.seed", [&](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(size(v)); });
    text.read("train.checkpoint_every", [&](const std::string& v) { cfg.checkpoint_every = size(v); });
    text.read("train.validate_every", [&](const std::string& v) { cfg.validate_every = size(v); });
    text.read("train.max_iterations", [&](const std::string& v) { cfg.max_iterations = size(v); });
    text.read("train.init", [&](const std::string& v) {
        if (v == "glorot") cfg.init = InitMode::Glorot;
        else if (v == "zero") cfg.init = InitMode::Zero;
        else throw ConfigError("expected 'glorot' or 'zero'");
    });
    cfg.validate();
    return cfg;
}

inline void write_train_config(ConfigText& text, const TrainConfig& cfg) {
    text.set("train.batch_size", std::to_string(cfg.batch_size));
    text.set("train.patch_size", std::to_string(cfg.patch_size));
    text.set("train.epochs", std::to_string(cfg.epochs));
    std::ostringstream lr;
    lr << cfg.lr0;
    text.set("train.lr0", lr.str());
    text.set("train.lr_halve_every", std::to_string(cfg.lr_halve_every));
    text.set("train.seed", std::to_string(cfg.seed));
    text.set("train.checkpoint_every", std::to_string(cfg.checkpoint_every));
    text.set("train.validate_every", std::to_string(cfg.validate_every));
    text.set("train.max_iterations", std::to_string(cfg.max_iterations));
    text.set("train.init", cfg.init == InitMode::Zero ? "zero" : "glorot");
}

/// lr0 * 0.5^floor(epoch / lr_halve_every)
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(0.5, static_cast<double>(epoch / cfg.lr_halve_every));
}

/// Uniform integer in [0, n) by rejection sampling on raw 64-bit draws.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return static_cast<std::size_t>(draw % bound);
}

struct PatchPair {
    Tensor<float> rainy;
    Tensor<float> clean;
    std::size_t top = 0;
    std::size_t left = 0;
};

/// The same uniformly placed size x size window cut from both images.
inline PatchPair sample_patch(const ImagePair& pair, std::size_t size, std::mt19937_64& rng) {
    const Shape& s = pair.rainy.shape();
    if (s != pair.clean.shape()) throw DimensionError("sample_patch: pair dims differ");
    if (s.h < size || s.w < size) {
        throw DimensionError("sample_patch: image " + s.str() + " is smaller than patch " + std::to_string(size));
    }
    PatchPair out;
    out.top = uniform_index(rng, s.h - size + 1);
    out.left = uniform_index(rng, s.w - size + 1);
    out.rainy = kernels::crop(pair.rainy, out.top, out.left, size, size);
    out.clean = kernels::crop(pair.clean, out.top, out.left, size, size);
    return out;
}

struct TrainLogRow {
    std::size_t epoch = 0;
    std::size_t iteration = 0;
    double lr = 0.0;
    double loss = 0.0;
    double val_psnr = std::numeric_limits<double>::quiet_NaN();
};

inline std::string log_csv_header() { return "epoch,iter,lr,loss,val_psnr"; }

inline std::string log_csv_row(const TrainLogRow& r) {
    std::ostringstream out;
    out.precision(10);
    out << r.epoch << ',' << r.iteration << ',' << r.lr << ',' << r.loss << ',';
    if (std::isnan(r.val_psnr)) out << "nan"; else out << r.val_psnr;
    return out.str();
}

struct TrainOptions {
    /// Resume from these parameters instead of initialising.
    std::optional<ParameterStore<float>> initial;
    std::size_t start_epoch = 0;
    std::size_t start_iteration = 0;
    /// Checkpoint destination; empty disables checkpointing.
    std::filesystem::path checkpoint_path;
    std::function<void(const TrainLogRow&)> on_log;
};

struct TrainResult {
    ParameterStore<float> params;
    std::vector<TrainLogRow> log;
    std::size_t epochs_completed = 0;
    std::size_t iterations = 0;
};

/// Mean loss of the current parameters on whole images, no gradients.
inline double dataset_loss(const ParameterStore<float>& params, const std::vector<ImagePair>& pairs,
                           const ModelConfig& cfg) {
    double total = 0.0;
    for (const auto& p : pairs) {
        Tape<float> tape(false);
        auto out = derain(params, p.rainy, cfg);
        total += static_cast<double>(
            mse_loss(tape.constant(std::move(out.derained)), tape.constant(p.clean)).value().item());
    }
    return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

/// Patch-based training with Adam and a step-halving learning rate.
///
/// One epoch visits every pair once in a seeded random order, one random
/// patch per pair, `batch_size` patches per optimiser step. Patches larger
/// than the smallest image shrink to that image's size (rounded down to a
/// multiple of 4). The monitoring pair is the last pair in id order.
inline TrainResult train(const std::vector<ImagePair>& dataset, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, TrainOptions options = {}) {
    model_cfg.validate();
    train_cfg.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");

    std::size_t patch = train_cfg.patch_size;
    for (const auto& p : dataset) {
        if (p.rainy.shape() != p.clean.shape() || p.rainy.shape().c != 3 || p.rainy.shape().n != 1) {
            throw DimensionError("train: pair '" + p.id + "' is not an aligned (1, 3, h, w) pair");
        }
        patch = std::min({patch, p.rainy.shape().h, p.rainy.shape().w});
    }
    patch -= patch % kSpatialMultiple;
    if (patch == 0) throw DimensionError("train: images are smaller than 4 pixels");

    TrainResult result;
    result.params = options.initial ? std::move(*options.initial)
                                    : init_params<float>(model_cfg, train_cfg.seed, train_cfg.init);
    validate_store(result.params, model_cfg);

    const ImagePair& monitor = *std::max_element(dataset.begin(), dataset.end(),
                                                 [](const ImagePair& a, const ImagePair& b) { return a.id < b.id; });
    // Offset the stream by the starting epoch so resumed runs do not replay patches.
    std::mt19937_64 rng(train_cfg.seed * 0x9E3779B97F4A7C15ULL + options.start_epoch + 1);
    AdamState<float> adam;
    std::size_t iteration = options.start_iteration;
    std::size_t epoch = options.start_epoch;

    auto write_checkpoint = [&](std::size_t epochs_done) {
        if (!options.checkpoint_path.empty()) {
            save_checkpoint(options.checkpoint_path, result.params, model_cfg, epochs_done, iteration);
        }
    };

    bool capped = false;
    for (; epoch < train_cfg.epochs && !capped; ++epoch) {
        const double lr = lr_schedule(epoch, train_cfg);
        std::vector<std::size_t> order(dataset.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            if (train_cfg.max_iterations != 0 && iteration >= train_cfg.max_iterations) {
                capped = true;
                break;
            }
            const std::size_t count = std::min(train_cfg.batch_size, order.size() - start);
            Tensor<float> rainy(Shape{count, 3, patch, patch}), clean(Shape{count, 3, patch, patch});
            for (std::size_t b = 0; b < count; ++b) {
                const PatchPair pp = sample_patch(dataset[order[start + b]], patch, rng);
                std::copy(pp.rainy.data().begin(), pp.rainy.data().end(), rainy.plane(b, 0));
                std::copy(pp.clean.data().begin(), pp.clean.data().end(), clean.plane(b, 0));
            }
            Tape<float> tape;
            const VarMap<float> vars = attach(tape, result.params);
            auto out = forward(tape, vars, tape.constant(std::move(rainy)), model_cfg);
            Var<float> loss = mse_loss(out.derained, tape.constant(std::move(clean)));
            const double loss_value = static_cast<double>(loss.value().item());
            if (!std::isfinite(loss_value)) {
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", iteration " +
                                      std::to_string(iteration) + "; last checkpoint kept");
            }
            tape.backward(loss);
            ParameterStore<float> grads;
            for (const auto& [name, v] : vars) grads.insert(name, v.grad());
            adam_step(result.params, grads, adam, lr);
            loss_sum += loss_value;
            ++steps;
            ++iteration;
        }
        if (steps == 0) break;

        TrainLogRow row;
        row.epoch = epoch;
        row.iteration = iteration;
        row.lr = lr;
        row.loss = loss_sum / static_cast<double>(steps);
        const bool last = epoch + 1 == train_cfg.epochs || capped ||
                          (train_cfg.max_iterations != 0 && iteration >= train_cfg.max_iterations);
        if (train_cfg.validate_every != 0 && ((epoch + 1) % train_cfg.validate_every == 0 || last)) {
            auto restored = derain(result.params, monitor.rainy, model_cfg);
            row.val_psnr = psnr(quantize_8bit(restored.derained), monitor.clean);
        }
        result.log.push_back(row);
        if (options.on_log) options.on_log(row);
        result.epochs_completed = epoch + 1;
        if (train_cfg.checkpoint_every != 0 && (epoch + 1) % train_cfg.checkpoint_every == 0 && !last) {
            write_checkpoint(epoch + 1);
        }
    }
    result.iterations = iteration;
    if (result.epochs_completed < options.start_epoch) result.epochs_completed = options.start_epoch;
    write_checkpoint(result.epochs_completed);
    return result;
}

} // namespace rsen
