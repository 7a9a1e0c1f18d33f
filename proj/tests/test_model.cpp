#include <random>
#include <set>

#include <gtest/gtest.h>

#include <rsen/model.hpp>
#include <rsen/trainer.hpp>

#include "test_util.hpp"

using namespace rsen;
using rsen::test::normal_tensor;
using rsen::test::random_tensor;

namespace {

ModelConfig toy() { return ModelConfig::desk(); }

ModelConfig ablation(bool skip, bool res, bool se) {
    ModelConfig c = toy();
    c.use_skip = skip;
    c.use_res = res;
    c.use_se = se;
    return c;
}

/// Conv weight and bias for a single-block VarMap.
template <typename T>
void put_conv(Tape<T>& tape, VarMap<T>& m, const std::string& name, Tensor<T> w, Tensor<T> b) {
    m.emplace(name + "/weight", tape.leaf(std::move(w)));
    m.emplace(name + "/bias", tape.leaf(std::move(b)));
}

template <typename T>
VarMap<T> zero_rse(Tape<T>& tape, std::size_t c, std::size_t squeeze = 6) {
    VarMap<T> m;
    put_conv(tape, m, "b/conv1", Tensor<T>({c, c, 3, 3}), Tensor<T>({1, c, 1, 1}));
    put_conv(tape, m, "b/conv2", Tensor<T>({c, c, 3, 3}), Tensor<T>({1, c, 1, 1}));
    put_conv(tape, m, "b/se/squeeze", Tensor<T>({squeeze, c, 1, 1}), Tensor<T>({1, squeeze, 1, 1}));
    put_conv(tape, m, "b/se/excite", Tensor<T>({c, squeeze, 1, 1}), Tensor<T>({1, c, 1, 1}));
    return m;
}

} // namespace

TEST(SeBlock, ZeroParamsHalveInput) {
    std::mt19937_64 rng(1);
    Tape<double> tape;
    const auto m = zero_rse(tape, 8);
    const auto x = random_tensor<double>({2, 8, 5, 5}, rng);
    const auto y = se_block(m, "b/se", tape.constant(x)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.5 * x[i]);
}

TEST(SeBlock, ZeroInputGivesZero) {
    std::mt19937_64 rng(2);
    Tape<double> tape;
    VarMap<double> m;
    put_conv(tape, m, "se/squeeze", normal_tensor<double>({6, 8, 1, 1}, rng, 1), normal_tensor<double>({1, 6, 1, 1}, rng, 1));
    put_conv(tape, m, "se/excite", normal_tensor<double>({8, 6, 1, 1}, rng, 1), normal_tensor<double>({1, 8, 1, 1}, rng, 1));
    const auto y = se_block(m, "se", tape.constant(Tensor<double>({1, 8, 4, 4}))).value();
    EXPECT_EQ(y, Tensor<double>({1, 8, 4, 4}));
}

TEST(SeBlock, GateMonotoneInLogit) {
    // Sweep the excite bias of one channel; its output magnitude must not decrease.
    std::mt19937_64 rng(3);
    const auto x = random_tensor<double>({1, 8, 4, 4}, rng, 0.0, 1.0);
    const auto w1 = normal_tensor<double>({6, 8, 1, 1}, rng, 1);
    const auto b1 = normal_tensor<double>({1, 6, 1, 1}, rng, 1);
    const auto w2 = normal_tensor<double>({8, 6, 1, 1}, rng, 1);
    const auto b2 = normal_tensor<double>({1, 8, 1, 1}, rng, 1);
    for (std::size_t ch = 0; ch < 8; ++ch) {
        double previous = -1.0;
        for (int step = -40; step <= 40; ++step) {
            Tape<double> tape(false);
            VarMap<double> m;
            Tensor<double> bias = b2;
            bias[ch] += 0.25 * step;
            put_conv(tape, m, "se/squeeze", w1, b1);
            put_conv(tape, m, "se/excite", w2, bias);
            const auto y = se_block(m, "se", tape.constant(x)).value();
            double magnitude = 0.0;
            for (std::size_t i = 0; i < 16; ++i) magnitude += std::abs(y.plane(0, ch)[i]);
            EXPECT_GE(magnitude, previous) << "channel " << ch << " step " << step;
            previous = magnitude;
        }
    }
}

TEST(SeBlock, ChannelsBelowSqueezeRejected) {
    ModelConfig c = toy();
    c.base_channels = 4;
    c.channel_scale = Ratio{1, 1};
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(init_params<float>(c, 0), ConfigError);
    c.use_se = false;
    EXPECT_NO_THROW(c.validate());
}

TEST(RseBlock, ZeroBodyWithResidualIsIdentity) {
    std::mt19937_64 rng(4);
    Tape<double> tape;
    const auto m = zero_rse(tape, 8);
    const auto x = random_tensor<double>({1, 8, 6, 7}, rng);
    EXPECT_EQ(rse_block(m, "b", tape.constant(x), ablation(true, true, false)).value(), x);
}

TEST(RseBlock, ZeroBodyWithoutResidualIsBias) {
    std::mt19937_64 rng(5);
    Tape<double> tape;
    auto m = zero_rse(tape, 8);
    const auto x = random_tensor<double>({1, 8, 6, 7}, rng);
    EXPECT_EQ(rse_block(m, "b", tape.constant(x), ablation(true, false, false)).value(), Tensor<double>(x.shape()));
    // A nonzero conv2 bias passes straight through.
    m.erase("b/conv2/bias");
    m.emplace("b/conv2/bias", tape.leaf(Tensor<double>({1, 8, 1, 1}, 0.25)));
    const auto y = rse_block(m, "b", tape.constant(x), ablation(true, false, false)).value();
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.25);
}

TEST(RseBlock, ZeroBodyAndZeroSeHalves) {
    std::mt19937_64 rng(6);
    Tape<double> tape;
    const auto m = zero_rse(tape, 8);
    const auto x = random_tensor<double>({1, 8, 6, 7}, rng);
    const auto y = rse_block(m, "b", tape.constant(x), ablation(true, true, true)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.5 * x[i]);
}

TEST(Forward, ZeroParamsIsIdentityInBothPrecisions) {
    std::mt19937_64 rng(7);
    ModelConfig cfg = ablation(true, true, false);
    const auto xd = random_tensor<double>({2, 3, 20, 24}, rng, 0.0, 1.0);
    const auto rd = derain(init_params<double>(cfg, 0, InitMode::Zero), xd, cfg);
    EXPECT_EQ(rd.derained, xd);
    EXPECT_EQ(rd.rain, Tensor<double>(xd.shape()));
    const auto xf = xd.cast<float>();
    EXPECT_EQ(derain(init_params<float>(cfg, 0, InitMode::Zero), xf, cfg).derained, xf);
}

TEST(Forward, ZeroParamsIdentityOnArbitraryDims) {
    // Property: for random dims (including non-multiples of 4) B = I exactly.
    std::mt19937_64 rng(8);
    const ModelConfig cfg = ablation(true, true, false);
    const auto params = init_params<float>(cfg, 0, InitMode::Zero);
    std::uniform_int_distribution<std::size_t> dim(1, 40);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor<float>({1, 3, dim(rng), dim(rng)}, rng, 0.0, 1.0);
        EXPECT_EQ(derain(params, x, cfg).derained, x) << x.shape().str();
    }
}

TEST(Forward, ShapeContract64) {
    const auto params = init_params<float>(toy(), 1);
    const Tensor<float> x({1, 3, 64, 64}, 0.5f);
    const auto out = derain(params, x, toy());
    EXPECT_EQ(out.derained.shape(), x.shape());
    EXPECT_EQ(out.rain.shape(), x.shape());
}

TEST(Forward, PadAndCropFor50x37) {
    std::mt19937_64 rng(9);
    const auto params = init_params<float>(toy(), 1);
    const auto x = random_tensor<float>({1, 3, 50, 37}, rng, 0.0, 1.0);
    const auto out = derain(params, x, toy());
    EXPECT_EQ(out.derained.shape(), (Shape{1, 3, 50, 37}));
    // The output region must match the padded run cropped back.
    const auto padded = kernels::reflect_pad(x, 2, 3);
    const auto full = derain(params, padded, toy());
    EXPECT_EQ(out.rain, kernels::crop(full.rain, 0, 0, 50, 37));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(out.derained[i], x[i] - out.rain[i]);
}

TEST(Forward, ShapeSweep8To97) {
    std::mt19937_64 rng(10);
    ModelConfig cfg = toy();
    cfg.base_channels = 24; // width 6, the smallest SE-compatible width
    const auto params = init_params<float>(cfg, 2);
    std::uniform_int_distribution<std::size_t> dim(8, 97);
    for (int trial = 0; trial < 25; ++trial) {
        const Shape s{1, 3, dim(rng), dim(rng)};
        const auto out = derain(params, Tensor<float>(s, 0.3f), cfg);
        EXPECT_EQ(out.derained.shape(), s);
        EXPECT_TRUE(out.derained.all_finite());
    }
    for (std::size_t h : {8u, 97u}) {
        for (std::size_t w : {8u, 97u}) {
            EXPECT_EQ(derain(params, Tensor<float>({1, 3, h, w}, 0.3f), cfg).rain.shape(), (Shape{1, 3, h, w}));
        }
    }
}

TEST(Forward, RejectsWrongChannelCount) {
    const auto params = init_params<float>(toy(), 1);
    EXPECT_THROW(derain(params, Tensor<float>({1, 4, 8, 8}), toy()), DimensionError);
}

TEST(Forward, DeterministicAcrossRuns) {
    std::mt19937_64 rng(11);
    const auto x = random_tensor<float>({2, 3, 32, 28}, rng, 0.0, 1.0);
    const auto a = derain(init_params<float>(toy(), 5), x, toy());
    const auto b = derain(init_params<float>(toy(), 5), x, toy());
    EXPECT_EQ(a.rain, b.rain);
}

TEST(Forward, BatchSamplesAreIndependent) {
    std::mt19937_64 rng(12);
    const auto params = init_params<double>(toy(), 6);
    const auto x = random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
    const auto both = derain(params, x, toy()).rain;
    const auto first = derain(params, kernels::crop(x, 0, 0, 16, 16), toy()).rain;
    Tensor<double> single({1, 3, 16, 16});
    std::copy_n(x.data().begin() + 768, 768, single.data().begin());
    const auto second = derain(params, single, toy()).rain;
    for (std::size_t i = 0; i < 768; ++i) {
        EXPECT_NEAR(both[i], first[i], 1e-12);
        EXPECT_NEAR(both[768 + i], second[i], 1e-12);
    }
}

TEST(InitParams, SeedDeterminism) {
    EXPECT_EQ(init_params<float>(toy(), 42), init_params<float>(toy(), 42));
    const auto a = init_params<float>(toy(), 42), b = init_params<float>(toy(), 43);
    for (const auto& [name, t] : a) {
        if (name.ends_with("/weight")) EXPECT_NE(t, b.at(name)) << name;
    }
}

TEST(InitParams, GlorotBoundsAndVariance) {
    const auto params = init_params<double>(ModelConfig::full(), 3);
    const auto& w = params.at("encoder/in/rse/conv1/weight");
    ASSERT_EQ(w.shape(), (Shape{64, 64, 3, 3}));
    const double fan = 64 * 9 + 64 * 9;
    const double bound = std::sqrt(6.0 / fan);
    double mean = 0, sq = 0;
    for (double v : w.data()) {
        EXPECT_LE(std::abs(v), bound);
        mean += v;
        sq += v * v;
    }
    const double n = static_cast<double>(w.numel());
    mean /= n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(var, 2.0 / fan, 0.2 * 2.0 / fan);
    for (const auto& [name, t] : params) {
        if (name.ends_with("/bias")) EXPECT_EQ(t, Tensor<double>(t.shape())) << name;
    }
}

TEST(ParamCount, SingleConvArithmetic) {
    // Closed form for one 3->64 3x3 conv with bias, matching the layout entry.
    const auto layout = parameter_layout(ModelConfig::full());
    ASSERT_EQ(layout[0].name, "encoder/in/conv/weight");
    EXPECT_EQ(layout[0].shape.numel() + layout[1].shape.numel(), 3u * 64u * 9u + 64u);
    EXPECT_EQ(layout[0].shape.numel() + layout[1].shape.numel(), 1792u);
}

TEST(ParamCount, MatchesInitForAblations) {
    for (const auto& cfg : {ablation(false, false, false), ablation(true, false, false), ablation(true, true, false),
                            ablation(true, true, true), ModelConfig::full()}) {
        EXPECT_EQ(param_count(cfg), init_params<float>(cfg, 0).total_elements());
    }
}

TEST(ParamCount, FullScaleRegression) {
    // Hand count of the implemented architecture at C = 64:
    //   rse(c) = 2(9c^2 + c) + (6c + 6) + (6c + c) = 18c^2 + 15c + 6
    //   in 1792 + rse(64); e1 73856 + rse(128); e2 295168 + rse(256); 3 rse(256)
    //   d1 rse(256) + 131584; d2 rse(128) + 33024; out rse(64) + 1731; skips 16512 + 4160
    auto rse = [](std::size_t c) { return 18 * c * c + 15 * c + 6; };
    const std::size_t expected = 1792 + 73856 + 295168 + 131584 + 33024 + 1731 + 16512 + 4160 + 2 * rse(64) +
                                 2 * rse(128) + 5 * rse(256);
    EXPECT_EQ(expected, 7218361u);
    EXPECT_EQ(param_count(ModelConfig::full()), expected);
}

TEST(Ablation, StrictlyIncreasingCounts) {
    const auto coarse = param_count(ablation(false, false, false));
    const auto skip = param_count(ablation(true, false, false));
    const auto res = param_count(ablation(true, true, false));
    const auto se = param_count(ablation(true, true, true));
    EXPECT_LT(coarse, skip);
    EXPECT_EQ(skip, res);
    EXPECT_LT(res, se);
}

TEST(Ablation, EveryConfigRunsForwardAndBackward) {
    std::mt19937_64 rng(13);
    const auto x = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
    const auto y = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
    for (const auto& cfg : {ablation(false, false, false), ablation(true, false, false), ablation(true, true, false),
                            ablation(true, true, true)}) {
        Tape<float> tape;
        const auto vars = attach(tape, init_params<float>(cfg, 1));
        auto loss = mse_loss(forward(tape, vars, tape.constant(x), cfg).derained, tape.constant(y));
        tape.backward(loss);
        EXPECT_TRUE(std::isfinite(loss.value().item()));
        for (const auto& [name, v] : vars) EXPECT_EQ(v.grad().shape(), v.shape()) << name;
    }
}

TEST(Gradients, EveryParameterReceivesSignal) {
    // A parameter is live if some element has a nonzero gradient for at least
    // one of a few random batches.
    std::mt19937_64 rng(14);
    const auto params = init_params<double>(toy(), 7);
    std::set<std::string> dead;
    for (const auto& [name, _] : params) dead.insert(name);
    for (int batch = 0; batch < 4 && !dead.empty(); ++batch) {
        const auto x = random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
        const auto y = random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
        Tape<double> tape;
        const auto vars = attach(tape, params);
        tape.backward(mse_loss(forward(tape, vars, tape.constant(x), toy()).derained, tape.constant(y)));
        for (const auto& [name, v] : vars) {
            const Tensor<double> g = v.grad();
            for (double e : g.data()) {
                if (e != 0.0) {
                    dead.erase(name);
                    break;
                }
            }
        }
    }
    EXPECT_TRUE(dead.empty()) << *dead.begin();
}

TEST(ParameterStore, GroupsAndValidation) {
    const auto params = init_params<float>(toy(), 0);
    EXPECT_EQ(params.group("encoder").size() + params.group("bottleneck").size() + params.group("decoder").size(),
              params.size());
    EXPECT_NO_THROW(validate_store(params, toy()));
    ModelConfig other = toy();
    other.use_se = false;
    try {
        validate_store(params, other);
        FAIL() << "expected a name mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::NameMismatch);
    }
    ModelConfig wider = toy();
    wider.channel_scale = Ratio{1, 2};
    try {
        validate_store(params, wider);
        FAIL() << "expected a dims mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::DimsMismatch);
    }
}

TEST(ParameterStore, EveryLayoutEntryIsUsedByForward) {
    // Removing any single parameter must break the forward pass.
    const auto params = init_params<float>(toy(), 0);
    const Tensor<float> x({1, 3, 8, 8}, 0.5f);
    for (const auto& [name, _] : params) {
        Tape<float> tape(false);
        auto vars = attach(tape, params, false);
        vars.erase(name);
        EXPECT_THROW(forward(tape, vars, tape.constant(x), toy()), CheckpointError) << name;
    }
}

TEST(Ratio, Parsing) {
    EXPECT_EQ(Ratio::parse("1/4"), (Ratio{1, 4}));
    EXPECT_EQ(Ratio::parse("0.25"), (Ratio{1, 4}));
    EXPECT_EQ(Ratio::parse("2"), (Ratio{2, 1}));
    EXPECT_EQ(Ratio::parse("2/4").str(), "1/2");
    EXPECT_THROW(Ratio::parse("0"), ConfigError);
    EXPECT_THROW(Ratio::parse("1/x"), ConfigError);
    EXPECT_THROW(Ratio::parse(""), ConfigError);
    ModelConfig c;
    c.channel_scale = Ratio{1, 3};
    EXPECT_THROW(c.validate(), ConfigError);
}
