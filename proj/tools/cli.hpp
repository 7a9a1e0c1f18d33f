#pragma once

// Command-line front end: train, derain, eval, bench, gradcheck, synth.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error,
// 3 checkpoint error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <rsen/rsen.hpp>

namespace rsen::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kCheckpoint = 3 };

namespace fs = std::filesystem;

struct TrainArgs {
    std::string config;
    std::string resume;
};

struct DerainArgs {
    std::string input;
    std::string weights;
    std::string output;
    std::string dump_streaks;
    std::string config;
};

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string csv;
};

struct BenchArgs {
    std::string weights;
    std::string scale = "1";
    std::uint64_t seed = 0;
    std::size_t size = 512;
    std::size_t repeats = 5;
    std::size_t warmup = 1;
};

struct GradcheckArgs {
    std::string scale = "1/4";
    std::size_t size = 16;
    std::uint64_t seed = 0;
    std::size_t probes = 4;
    std::string corrupt;
};

struct SynthArgs {
    std::string clean;
    std::size_t procedural = 0;
    std::size_t size = 64;
    std::string out;
    std::string config;
    std::optional<int> count;
    std::optional<double> angle, length, width, intensity;
    std::optional<std::uint64_t> seed;
};

/// Reads a config file and rejects keys outside the given sections.
inline ConfigText load_config(const std::string& path, const std::vector<std::string>& sections) {
    ConfigText text = ConfigText::load(path);
    std::vector<std::string> known;
    auto append = [&](const std::vector<std::string>& keys) { known.insert(known.end(), keys.begin(), keys.end()); };
    std::vector<std::string> ignored;
    for (const std::string prefix : {"model", "train", "rain"}) {
        if (std::find(sections.begin(), sections.end(), prefix) == sections.end()) {
            ignored.push_back(prefix + ".");
        } else if (prefix == "model") {
            append(model_keys());
        } else if (prefix == "train") {
            append(train_keys());
        } else {
            append(rain_keys());
        }
    }
    text.reject_unknown(known, ignored);
    return text;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out) {
    const ConfigText text = load_config(args.config, {"model", "train"});
    const ModelConfig model = model_config_from(text);
    const TrainConfig train_cfg = train_config_from(text);
    if (!text.has("train.data_dir")) throw ConfigError("config key 'train.data_dir' is required");
    const fs::path data_dir = text.get("train.data_dir");
    const fs::path out_dir = text.has("train.out_dir") ? fs::path(text.get("train.out_dir")) : fs::path("rsen_out");

    const auto pairs = load_pair_dir(data_dir);
    if (pairs.empty()) throw IoError("dataset directory '" + data_dir.string() + "' contains no image pairs");
    fs::create_directories(out_dir);

    TrainOptions options;
    options.checkpoint_path = out_dir / "model.rsen";
    if (!args.resume.empty()) {
        Checkpoint ckpt = load_checkpoint(args.resume, model);
        options.initial = std::move(ckpt.params);
        options.start_epoch = ckpt.epoch;
        options.start_iteration = ckpt.iteration;
        out << "resuming from " << args.resume << " at epoch " << ckpt.epoch << ", iteration " << ckpt.iteration
            << '\n';
    }

    // Resolved configuration, every default made explicit.
    ConfigText resolved;
    write_model_config(resolved, model);
    write_train_config(resolved, train_cfg);
    resolved.set("train.data_dir", data_dir.string());
    resolved.set("train.out_dir", out_dir.string());

    const fs::path log_path = out_dir / "train_log.csv";
    const bool append = !args.resume.empty() && fs::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write '" + log_path.string() + "'");
    if (!append) {
        std::istringstream lines(resolved.str());
        for (std::string line; std::getline(lines, line);) log << "# " << line << '\n';
        log << log_csv_header() << '\n';
    }
    out << resolved.str();
    out << "training on " << pairs.size() << " pair(s); parameters " << param_count(model) << '\n';
    options.on_log = [&](const TrainLogRow& row) {
        log << log_csv_row(row) << '\n';
        log.flush();
        out << log_csv_row(row) << '\n';
    };
    const TrainResult result = train(pairs, model, train_cfg, options);
    out << "finished at epoch " << result.epochs_completed << ", iteration " << result.iterations << "; checkpoint "
        << options.checkpoint_path.string() << '\n';
    return kOk;
}

inline int cmd_derain(const DerainArgs& args, std::ostream& out) {
    const Tensor<float> input = read_png(args.input);
    const Checkpoint ckpt = args.config.empty()
                                ? load_checkpoint(args.weights)
                                : load_checkpoint(args.weights, model_config_from(load_config(args.config, {"model"})));
    const auto result = derain(ckpt.params, input, ckpt.config);
    if (fs::path(args.output).has_parent_path()) fs::create_directories(fs::path(args.output).parent_path());
    write_png(args.output, result.derained);
    if (!args.dump_streaks.empty()) {
        // Rescale the rain layer to [0, 1] for viewing.
        Tensor<float> r = result.rain;
        float lo = r[0], hi = r[0];
        for (float v : r.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (auto& v : r.data()) v = hi > lo ? (v - lo) / (hi - lo) : 0.0f;
        write_png(args.dump_streaks, r);
    }
    out << "wrote " << args.output << " (" << input.shape().h << "x" << input.shape().w << ")\n";
    return kOk;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    const EvalReport report = eval_dir(args.pred, args.gt);
    for (const auto& w : report.warnings) err << "warning: " << w << '\n';
    if (!args.csv.empty()) {
        std::ofstream f(args.csv);
        if (!f) throw IoError("cannot write '" + args.csv + "'");
        f << report.csv();
    } else {
        out << report.csv();
    }
    out << report.summary() << '\n';
    return kOk;
}

inline int cmd_bench(const BenchArgs& args, std::ostream& out) {
    ModelConfig cfg;
    ParameterStore<float> params;
    if (!args.weights.empty()) {
        Checkpoint ckpt = load_checkpoint(args.weights);
        cfg = ckpt.config;
        params = std::move(ckpt.params);
    } else {
        cfg.channel_scale = Ratio::parse(args.scale);
        params = init_params<float>(cfg, args.seed);
    }
    const BenchResult r = bench_forward(params, cfg, args.size, args.repeats, args.warmup);
    out << r.csv();
    return kOk;
}

inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
    GradCheckSuiteOptions opt;
    opt.model = ModelConfig{};
    opt.model.channel_scale = Ratio::parse(args.scale);
    opt.model.validate();
    opt.size = args.size;
    opt.seed = args.seed;
    opt.probes_per_tensor = args.probes;
    if (opt.size == 0 || opt.size % kSpatialMultiple != 0) {
        throw ConfigError("gradcheck size must be a positive multiple of 4");
    }
    hooks::corrupted_gradient_rule() = args.corrupt;
    GradCheckReport report;
    try {
        report = run_gradcheck_suite(opt);
    } catch (...) {
        hooks::corrupted_gradient_rule().clear();
        throw;
    }
    hooks::corrupted_gradient_rule().clear();

    out << "op,max_rel_error,checked,skipped_kinks\n";
    std::vector<std::string> failed;
    for (const auto& e : report.entries) {
        out << e.name << ',' << e.max_rel_error << ',' << e.checked << ',' << e.skipped_kinks << '\n';
        if (!(e.max_rel_error < report.tolerance) || e.checked == 0) failed.push_back(e.name);
    }
    out << "worst " << report.worst() << " (tolerance " << report.tolerance << ") in " << report.seconds << " s\n";
    if (!failed.empty()) {
        for (const auto& name : failed) err << "gradcheck failed: " << name << '\n';
        return kVerifyFailed;
    }
    out << "gradcheck passed\n";
    return kOk;
}

inline int cmd_synth(const SynthArgs& args, std::ostream& out) {
    StreakParams base;
    if (!args.config.empty()) base = streak_params_from(load_config(args.config, {"rain"}));
    if (args.count) base.count = *args.count;
    if (args.angle) base.angle = *args.angle;
    if (args.length) base.length = *args.length;
    if (args.width) base.width = *args.width;
    if (args.intensity) base.intensity = *args.intensity;
    if (args.seed) base.seed = *args.seed;
    base.validate();

    std::vector<std::pair<std::string, Tensor<float>>> backgrounds;
    if (!args.clean.empty()) {
        if (!fs::is_directory(args.clean)) throw IoError("clean directory '" + args.clean + "' does not exist");
        for (const auto& name : detail::png_names(args.clean)) {
            backgrounds.emplace_back(fs::path(name).stem().string(), read_png((fs::path(args.clean) / name).string()));
        }
    } else {
        for (std::size_t i = 0; i < args.procedural; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "img%04zu", i);
            backgrounds.emplace_back(id, procedural_background(args.size, args.size, base.seed + i));
        }
    }
    std::vector<ImagePair> pairs;
    for (std::size_t i = 0; i < backgrounds.size(); ++i) {
        StreakParams p = base;
        p.seed = base.seed + i;
        pairs.push_back(synthesize_rain(backgrounds[i].second, p, backgrounds[i].first));
    }
    write_pair_dir(args.out, pairs);
    out << "wrote " << pairs.size() << " pair(s) to " << args.out << '\n';
    return kOk;
}

/// Parses argv and runs one subcommand. Never throws.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"RSEN single-image rain removal", "rsen"};
    app.require_subcommand(1);
    app.fallthrough(false);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model from a config file");
    train->add_option("--config", train_args.config, "Config file with model.* and train.* keys")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--resume", train_args.resume, "Checkpoint to resume from");

    DerainArgs derain_args;
    auto* derain_cmd = app.add_subcommand("derain", "Remove rain from one PNG image");
    derain_cmd->add_option("--input", derain_args.input, "Rainy 8-bit RGB PNG")->required();
    derain_cmd->add_option("--weights", derain_args.weights, "Checkpoint file")->required();
    derain_cmd->add_option("--output", derain_args.output, "Derained PNG to write")->required();
    derain_cmd->add_option("--dump-streaks", derain_args.dump_streaks, "Also write the predicted rain layer, rescaled");
    derain_cmd->add_option("--config", derain_args.config, "Expected model.* configuration to validate against");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
    eval->add_option("--pred", eval_args.pred, "Directory of predicted PNGs")->required();
    eval->add_option("--gt", eval_args.gt, "Directory of ground-truth PNGs")->required();
    eval->add_option("--csv", eval_args.csv, "Write the per-image report here instead of stdout");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Median forward time per image");
    auto* weights_opt = bench->add_option("--weights", bench_args.weights, "Checkpoint file");
    bench->add_option("--scale", bench_args.scale, "Channel scale for a randomly initialised model")
        ->capture_default_str()
        ->excludes(weights_opt);
    bench->add_option("--seed", bench_args.seed, "Initialisation seed without --weights")->capture_default_str();
    bench->add_option("--size", bench_args.size, "Square image side, a multiple of 4")->capture_default_str();
    bench->add_option("--repeats", bench_args.repeats, "Timed runs")->capture_default_str();
    bench->add_option("--warmup", bench_args.warmup, "Untimed runs first")->capture_default_str();

    GradcheckArgs grad_args;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and the toy network");
    gradcheck->add_option("--scale", grad_args.scale, "Channel scale of the network")->capture_default_str();
    gradcheck->add_option("--size", grad_args.size, "Input side")->capture_default_str();
    gradcheck->add_option("--seed", grad_args.seed, "Random seed")->capture_default_str();
    gradcheck->add_option("--probes", grad_args.probes, "Probed elements per parameter tensor")->capture_default_str();
    gradcheck->add_option("--corrupt", grad_args.corrupt, "Scale the gradient of this op (test hook)")->group("");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Write synthetic rainy/clean pairs");
    auto* clean_opt = synth->add_option("--clean", synth_args.clean, "Directory of clean PNGs");
    auto* proc_opt = synth->add_option("--procedural", synth_args.procedural, "Generate N procedural backgrounds");
    clean_opt->excludes(proc_opt);
    synth->add_option("--size", synth_args.size, "Side of procedural backgrounds")->capture_default_str();
    synth->add_option("--out", synth_args.out, "Output directory (rainy/ and clean/)")->required();
    synth->add_option("--config", synth_args.config, "Config file with rain.* keys")->check(CLI::ExistingFile);
    synth->add_option("--count", synth_args.count, "Streaks per image");
    synth->add_option("--angle", synth_args.angle, "Mean streak angle from vertical, degrees");
    synth->add_option("--length", synth_args.length, "Mean streak length, pixels");
    synth->add_option("--width", synth_args.width, "Streak width, pixels");
    synth->add_option("--intensity", synth_args.intensity, "Streak brightness in [0, 1]");
    synth->add_option("--seed", synth_args.seed, "Rain seed; image i uses seed + i");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(train_args, out);
        if (*derain_cmd) return cmd_derain(derain_args, out);
        if (*eval) return cmd_eval(eval_args, out, err);
        if (*bench) return cmd_bench(bench_args, out);
        if (*gradcheck) return cmd_gradcheck(grad_args, out, err);
        if (*synth) {
            if (synth_args.clean.empty() && synth_args.procedural == 0) {
                throw ConfigError("synth needs --clean DIR or --procedural N");
            }
            return cmd_synth(synth_args, out);
        }
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kCheckpoint;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << '\n';
        return kVerifyFailed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}

} // namespace rsen::cli
