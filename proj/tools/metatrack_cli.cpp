// Command-line front end: data generation, offline meta-training, tracking,
// evaluation and optimizer comparisons, all driven by one config vocabulary.
// Every run writes a manifest (the fully resolved config plus the command
// line) that `rerun` can replay to reproduce the outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metatrack/meta_train.hpp"
#include "metatrack/metrics.hpp"

namespace fs = std::filesystem;
using namespace metatrack;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;       // --set key=value, applied in order
    std::vector<std::string> flag_sets;  // path/number sugar, applied after --set
};

// Path and count flags are sugar for --set; they win over --set and the file.
void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_file, "config file of key = value lines");
    sub->add_option("--set", args.sets, "override one config key, e.g. --set tau=5")
        ->take_all();
    auto sugar = [&args, sub](const char* flag, const char* key, const char* desc) {
        sub->add_option_function<std::string>(
            flag,
            [key, &args](const std::string& v) {
                args.flag_sets.push_back(std::string(key) + "=" + v);
            },
            desc);
    };
    sugar("--out", "out_dir", "directory for results and the manifest");
    sugar("--data", "data_dir", "directory holding generated sequences");
    sugar("--checkpoint", "checkpoint_path", "trained parameter file");
    sugar("--sequence", "sequence_dir", "one sequence directory (img/ + groundtruth.txt)");
    sugar("--pred", "pred_path", "predicted-box CSV path");
    sugar("--seed", "seed", "base random seed");
    sugar("--sequences", "sequences", "how many sequences to generate or compare over");
    sugar("--iterations", "iterations", "outer training iterations");
}

Config resolve(const CommonArgs& args, const std::string& mode) {
    Config cfg;
    if (!args.config_file.empty()) cfg = load_config(args.config_file, cfg);
    for (const auto& s : args.sets) apply_assignment(cfg, s);
    for (const auto& s : args.flag_sets) apply_assignment(cfg, s);
    cfg.run_mode = mode;
    validate(cfg);
    return cfg;
}

std::string require_dir(const std::string& value, const char* what, const char* flag) {
    if (value.empty())
        throw std::invalid_argument(std::string(what) + " required (" + flag + ")");
    return value;
}

std::string sequence_dir_name(const std::string& root, int64_t index) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04lld", static_cast<long long>(index + 1));
    return (fs::path(root) / name).string();
}

void write_events_csv(const std::string& path, const std::vector<UpdateEvent>& events) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("events: cannot open " + path + " for writing");
    out << "frame,loss_before,loss_after,short_history\n" << std::setprecision(17);
    for (const UpdateEvent& ev : events)
        out << ev.frame_index << "," << ev.loss_before << "," << ev.loss_after << ","
            << (ev.short_history ? 1 : 0) << "\n";
    if (!out) throw std::runtime_error("events: write failed for " + path);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("metrics: cannot open " + path + " for writing");
    out << "metric,value\n" << std::setprecision(17);
    for (const auto& [name, value] : rows) out << name << "," << value << "\n";
    if (!out) throw std::runtime_error("metrics: write failed for " + path);
}

ModelParameters load_params_for(const Config& cfg) {
    ModelParameters params =
        load_checkpoint(require_dir(cfg.checkpoint_path, "a checkpoint", "--checkpoint"));
    require_compatible(params, cfg);
    return params;
}

// ---- subcommand bodies -----------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::vector<std::string>& argv) {
    const std::string root = require_dir(cfg.data_dir, "a data directory", "--data");
    fs::create_directories(root);
    ClipSource source = synthetic_source(cfg, 2);  // streams 0/1 feed training/eval
    for (int64_t i = 0; i < cfg.sequences; ++i)
        save_sequence(source(i), sequence_dir_name(root, i));
    write_manifest((fs::path(root) / "manifest.txt").string(), cfg, argv);
    std::cout << "wrote " << cfg.sequences << " sequences of " << cfg.clip_length
              << " frames under " << root << "\n";
    return 0;
}

int cmd_meta_train(const Config& cfg, const std::vector<std::string>& argv) {
    const std::string out = require_dir(cfg.out_dir, "an output directory", "--out");
    fs::create_directories(out);
    ModelParameters init;
    if (!cfg.checkpoint_path.empty()) {
        init = load_params_for(cfg);  // warm start
    } else {
        Rng rng(cfg.seed);
        init = init_parameters(cfg, rng);
    }
    MetaTrainResult result =
        run_meta_training(synthetic_source(cfg, 0), cfg, init,
                          (fs::path(out) / "training_log.csv").string(), out);
    save_checkpoint((fs::path(out) / "final.mtck").string(), result.params);
    write_manifest((fs::path(out) / "manifest.txt").string(), cfg, argv);
    if (!result.log.empty())
        std::cout << "trained " << result.log.size() << " iterations, objective "
                  << result.log.front().meta_loss << " -> " << result.log.back().meta_loss
                  << "\n";
    std::cout << "final parameters: " << (fs::path(out) / "final.mtck").string() << "\n";
    return 0;
}

int cmd_track(const Config& cfg, const std::vector<std::string>& argv) {
    const std::string out = require_dir(cfg.out_dir, "an output directory", "--out");
    fs::create_directories(out);
    ModelParameters params = load_params_for(cfg);
    Sequence seq =
        load_sequence(require_dir(cfg.sequence_dir, "a sequence directory", "--sequence"));
    FeatureExtractor fx(cfg.feature_seed, cfg.feat_channels);
    TrackerOptions options;
    options.steps = cfg.update_steps;
    RunRecord rec = run_tracker(seq, cfg, params, fx, options);

    const std::string pred = cfg.pred_path.empty()
                                 ? (fs::path(out) / "predictions.csv").string()
                                 : cfg.pred_path;
    write_boxes_csv(pred, rec.predictions);
    write_events_csv((fs::path(out) / "events.csv").string(), rec.events);
    write_manifest((fs::path(out) / "manifest.txt").string(), cfg, argv);

    std::cout << "tracked " << seq.frames.size() << " frames, mean overlap "
              << mean_of(iou_series(rec)) << (rec.diverged ? " (diverged)" : "") << "\n";
    std::cout << "predictions: " << pred << "\n";
    return 0;
}

int cmd_eval(const Config& cfg, const std::vector<std::string>& argv) {
    const std::string out = require_dir(cfg.out_dir, "an output directory", "--out");
    fs::create_directories(out);
    RunRecord rec;
    rec.ground_truth =
        load_ground_truth(require_dir(cfg.sequence_dir, "a sequence directory", "--sequence"));
    rec.predictions =
        read_boxes_csv(require_dir(cfg.pred_path, "a prediction file", "--pred"));
    if (rec.predictions.size() != rec.ground_truth.size())
        throw std::runtime_error("eval: " + std::to_string(rec.predictions.size()) +
                                 " predictions vs " + std::to_string(rec.ground_truth.size()) +
                                 " ground-truth boxes");

    const std::vector<double> ious = iou_series(rec);
    const std::vector<double> errors = center_error_series(rec);
    std::vector<std::pair<std::string, double>> rows = {
        {"frames", static_cast<double>(rec.predictions.size())},
        {"mean_iou", mean_of(ious)},
        {"success_auc", success_auc(ious)},
        {"precision_20", precision_at(errors)},
    };
    write_metrics_csv((fs::path(out) / "metrics.csv").string(), rows);
    write_manifest((fs::path(out) / "manifest.txt").string(), cfg, argv);
    for (const auto& [name, value] : rows) std::cout << name << " " << value << "\n";
    return 0;
}

int cmd_compare(const Config& cfg, const std::vector<std::string>& argv) {
    const std::string out = require_dir(cfg.out_dir, "an output directory", "--out");
    fs::create_directories(out);
    ModelParameters params = load_params_for(cfg);
    const std::vector<int64_t> budgets = parse_budget_list(cfg.compare_budgets);

    ClipSource suite_source = synthetic_source(cfg, 3);
    std::vector<Sequence> suite;
    for (int64_t i = 0; i < cfg.sequences; ++i) suite.push_back(suite_source(i));

    std::vector<CompareArm> arms(2);
    arms[0].name = "learned";
    arms[0].options.learned_rates = true;
    arms[1].name = "sgd";
    arms[1].options.learned_rates = false;
    arms[1].options.fixed_rate = cfg.sgd_rate;

    std::vector<CompareRow> rows = compare_optimizers(suite, cfg, params, arms, budgets);
    if (cfg.meta_clips > 0) {
        ClipSource held = synthetic_source(cfg, 1);
        rows.push_back(CompareRow{"learned", 0, "meta_loss",
                                  eval_meta_loss(held, cfg.meta_clips, cfg, params)});
        rows.push_back(CompareRow{"sgd", 0, "meta_loss",
                                  eval_meta_loss(held, cfg.meta_clips, cfg, params,
                                                 &cfg.sgd_rate)});
    }
    write_compare_csv((fs::path(out) / "compare.csv").string(), rows);
    write_manifest((fs::path(out) / "manifest.txt").string(), cfg, argv);
    std::cout << "compared " << arms.size() << " arms at " << budgets.size()
              << " step budgets over " << suite.size() << " sequences\n";
    std::cout << "rows: " << (fs::path(out) / "compare.csv").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> argv_rec(argv, argv + argc);

    CLI::App app{"resizable tracking models fitted online by a meta-trained rate predictor"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, track_args, eval_args, compare_args;
    std::string manifest_path;

    CLI::App* gen = app.add_subcommand("gen-data", "render synthetic sequences to disk");
    add_common(gen, gen_args);
    CLI::App* train = app.add_subcommand("meta-train", "train the model init and rate predictor");
    add_common(train, train_args);
    CLI::App* track = app.add_subcommand("track", "run the tracker over one sequence");
    add_common(track, track_args);
    CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth");
    add_common(eval, eval_args);
    CLI::App* compare =
        app.add_subcommand("compare", "learned rates vs fixed-rate descent at step budgets");
    add_common(compare, compare_args);
    auto compare_sugar = [&compare_args, compare](const char* flag, const char* key,
                                                  const char* desc) {
        compare->add_option_function<std::string>(
            flag,
            [key, &compare_args](const std::string& v) {
                compare_args.flag_sets.push_back(std::string(key) + "=" + v);
            },
            desc);
    };
    compare_sugar("--budgets", "compare_budgets",
                  "comma-separated update-step budgets to sweep, e.g. 1,2,4");
    compare_sugar("--sgd-rate", "sgd_rate", "fixed rate for the baseline arm");
    compare_sugar("--meta-clips", "meta_clips",
                  "also report the unrolled objective over this many held-out clips");
    CLI::App* rerun = app.add_subcommand("rerun", "replay a recorded manifest");
    rerun->add_option("--manifest", manifest_path, "manifest file from a previous run")
        ->required();

    try {
        app.parse(argc, argv);

        if (gen->parsed()) return cmd_gen_data(resolve(gen_args, "gen-data"), argv_rec);
        if (train->parsed()) return cmd_meta_train(resolve(train_args, "meta-train"), argv_rec);
        if (track->parsed()) return cmd_track(resolve(track_args, "track"), argv_rec);
        if (eval->parsed()) return cmd_eval(resolve(eval_args, "eval"), argv_rec);
        if (compare->parsed()) return cmd_compare(resolve(compare_args, "compare"), argv_rec);
        if (rerun->parsed()) {
            Config cfg = load_config(manifest_path);
            validate(cfg);
            if (cfg.run_mode == "gen-data") return cmd_gen_data(cfg, argv_rec);
            if (cfg.run_mode == "meta-train") return cmd_meta_train(cfg, argv_rec);
            if (cfg.run_mode == "track") return cmd_track(cfg, argv_rec);
            if (cfg.run_mode == "eval") return cmd_eval(cfg, argv_rec);
            if (cfg.run_mode == "compare") return cmd_compare(cfg, argv_rec);
            throw std::invalid_argument("rerun: manifest records no run mode");
        }
        return 2;  // unreachable: a subcommand is required
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // --help exits cleanly; bad usage is a usage error
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
