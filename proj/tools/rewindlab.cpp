// rewindlab: magnitude pruning and retraining experiments.
//
//   rewindlab <verb> --config <path-or-preset> [--set k.ey=value]...
//             [--out <dir>] [--seed <u64>] [--deterministic]
//
// Verbs:
//   train-baseline  train the dense network, persist snapshots + final weights
//   prune           load the baseline, write masks and pruned weights per target
//   retrain         load baseline + masks, run the configured retraining strategy
//   experiment      full driver: baseline, prune, retrain, aggregate, emit curve
//   verify          run the built-in oracle suite (exit 1 on any failure)
//
// Exit codes: 0 success, 1 error, 2 experiment finished with per-point failures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rewindlab/config.hpp"
#include "rewindlab/presets.hpp"
#include "rewindlab/verify.hpp"

namespace fs = std::filesystem;
using namespace rewindlab;

namespace {

struct CliArgs {
    std::string verb;
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool deterministic = false;
};

ExperimentConfig load_config(const CliArgs& args) {
    ExperimentConfig cfg = parse_config(args.config, args.overrides);
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.deterministic) cfg.deterministic = true;
    return cfg;
}

void echo_effective_config(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/effective_config.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    os << config_to_json(cfg).dump(2) << "\n";
    std::cout << "effective config -> " << path << "\n";
}

std::string point_tag(double compression) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%.2f", compression);
    return buf;
}

// Shared by the prune and retrain verbs: the same targets the experiment
// driver would use, in ascending compression order.
std::vector<double> config_targets(const ExperimentConfig& cfg) {
    std::vector<double> targets = cfg.compressions;
    for (double s : cfg.sparsities) targets.push_back(1.0 / (1.0 - s));
    std::sort(targets.begin(), targets.end());
    return targets;
}

int cmd_train_baseline(const ExperimentConfig& cfg) {
    echo_effective_config(cfg);
    DataBundle data = load_data(cfg);
    BaselineArtifacts base = train_baseline(cfg, data);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "snapshots");
    for (std::int64_t it : base.store.iterations()) {
        save_checkpoint(base.store.restore(it),
                        (out / "snapshots" / ("iter_" + std::to_string(it) + ".rwlc")).string());
    }
    Checkpoint final_cp;
    final_cp.run_id = cfg.name + "/baseline";
    final_cp.iteration = cfg.schedule.total_iterations;
    for (const auto& name : base.model.weights.order) {
        final_cp.state.insert(name, base.model.weights.at(name));
    }
    save_checkpoint(final_cp, (out / "baseline.rwlc").string());

    nlohmann::ordered_json j;
    j["model"] = cfg.model;
    j["iterations"] = cfg.schedule.total_iterations;
    j["validation_accuracy"] = base.accuracy;
    j["checksum"] = base.checksum;
    j["snapshots"] = base.store.iterations();
    std::ofstream os((out / "baseline.json").string(), std::ios::trunc);
    os << j.dump(2) << "\n";

    std::cout << "baseline " << cfg.model << ": validation accuracy " << base.accuracy << "\n";
    return 0;
}

// Rebuilds the trained-baseline state persisted by cmd_train_baseline.
BaselineArtifacts reload_baseline(const ExperimentConfig& cfg, const DataBundle& data) {
    const fs::path out(cfg.out_dir);
    const std::string final_path = (out / "baseline.rwlc").string();
    if (!fs::exists(final_path)) {
        throw std::runtime_error("no baseline at '" + final_path + "'; run train-baseline first");
    }
    BaselineArtifacts base{Model{}, CheckpointStore(cfg.name + "/baseline")};
    base.model.spec = make_model_spec(cfg.model, data.train.class_count, cfg.bn_decay);
    Checkpoint final_cp = load_checkpoint(final_path);
    base.model.weights = std::move(final_cp.state);
    if (fs::exists(out / "snapshots")) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(out / "snapshots")) {
            if (entry.path().extension() == ".rwlc") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Checkpoint cp = load_checkpoint(f.string());
            if (!base.store.has(cp.iteration)) base.store.store(cp.iteration, cp.state);
        }
    }
    base.accuracy = evaluate(base.model.spec, base.model.weights, data.validation, data.stats);
    base.checksum = state_checksum(base.model.weights);
    return base;
}

int cmd_prune(const ExperimentConfig& cfg) {
    DataBundle data = load_data(cfg);
    BaselineArtifacts base = reload_baseline(cfg, data);
    const fs::path out(cfg.out_dir);

    std::vector<PrunableView> view =
        filter_exempt(prunable_view(base.model.spec, base.model.weights), cfg.prune_exempt);
    std::int64_t kernels = 0;
    for (const auto& p : base.model.spec.params) {
        if (p.prunable) kernels += shape_numel(p.shape);
    }

    int failures = 0;
    for (double c : config_targets(cfg)) {
        try {
            PruneMask mask;
            if (cfg.prune_kind == "structured") {
                mask = prune_structured(view, 1.0 - 1.0 / c);
            } else if (cfg.prune_scope == "per-layer") {
                mask = prune_unstructured(view, 1.0 - 1.0 / c, PruneScope::per_layer);
            } else {
                mask = prune_unstructured_to_count(view, kernels - survivors_for_compression(kernels, c));
            }
            ParamStore pruned = base.model.weights;
            apply_mask(pruned, mask);
            const std::string tag = point_tag(c);
            save_mask(mask, (out / ("mask_" + tag + ".rwlm")).string());
            Checkpoint cp;
            cp.run_id = cfg.name + "/pruned/" + tag;
            cp.iteration = cfg.schedule.total_iterations;
            for (const auto& name : pruned.order) cp.state.insert(name, pruned.at(name));
            save_checkpoint(cp, (out / ("pruned_" + tag + ".rwlc")).string());
            const double acc = evaluate(base.model.spec, pruned, data.validation, data.stats);
            std::cout << "pruned " << tag << ": sparsity " << sparsity_of(mask)
                      << ", accuracy before retraining " << acc << "\n";
        } catch (const std::exception& e) {
            std::cerr << "point c=" << c << " failed: " << e.what() << "\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 2;
}

int cmd_retrain(const ExperimentConfig& cfg) {
    DataBundle data = load_data(cfg);
    BaselineArtifacts base = reload_baseline(cfg, data);
    const fs::path out(cfg.out_dir);

    RetrainEnv env;
    env.train_data = &data.train;
    env.pipeline = &data.pipeline;
    env.loss = cfg.loss_config();
    env.momentum = cfg.momentum;
    env.batch_size = cfg.batch_size;
    env.augment = cfg.augment;

    int failures = 0;
    for (double c : config_targets(cfg)) {
        const std::string tag = point_tag(c);
        try {
            PruneMask mask = load_mask((out / ("mask_" + tag + ".rwlm")).string());
            const std::uint64_t seed =
                mix64(mix64(cfg.seed, mix64(hash_tag("trial"), 0)), mix64(hash_tag(cfg.strategy), 0));
            ParamStore retrained;
            switch (strategy_from_name(cfg.strategy)) {
                case Strategy::finetune:
                    retrained = run_finetune(base.model.spec, env, base.model.weights, mask,
                                             cfg.schedule, cfg.finetune_lr, seed);
                    break;
                case Strategy::weight_rewind:
                    retrained = run_weight_rewind(base.model.spec, env, base.store,
                                                  cfg.resolved_rewind_iteration(), mask,
                                                  cfg.schedule, seed);
                    break;
                case Strategy::lr_rewind:
                    retrained = run_lr_rewind(base.model.spec, env, base.model.weights, mask,
                                              cfg.schedule, seed);
                    break;
            }
            Checkpoint cp;
            cp.run_id = cfg.name + "/retrained/" + cfg.strategy + "/" + tag;
            cp.iteration = cfg.schedule.total_iterations;
            for (const auto& name : retrained.order) cp.state.insert(name, retrained.at(name));
            save_checkpoint(cp, (out / ("retrained_" + cfg.strategy + "_" + tag + ".rwlc")).string());
            const double acc = evaluate(base.model.spec, retrained, data.validation, data.stats);
            std::cout << "retrained " << cfg.strategy << " " << tag << ": accuracy " << acc << "\n";
        } catch (const std::exception& e) {
            std::cerr << "point " << tag << " failed: " << e.what() << "\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 2;
}

int cmd_experiment(const ExperimentConfig& cfg) {
    echo_effective_config(cfg);
    ExperimentResult result = run_experiment(cfg);

    const fs::path out(cfg.out_dir);
    emit_curve(result, (out / "curve.csv").string());
    emit_json(result, (out / "result.json").string());

    std::cout << "baseline accuracy " << result.baseline_accuracy << "\n";
    for (const auto& p : result.summary) {
        std::printf("c=%.2f (s=%.3f): median %.4f, 80%% CI [%.4f, %.4f], %d trial(s)\n",
                    p.compression, p.sparsity, p.median, p.ci_low, p.ci_high, p.trials);
    }
    for (const auto& e : result.errors) {
        std::cerr << "point c=" << e.target_compression << " failed: " << e.message << "\n";
    }
    std::cout << "curve -> " << (out / "curve.csv").string() << "\n";
    return result.errors.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"magnitude pruning with fine-tuning, weight rewinding, and LR rewinding"};
    app.require_subcommand(1);

    CliArgs args;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        sub->add_option("--config", args.config, "config file path or preset name")
            ->required(config_required);
        sub->add_option("--set", args.overrides, "override, e.g. --set optim.l2=2e-4");
        sub->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
        sub->add_option("--seed", args.seed, "experiment seed (overrides config)")
            ->each([&](const std::string&) { args.seed_set = true; });
        sub->add_flag("--deterministic", args.deterministic,
                      "force single-threaded deterministic execution");
    };
    add_common(app.add_subcommand("train-baseline", "train the dense baseline"), true);
    add_common(app.add_subcommand("prune", "prune a trained baseline"), true);
    add_common(app.add_subcommand("retrain", "retrain pruned weights per the configured strategy"),
               true);
    add_common(app.add_subcommand("experiment", "full pruning/retraining experiment"), true);
    add_common(app.add_subcommand("verify", "run the built-in oracle suite"), false);

    CLI11_PARSE(app, argc, argv);
    const std::string verb = app.get_subcommands().front()->get_name();

    try {
        if (verb == "verify") {
            return run_verify(std::cout) == 0 ? 0 : 1;
        }
        const ExperimentConfig cfg = load_config(args);
        if (verb == "train-baseline") return cmd_train_baseline(cfg);
        if (verb == "prune") return cmd_prune(cfg);
        if (verb == "retrain") return cmd_retrain(cfg);
        if (verb == "experiment") return cmd_experiment(cfg);
        std::cerr << "unknown verb '" << verb << "'\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
