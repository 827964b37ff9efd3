#include "rewindlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rewindlab {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw std::invalid_argument("config field '" + field + "': " + why);
}

}  // namespace

void ExperimentConfig::validate() const {
    require(mode == "one-shot" || mode == "iterative", "mode", "must be one-shot or iterative, got '" + mode + "'");
    strategy_from_name(strategy);  // throws with field context below on bad value
    require(prune_kind == "unstructured" || prune_kind == "structured", "prune.kind",
            "must be unstructured or structured, got '" + prune_kind + "'");
    require(prune_scope == "global" || prune_scope == "per-layer", "prune.scope",
            "must be global or per-layer, got '" + prune_scope + "'");
    require(trials >= 1 && trials <= 64, "trials", "must be in [1, 64], got " + std::to_string(trials));
    require(step_fraction > 0.0 && step_fraction < 1.0, "prune.step_fraction",
            "must be in (0,1), got " + std::to_string(step_fraction));
    if (mode == "iterative") {
        require(rounds >= 1, "rounds", "must be >= 1, got " + std::to_string(rounds));
    } else {
        require(!compressions.empty() || !sparsities.empty(), "compressions",
                "one-shot mode needs at least one compression or sparsity target");
    }
    for (double c : compressions) {
        require(c >= 1.0, "compressions", "ratio " + std::to_string(c) + " is < 1");
    }
    for (double s : sparsities) {
        require(s >= 0.0 && s < 1.0, "sparsities", "sparsity " + std::to_string(s) + " outside [0,1)");
    }
    schedule.validate();
    require(rewind_iteration <= schedule.total_iterations, "rewind_iteration",
            "K exceeds the training budget N=" + std::to_string(schedule.total_iterations));
    require(finetune_lr > 0.0, "finetune_lr", "must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "momentum", "must be in [0,1)");
    require(l2 >= 0.0, "optim.l2", "must be non-negative");
    require(l2_scope == "all" || l2_scope == "kernels", "optim.l2_scope",
            "must be all or kernels, got '" + l2_scope + "'");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    require(bn_decay > 0.0 && bn_decay < 1.0, "bn_decay", "must be in (0,1)");
    require(snapshot_cadence >= 1, "snapshot_cadence", "must be >= 1");
    require(dataset == "synthetic" || dataset == "cifar10" || dataset == "cifar100", "dataset",
            "must be synthetic, cifar10, or cifar100, got '" + dataset + "'");
}

std::int64_t ExperimentConfig::resolved_rewind_iteration() const {
    return rewind_iteration >= 0 ? rewind_iteration : schedule.total_iterations / 4;
}

LossConfig ExperimentConfig::loss_config() const {
    LossConfig cfg;
    cfg.l2_coefficient = l2;
    cfg.l2_scope = l2_scope == "kernels" ? LossConfig::L2Scope::kernels_only
                                         : LossConfig::L2Scope::all_trainable;
    return cfg;
}

DataBundle load_data(const ExperimentConfig& config) {
    DataBundle bundle;
    if (config.dataset == "synthetic") {
        auto [train, validation] = make_synthetic(config.synthetic);
        bundle.train = std::move(train);
        bundle.validation = std::move(validation);
    } else {
        const CifarVariant variant =
            config.dataset == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
        const std::string dir = resolve_data_dir(config.data_dir);
        bundle.train = load_cifar(dir, variant, Split::train);
        bundle.validation = load_cifar(dir, variant, Split::validation);
    }
    if (config.train_subset > 0) bundle.train = subset_prefix(bundle.train, config.train_subset);
    if (config.validation_subset > 0) {
        bundle.validation = subset_prefix(bundle.validation, config.validation_subset);
    }
    bundle.stats = standardize_stats(bundle.train);
    bundle.pipeline.stats = bundle.stats;
    return bundle;
}

BaselineArtifacts train_baseline(const ExperimentConfig& config, const DataBundle& data) {
    BaselineArtifacts base{Model{}, CheckpointStore(config.name + "/baseline")};
    base.model = build(config.model, data.train.class_count,
                       mix64(config.seed, hash_tag("init")), config.bn_decay);

    TrainOptions opts;
    opts.schedule = config.schedule;
    opts.momentum = config.momentum;
    opts.loss = config.loss_config();
    opts.batch_size = config.batch_size;
    opts.augment = config.augment;
    opts.data_seed = mix64(config.seed, hash_tag("baseline-data"));
    opts.snapshot_policy.cadence = config.snapshot_cadence;
    opts.snapshot_policy.forced = config.schedule.boundaries;
    opts.snapshot_policy.forced.push_back(config.resolved_rewind_iteration());

    train(base.model.spec, base.model.weights, data.train, data.pipeline, opts, nullptr, &base.store);
    base.accuracy = evaluate(base.model.spec, base.model.weights, data.validation, data.stats);
    base.checksum = state_checksum(base.model.weights);
    return base;
}

namespace {

// Extends a mask computed over the (possibly exemption-filtered) view with
// all-ones entries for the remaining prunable tensors, so sparsity and
// compression account over every kernel parameter.
PruneMask with_full_accounting(const PruneMask& mask, const ModelSpec& spec) {
    PruneMask full;
    full.target_sparsity = mask.target_sparsity;
    for (const auto& p : spec.params) {
        if (!p.prunable) continue;
        if (const auto* e = mask.find(p.name)) {
            full.entries.push_back(*e);
        } else {
            PruneMask::Entry ones;
            ones.name = p.name;
            ones.shape = p.shape;
            ones.keep.assign(static_cast<std::size_t>(shape_numel(p.shape)), 1);
            full.entries.push_back(std::move(ones));
        }
    }
    full.recount();
    return full;
}

struct PointTarget {
    double compression = 1.0;  // requested, as a ratio
    bool from_sparsity = false;
    double sparsity = 0.0;  // requested, when from_sparsity
};

// One pruning step shared by both drivers: ranks `weights`, composes with
// `existing`, returns the full-accounting mask.
PruneMask prune_step(const ExperimentConfig& config, const ModelSpec& spec,
                     const ParamStore& weights, const PointTarget& target,
                     const PruneMask* existing) {
    std::vector<PrunableView> view =
        filter_exempt(prunable_view(spec, weights), config.prune_exempt);
    if (view.empty()) throw std::invalid_argument("every prunable tensor is exempt");

    std::int64_t full_kernels = 0;
    for (const auto& p : spec.params) {
        if (p.prunable) full_kernels += shape_numel(p.shape);
    }

    PruneMask mask;
    if (config.prune_kind == "structured") {
        const double s = target.from_sparsity ? target.sparsity : 1.0 - 1.0 / target.compression;
        mask = prune_structured(view, s, existing);
    } else if (!target.from_sparsity && config.prune_scope == "global") {
        // Compression ratios resolve to survivor counts (floor(kernels / c)),
        // so the recorded ratio matches the accounting identities exactly.
        const std::int64_t survivors = survivors_for_compression(full_kernels, target.compression);
        mask = prune_unstructured_to_count(view, full_kernels - survivors, existing);
    } else {
        const double s = target.from_sparsity ? target.sparsity : 1.0 - 1.0 / target.compression;
        const PruneScope scope =
            config.prune_scope == "per-layer" ? PruneScope::per_layer : PruneScope::global;
        mask = prune_unstructured(view, s, scope, existing);
    }
    return with_full_accounting(mask, spec);
}

ParamStore retrain_for_strategy(const ExperimentConfig& config, const BaselineArtifacts& base,
                                const RetrainEnv& env, const ParamStore& start,
                                const PruneMask& mask, std::uint64_t data_seed,
                                TrainResult* stats) {
    const Strategy strategy = strategy_from_name(config.strategy);
    switch (strategy) {
        case Strategy::finetune:
            return run_finetune(base.model.spec, env, start, mask, config.schedule,
                                config.finetune_lr, data_seed, stats);
        case Strategy::weight_rewind:
            return run_weight_rewind(base.model.spec, env, base.store,
                                     config.resolved_rewind_iteration(), mask, config.schedule,
                                     data_seed, stats);
        case Strategy::lr_rewind:
            return run_lr_rewind(base.model.spec, env, start, mask, config.schedule, data_seed,
                                 stats);
    }
    throw std::logic_error("unreachable strategy");
}

std::uint64_t trial_seed(const ExperimentConfig& config, int trial) {
    return mix64(config.seed, mix64(hash_tag("trial"), static_cast<std::uint64_t>(trial)));
}

std::uint64_t retrain_seed(const ExperimentConfig& config, int trial, int round) {
    return mix64(trial_seed(config, trial),
                 mix64(hash_tag(config.strategy), static_cast<std::uint64_t>(round)));
}

RetrainEnv make_env(const ExperimentConfig& config, const DataBundle& data) {
    RetrainEnv env;
    env.train_data = &data.train;
    env.pipeline = &data.pipeline;
    env.loss = config.loss_config();
    env.momentum = config.momentum;
    env.batch_size = config.batch_size;
    env.augment = config.augment;
    return env;
}

std::vector<PointTarget> one_shot_targets(const ExperimentConfig& config) {
    std::vector<PointTarget> targets;
    for (double c : config.compressions) targets.push_back({c, false, 0.0});
    for (double s : config.sparsities) targets.push_back({1.0 / (1.0 - s), true, s});
    std::sort(targets.begin(), targets.end(),
              [](const PointTarget& a, const PointTarget& b) { return a.compression < b.compression; });
    return targets;
}

}  // namespace

ExperimentResult run_one_shot(const ExperimentConfig& config, const DataBundle& data) {
    ExperimentResult result;
    result.config = config;

    BaselineArtifacts base = train_baseline(config, data);
    result.baseline_accuracy = base.accuracy;
    result.baseline_checksum = base.checksum;

    const RetrainEnv env = make_env(config, data);
    for (const PointTarget& target : one_shot_targets(config)) {
        PruneMask mask;
        try {
            mask = prune_step(config, base.model.spec, base.model.weights, target, nullptr);
            compression_of(mask);  // rejects fully-masked networks up front
        } catch (const std::exception& e) {
            result.errors.push_back({target.compression, e.what()});
            continue;
        }
        for (int trial = 0; trial < config.trials; ++trial) {
            TrialRecord rec;
            rec.round = 0;
            rec.target_compression = target.compression;
            rec.compression = compression_of(mask).value;
            rec.sparsity = sparsity_of(mask);
            rec.trial = trial;
            rec.mask_checksum = mask_checksum(mask);
            TrainResult stats;
            ParamStore retrained = retrain_for_strategy(config, base, env, base.model.weights,
                                                        mask, retrain_seed(config, trial, 0), &stats);
            rec.retrain_iterations = stats.steps;
            rec.accuracy = evaluate(base.model.spec, retrained, data.validation, data.stats);
            result.records.push_back(rec);
        }
    }
    result.summary = aggregate(result.records);
    return result;
}

ExperimentResult run_iterative(const ExperimentConfig& config, const DataBundle& data) {
    ExperimentResult result;
    result.config = config;

    BaselineArtifacts base = train_baseline(config, data);
    result.baseline_accuracy = base.accuracy;
    result.baseline_checksum = base.checksum;

    const RetrainEnv env = make_env(config, data);
    for (int trial = 0; trial < config.trials; ++trial) {
        ParamStore current = base.model.weights;
        PruneMask mask;  // empty: round 1 composes with nothing
        for (int round = 1; round <= config.rounds; ++round) {
            const double s = iterative_sparsity(config.step_fraction, round);
            PointTarget target;
            target.from_sparsity = true;
            target.sparsity = s;
            target.compression = 1.0 / (1.0 - s);
            try {
                // Rank the previous round's retrained weights (the dense
                // baseline on round 1); the mask composes monotonically.
                mask = prune_step(config, base.model.spec, current, target,
                                  mask.entries.empty() ? nullptr : &mask);
                compression_of(mask);
            } catch (const std::exception& e) {
                result.errors.push_back({target.compression, e.what()});
                break;  // later rounds of this chain are unreachable
            }
            TrialRecord rec;
            rec.round = round;
            rec.target_compression = target.compression;
            rec.compression = compression_of(mask).value;
            rec.sparsity = sparsity_of(mask);
            rec.trial = trial;
            rec.mask_checksum = mask_checksum(mask);
            TrainResult stats;
            current = retrain_for_strategy(config, base, env, current, mask,
                                           retrain_seed(config, trial, round), &stats);
            rec.retrain_iterations = stats.steps;
            rec.accuracy = evaluate(base.model.spec, current, data.validation, data.stats);
            result.records.push_back(rec);
        }
    }
    result.summary = aggregate(result.records);
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    DataBundle data = load_data(config);
    return config.mode == "iterative" ? run_iterative(config, data) : run_one_shot(config, data);
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= n) return sorted[n - 1];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

PointSummary aggregate_point(std::vector<double> accuracies) {
    if (accuracies.empty()) throw std::invalid_argument("aggregate: no records for point");
    std::sort(accuracies.begin(), accuracies.end());
    PointSummary s;
    s.trials = static_cast<int>(accuracies.size());
    s.median = percentile(accuracies, 0.5);
    s.ci_low = percentile(accuracies, 0.1);
    s.ci_high = percentile(accuracies, 0.9);
    return s;
}

std::vector<PointSummary> aggregate(const std::vector<TrialRecord>& records) {
    // Group by (round, requested target); trials of one point share both.
    std::map<std::pair<int, double>, std::vector<const TrialRecord*>> points;
    for (const auto& r : records) {
        points[{r.round, r.target_compression}].push_back(&r);
    }
    std::vector<PointSummary> out;
    for (const auto& [key, recs] : points) {
        std::vector<double> accs, comps, spars;
        for (const auto* r : recs) {
            accs.push_back(r->accuracy);
            comps.push_back(r->compression);
            spars.push_back(r->sparsity);
        }
        PointSummary s = aggregate_point(accs);
        std::sort(comps.begin(), comps.end());
        std::sort(spars.begin(), spars.end());
        s.compression = percentile(comps, 0.5);
        s.sparsity = percentile(spars, 0.5);
        out.push_back(s);
    }
    std::sort(out.begin(), out.end(),
              [](const PointSummary& a, const PointSummary& b) { return a.compression < b.compression; });
    return out;
}

void emit_curve(const ExperimentResult& result, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "compression,sparsity,median_acc,ci_low,ci_high,trials\n";
    char row[256];
    for (const auto& p : result.summary) {
        std::snprintf(row, sizeof(row), "%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", p.compression, p.sparsity,
                      p.median, p.ci_low, p.ci_high, p.trials);
        os << row;
    }
    if (!os) throw std::runtime_error("failed writing curve to '" + path + "'");
}

std::vector<PointSummary> parse_curve(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open curve file '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != "compression,sparsity,median_acc,ci_low,ci_high,trials") {
        throw std::runtime_error("curve file '" + path + "': bad header");
    }
    std::vector<PointSummary> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        PointSummary p;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        if (!(ss >> p.compression >> p.sparsity >> p.median >> p.ci_low >> p.ci_high >> p.trials)) {
            throw std::runtime_error("curve file '" + path + "': unparsable row '" + line + "'");
        }
        out.push_back(p);
    }
    return out;
}

void emit_json(const ExperimentResult& result, const std::string& path) {
    nlohmann::ordered_json j;
    j["name"] = result.config.name;
    j["model"] = result.config.model;
    j["dataset"] = result.config.dataset;
    j["mode"] = result.config.mode;
    j["strategy"] = result.config.strategy;
    j["seed"] = result.config.seed;
    j["baseline_accuracy"] = result.baseline_accuracy;
    j["baseline_checksum"] = result.baseline_checksum;
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : result.summary) {
        j["points"].push_back({{"compression", p.compression},
                               {"sparsity", p.sparsity},
                               {"median_acc", p.median},
                               {"ci_low", p.ci_low},
                               {"ci_high", p.ci_high},
                               {"trials", p.trials}});
    }
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : result.records) {
        j["records"].push_back({{"round", r.round},
                                {"target_compression", r.target_compression},
                                {"compression", r.compression},
                                {"sparsity", r.sparsity},
                                {"trial", r.trial},
                                {"accuracy", r.accuracy},
                                {"retrain_iterations", r.retrain_iterations},
                                {"mask_checksum", r.mask_checksum}});
    }
    j["errors"] = nlohmann::ordered_json::array();
    for (const auto& e : result.errors) {
        j["errors"].push_back({{"target_compression", e.target_compression}, {"message", e.message}});
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("failed writing result json to '" + path + "'");
}

}  // namespace rewindlab
