#pragma once

// One-shot and iterative pruning experiments: train one dense baseline,
// prune it to every target, retrain per strategy across trials, and
// aggregate accuracies into a compression/accuracy tradeoff curve.
//
// Within one experiment every compression point and every trial consumes
// the identical cached baseline (verified by checksum). Runs are
// deterministic: the same config and seed produce byte-identical output
// files.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rewindlab/checkpoint.hpp"
#include "rewindlab/data.hpp"
#include "rewindlab/models.hpp"
#include "rewindlab/optim.hpp"
#include "rewindlab/prune.hpp"
#include "rewindlab/rewind.hpp"
#include "rewindlab/trainer.hpp"

namespace rewindlab {

struct ExperimentConfig {
    std::string name = "experiment";
    std::string model = "mlp-small";
    std::string dataset = "synthetic";  // synthetic | cifar10 | cifar100
    std::string data_dir;               // CIFAR binary root (or $REWINDLAB_DATA_DIR)
    std::int64_t train_subset = 0;      // 0 = full split, else first n examples
    std::int64_t validation_subset = 0;
    SyntheticSpec synthetic;

    std::string mode = "one-shot";  // one-shot | iterative
    std::string strategy = "finetune";
    std::vector<double> compressions;  // one-shot targets as ratios (c >= 1)
    std::vector<double> sparsities;    // one-shot targets as sparsities in [0,1)
    std::string prune_kind = "unstructured";  // unstructured | structured
    std::string prune_scope = "global";       // global | per-layer
    std::vector<std::string> prune_exempt;    // parameter-name prefixes

    double step_fraction = 0.3;  // iterative p
    int rounds = 3;              // iterative rounds

    int trials = 2;
    std::uint64_t seed = 1;
    std::int64_t rewind_iteration = -1;  // K; -1 resolves to N/4
    double finetune_lr = 0.001;

    LrSchedule schedule;  // carries N = total_iterations
    double momentum = 0.9;
    double l2 = 1e-4;
    std::string l2_scope = "all";  // all | kernels
    int batch_size = 128;
    double bn_decay = 0.997;
    bool augment = true;
    std::int64_t snapshot_cadence = 1000;

    std::string out_dir = ".";
    bool deterministic = true;

    // Sanity-checks ranges and enum-like strings; throws naming the field.
    void validate() const;
    std::int64_t resolved_rewind_iteration() const;
    LossConfig loss_config() const;
};

struct DataBundle {
    Dataset train;
    Dataset validation;
    ChannelStats stats;
    AugmentPipeline pipeline;
};

// Builds the configured dataset (loading CIFAR or generating synthetic
// data) and its standardization pipeline, applying subset prefixes.
DataBundle load_data(const ExperimentConfig& config);

struct BaselineArtifacts {
    Model model;            // spec + final dense weights
    CheckpointStore store;  // snapshots at 0, cadence, boundaries, K, N
    double accuracy = 0.0;
    std::uint64_t checksum = 0;  // of the final dense weights
};

// Trains the dense baseline once, snapshotting per D-R1-style policy
// (iteration 0, every `snapshot_cadence`, schedule boundaries, K, N).
BaselineArtifacts train_baseline(const ExperimentConfig& config, const DataBundle& data);

struct TrialRecord {
    int round = 0;  // 0 for one-shot points
    double target_compression = 1.0;
    double compression = 1.0;  // achieved
    double sparsity = 0.0;     // achieved
    int trial = 0;
    double accuracy = 0.0;
    std::int64_t retrain_iterations = 0;
    std::uint64_t mask_checksum = 0;
};

struct PointSummary {
    double compression = 1.0;
    double sparsity = 0.0;
    double median = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int trials = 0;
};

struct PointError {
    double target_compression = 0.0;
    std::string message;
};

struct ExperimentResult {
    ExperimentConfig config;
    double baseline_accuracy = 0.0;
    std::uint64_t baseline_checksum = 0;
    std::vector<TrialRecord> records;
    std::vector<PointSummary> summary;  // sorted by compression ascending
    std::vector<PointError> errors;     // per-point failures; run continues
};

ExperimentResult run_one_shot(const ExperimentConfig& config, const DataBundle& data);
ExperimentResult run_iterative(const ExperimentConfig& config, const DataBundle& data);
// Dispatches on config.mode.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Order-statistic median and 10th/90th-percentile CI (linear interpolation
// between order statistics; a single record gives a degenerate CI).
PointSummary aggregate_point(std::vector<double> accuracies);
std::vector<PointSummary> aggregate(const std::vector<TrialRecord>& records);

// CSV: header `compression,sparsity,median_acc,ci_low,ci_high,trials`,
// one row per point, 6-decimal fixed-point.
void emit_curve(const ExperimentResult& result, const std::string& path);
// JSON mirror of the curve plus per-trial records and baseline fields.
void emit_json(const ExperimentResult& result, const std::string& path);
// Parses an emit_curve file back into summaries (round-trip checks).
std::vector<PointSummary> parse_curve(const std::string& path);

}  // namespace rewindlab
