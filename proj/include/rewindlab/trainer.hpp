#pragma once

// The training loop: batch assembly, forward/backward, the pruning hook,
// Nesterov SGD steps, and checkpoint snapshots.
//
// Determinism: each run owns one RNG seeded from `data_seed`; it is consumed
// in a fixed order (epoch shuffle, then per-image augmentation draws), so a
// run is a pure function of (weights, data, options).
//
// The pruning hook (active when a mask is supplied) zeroes gradients at
// masked positions before each step and re-applies the mask to weights and
// velocity after it, so pruned connections never drift from 0.0.

#include <cstdint>
#include <functional>
#include <vector>

#include "rewindlab/checkpoint.hpp"
#include "rewindlab/data.hpp"
#include "rewindlab/model_spec.hpp"
#include "rewindlab/optim.hpp"
#include "rewindlab/prune.hpp"

namespace rewindlab {

struct TrainOptions {
    LrSchedule schedule;
    std::int64_t start_iteration = 0;  // schedule offset of the first step
    std::int64_t steps = -1;           // -1: run to schedule.total_iterations
    double momentum = 0.9;
    LossConfig loss;
    int batch_size = 128;
    bool augment = true;  // flip/pad/crop on top of standardization
    std::uint64_t data_seed = 0;
    ConvImpl conv_impl = ConvImpl::im2col;
    SnapshotPolicy snapshot_policy;  // consulted only when a store is given
    // Observation hook, called with the current state at every iteration
    // boundary (before each step and once after the last). Progress logging
    // and history validation hang off this; it must not mutate the weights.
    std::function<void(std::int64_t iteration, const ParamStore& weights)> on_iteration;
};

struct TrainResult {
    std::int64_t steps = 0;
    std::vector<double> lr_trace;  // learning rate consumed by each step
    double final_loss = 0.0;       // regularized loss of the last batch
};

// Runs `opts.steps` optimizer steps, mutating `weights` in place (batch-norm
// moving statistics included). Epochs are drawn without replacement via a
// seeded Fisher-Yates shuffle; a trailing partial batch is dropped and a new
// epoch begins. Snapshots (when `store` is non-null) happen at every
// iteration the policy wants, keyed by the global schedule iteration.
// Throws on NaN loss or gradients, identifying the iteration.
TrainResult train(const ModelSpec& spec, ParamStore& weights, const Dataset& data,
                  const AugmentPipeline& pipeline, const TrainOptions& opts,
                  const PruneMask* mask = nullptr, CheckpointStore* store = nullptr);

// Top-1 accuracy over `data` (standardization only, batch-norm in inference
// mode).
double evaluate(const ModelSpec& spec, const ParamStore& weights, const Dataset& data,
                const ChannelStats& stats, int batch_size = 250,
                ConvImpl conv_impl = ConvImpl::im2col);

}  // namespace rewindlab
