#pragma once

// The three post-pruning retraining strategies.
//
//   finetune       N steps at a small constant learning rate
//   weight_rewind  restore surviving weights to their iteration-K values,
//                  then N-K steps consuming lr(K)..lr(N-1)
//   lr_rewind      keep the converged pruned weights, restart the schedule,
//                  N steps consuming lr(0)..lr(N-1)
//
// lr_rewind is weight rewinding at K=N with a forced N-step schedule-reset
// retrain; run_lr_rewind and that composition are bit-identical under equal
// seeds (tested).
//
// Optimizer velocity is never rewound: every retrain starts from zero
// velocity. Each retrain takes an explicit data seed so callers control
// whether two runs share a data order.

#include <cstdint>
#include <string>

#include "rewindlab/checkpoint.hpp"
#include "rewindlab/prune.hpp"
#include "rewindlab/trainer.hpp"

namespace rewindlab {

enum class Strategy { finetune, weight_rewind, lr_rewind };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct RetrainPlan {
    Strategy strategy = Strategy::finetune;
    std::int64_t rewind_iteration = 0;   // K; meaningful for weight_rewind
    std::int64_t retrain_iterations = 0;
    std::int64_t schedule_offset = 0;    // first consumed schedule position
    LrSchedule schedule;                 // schedule the retrain draws from
    double finetune_lr = 0.001;
};

// Builds the plan for a strategy against the original training schedule
// (N = original.total_iterations). K is used by weight_rewind only.
RetrainPlan make_retrain_plan(Strategy strategy, const LrSchedule& original, std::int64_t K,
                              double finetune_lr = 0.001);

// Everything a retrain needs besides weights, mask, and plan.
struct RetrainEnv {
    const Dataset* train_data = nullptr;
    const AugmentPipeline* pipeline = nullptr;
    LossConfig loss;
    double momentum = 0.9;
    int batch_size = 128;
    bool augment = true;
    ConvImpl conv_impl = ConvImpl::im2col;
};

// Applies the mask to `weights` and runs the plan's steps with a fresh
// optimizer (zero velocity). Returns the retrained weights.
ParamStore run_retrain(const ModelSpec& spec, const RetrainEnv& env, ParamStore weights,
                       const PruneMask& mask, const RetrainPlan& plan, std::uint64_t data_seed,
                       TrainResult* stats = nullptr);

// Snapshot K with the mask applied: the starting state of a weight-rewind
// retrain.
ParamStore rewound_weights(const CheckpointStore& store, std::int64_t K, const PruneMask& mask);

// Strategy wrappers. `pruned` is the masked converged network (finetune and
// lr_rewind start there); weight rewinding starts from the checkpoint store.
ParamStore run_finetune(const ModelSpec& spec, const RetrainEnv& env, const ParamStore& pruned,
                        const PruneMask& mask, const LrSchedule& original, double finetune_lr,
                        std::uint64_t data_seed, TrainResult* stats = nullptr);

ParamStore run_weight_rewind(const ModelSpec& spec, const RetrainEnv& env,
                             const CheckpointStore& store, std::int64_t K, const PruneMask& mask,
                             const LrSchedule& original, std::uint64_t data_seed,
                             TrainResult* stats = nullptr);

ParamStore run_lr_rewind(const ModelSpec& spec, const RetrainEnv& env, const ParamStore& pruned,
                         const PruneMask& mask, const LrSchedule& original, std::uint64_t data_seed,
                         TrainResult* stats = nullptr);

}  // namespace rewindlab
