#include "rewindlab/rewind.hpp"

#include <stdexcept>

namespace rewindlab {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::finetune: return "finetune";
        case Strategy::weight_rewind: return "weight_rewind";
        case Strategy::lr_rewind: return "lr_rewind";
    }
    throw std::logic_error("unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "finetune") return Strategy::finetune;
    if (name == "weight_rewind") return Strategy::weight_rewind;
    if (name == "lr_rewind") return Strategy::lr_rewind;
    throw std::invalid_argument("unknown strategy '" + name +
                                "'; expected finetune, weight_rewind, or lr_rewind");
}

RetrainPlan make_retrain_plan(Strategy strategy, const LrSchedule& original, std::int64_t K,
                              double finetune_lr) {
    original.validate();
    const std::int64_t N = original.total_iterations;
    RetrainPlan plan;
    plan.strategy = strategy;
    plan.finetune_lr = finetune_lr;
    switch (strategy) {
        case Strategy::finetune:
            plan.retrain_iterations = N;
            plan.schedule = LrSchedule::constant(finetune_lr, N);
            plan.schedule_offset = 0;
            break;
        case Strategy::weight_rewind:
            if (K < 0 || K > N) {
                throw std::invalid_argument("weight rewind: K=" + std::to_string(K) +
                                            " outside [0, " + std::to_string(N) + "]");
            }
            plan.rewind_iteration = K;
            plan.retrain_iterations = N - K;
            plan.schedule = original;
            plan.schedule_offset = K;
            break;
        case Strategy::lr_rewind:
            plan.retrain_iterations = N;
            plan.schedule = original;
            plan.schedule_offset = 0;
            break;
    }
    return plan;
}

ParamStore run_retrain(const ModelSpec& spec, const RetrainEnv& env, ParamStore weights,
                       const PruneMask& mask, const RetrainPlan& plan, std::uint64_t data_seed,
                       TrainResult* stats) {
    if (!env.train_data || !env.pipeline) {
        throw std::invalid_argument("retrain: environment is missing data or pipeline");
    }
    apply_mask(weights, mask);
    if (plan.retrain_iterations == 0) {
        if (stats) *stats = TrainResult{};
        return weights;
    }
    TrainOptions opts;
    opts.schedule = plan.schedule;
    opts.start_iteration = plan.schedule_offset;
    opts.steps = plan.retrain_iterations;
    opts.momentum = env.momentum;
    opts.loss = env.loss;
    opts.batch_size = env.batch_size;
    opts.augment = env.augment;
    opts.data_seed = data_seed;
    opts.conv_impl = env.conv_impl;
    TrainResult r = train(spec, weights, *env.train_data, *env.pipeline, opts, &mask, nullptr);
    if (stats) *stats = std::move(r);
    return weights;
}

ParamStore rewound_weights(const CheckpointStore& store, std::int64_t K, const PruneMask& mask) {
    ParamStore weights;
    const Checkpoint& cp = store.restore(K);
    for (const auto& name : cp.state.order) weights.insert(name, cp.state.at(name));
    apply_mask(weights, mask);
    return weights;
}

ParamStore run_finetune(const ModelSpec& spec, const RetrainEnv& env, const ParamStore& pruned,
                        const PruneMask& mask, const LrSchedule& original, double finetune_lr,
                        std::uint64_t data_seed, TrainResult* stats) {
    RetrainPlan plan = make_retrain_plan(Strategy::finetune, original, 0, finetune_lr);
    return run_retrain(spec, env, pruned, mask, plan, data_seed, stats);
}

ParamStore run_weight_rewind(const ModelSpec& spec, const RetrainEnv& env,
                             const CheckpointStore& store, std::int64_t K, const PruneMask& mask,
                             const LrSchedule& original, std::uint64_t data_seed,
                             TrainResult* stats) {
    RetrainPlan plan = make_retrain_plan(Strategy::weight_rewind, original, K);
    ParamStore start = rewound_weights(store, K, mask);
    return run_retrain(spec, env, std::move(start), mask, plan, data_seed, stats);
}

ParamStore run_lr_rewind(const ModelSpec& spec, const RetrainEnv& env, const ParamStore& pruned,
                         const PruneMask& mask, const LrSchedule& original, std::uint64_t data_seed,
                         TrainResult* stats) {
    RetrainPlan plan = make_retrain_plan(Strategy::lr_rewind, original, 0);
    return run_retrain(spec, env, pruned, mask, plan, data_seed, stats);
}

}  // namespace rewindlab
