#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rewindlab/model_spec.hpp"
#include "rewindlab/tensor.hpp"

namespace rewindlab {

/// Piecewise-constant learning rate over an iteration budget of
/// total_iterations: lr(t) = base_lr * prod{ multipliers[i] : boundaries[i] <= t }.
struct LrSchedule {
    double base_lr = 0.1;
    std::vector<std::int64_t> boundaries;  // strictly ascending, all < total_iterations
    std::vector<double> multipliers;       // one per boundary, positive
    std::int64_t total_iterations = 0;

    void validate() const;

    /// Constant learning rate for n iterations.
    static LrSchedule constant(double lr, std::int64_t n) { return {lr, {}, {}, n}; }
};

double lr_at(const LrSchedule& schedule, std::int64_t t);

/// SGD with Nesterov momentum:
///   v <- mu * v - lr * g
///   w <- w + mu * v - lr * g
/// Velocity buffers are created lazily, zero-initialized.
class Sgd {
   public:
    /// `start_iteration` offsets the schedule: the first step consumes
    /// lr_at(schedule, start_iteration). Weight rewinding retrains with the
    /// tail of the original schedule this way.
    Sgd(double momentum, LrSchedule schedule, std::int64_t start_iteration = 0)
        : momentum_(momentum), schedule_(std::move(schedule)), t_(start_iteration) {}

    /// One update over the named weights. Throws if any gradient is not
    /// finite; the message names the offending tensor and iteration.
    void step(ParamStore& weights, const std::vector<std::string>& names,
              const std::unordered_map<std::string, const Tensor*>& grads);

    std::int64_t iteration() const { return t_; }
    double momentum() const { return momentum_; }
    const LrSchedule& schedule() const { return schedule_; }
    Tensor* velocity(const std::string& name) {
        auto it = velocity_.find(name);
        return it == velocity_.end() ? nullptr : &it->second;
    }

   private:
    double momentum_;
    LrSchedule schedule_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Tensor> velocity_;
};

/// Mean softmax cross-entropy from logits plus l2 * sum of squares over
/// the supplied weight tensors. Reference implementation used by tests;
/// the training path computes the same quantity through the graph.
double regularized_loss(const Tensor64& logits, const std::vector<int>& labels,
                        const std::vector<const Tensor64*>& weights, double l2);

}  // namespace rewindlab
