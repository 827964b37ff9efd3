#include "rewindlab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rewindlab {

void LrSchedule::validate() const {
    // base_lr 0 is allowed as the degenerate no-op schedule (used by the
    // fine-tuning lr=0 identity); negatives are rejected.
    if (base_lr < 0.0) throw std::invalid_argument("schedule: base_lr must be non-negative");
    if (total_iterations <= 0) throw std::invalid_argument("schedule: total_iterations must be positive");
    if (boundaries.size() != multipliers.size()) {
        throw std::invalid_argument("schedule: boundaries and multipliers differ in length");
    }
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        if (boundaries[i] >= total_iterations) {
            throw std::invalid_argument("schedule: boundary " + std::to_string(boundaries[i]) +
                                        " is not below total_iterations " + std::to_string(total_iterations));
        }
        if (i > 0 && boundaries[i] <= boundaries[i - 1]) {
            throw std::invalid_argument("schedule: boundaries must be strictly ascending");
        }
        if (multipliers[i] <= 0.0) throw std::invalid_argument("schedule: multipliers must be positive");
    }
}

double lr_at(const LrSchedule& schedule, std::int64_t t) {
    if (t < 0 || t >= schedule.total_iterations) {
        throw std::out_of_range("lr_at: iteration " + std::to_string(t) + " outside [0, " +
                                std::to_string(schedule.total_iterations) + ")");
    }
    double lr = schedule.base_lr;
    for (std::size_t i = 0; i < schedule.boundaries.size(); ++i) {
        if (schedule.boundaries[i] <= t) lr *= schedule.multipliers[i];
    }
    return lr;
}

void Sgd::step(ParamStore& weights, const std::vector<std::string>& names,
               const std::unordered_map<std::string, const Tensor*>& grads) {
    const float lr = static_cast<float>(lr_at(schedule_, t_));
    const float mu = static_cast<float>(momentum_);
    for (const auto& name : names) {
        Tensor& w = weights.at(name);
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw std::runtime_error("sgd: no gradient supplied for '" + name + "'");
        }
        const Tensor& g = *git->second;
        if (!g.same_shape(w)) {
            throw std::runtime_error("sgd: gradient shape " + shape_str(g.shape) + " for '" + name +
                                     "' does not match weight shape " + shape_str(w.shape));
        }
        for (float v : g.data) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("sgd: non-finite gradient in '" + name + "' at iteration " +
                                         std::to_string(t_) + "; aborting run");
            }
        }
        auto vit = velocity_.find(name);
        if (vit == velocity_.end()) vit = velocity_.emplace(name, Tensor::zeros(w.shape)).first;
        Tensor& vel = vit->second;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const float gv = g.data[i];
            const float v_new = mu * vel.data[i] - lr * gv;
            vel.data[i] = v_new;
            w.data[i] += mu * v_new - lr * gv;
        }
    }
    ++t_;
}

double regularized_loss(const Tensor64& logits, const std::vector<int>& labels,
                        const std::vector<const Tensor64*>& weights, double l2) {
    if (logits.rank() != 2 || static_cast<std::size_t>(logits.shape[0]) != labels.size()) {
        throw std::invalid_argument("loss: logits batch " + shape_str(logits.shape) +
                                    " does not match labels length " + std::to_string(labels.size()));
    }
    const int n = logits.shape[0], c = logits.shape[1];
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data.data() + static_cast<std::size_t>(i) * c;
        double m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(row[j] - m);
        total += -(row[labels[static_cast<std::size_t>(i)]] - m - std::log(sum));
    }
    double loss = total / n;
    double sq = 0.0;
    for (const auto* w : weights)
        for (double v : w->data) sq += v * v;
    return loss + l2 * sq;
}

}  // namespace rewindlab
