#include "rewindlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rewindlab {

namespace {

// Bindings and ParamStore::values share a map type; training binds the
// batch alongside the weights and removes it again afterwards.
struct BatchKeysGuard {
    Bindings<float>& bindings;
    ~BatchKeysGuard() {
        bindings.erase("x");
        bindings.erase("labels");
    }
};

Tensor labels_tensor(const std::vector<int>& labels) {
    Tensor t({static_cast<int>(labels.size())});
    for (std::size_t i = 0; i < labels.size(); ++i) t.data[i] = static_cast<float>(labels[i]);
    return t;
}

// Draws consecutive batches from reshuffled epochs, dropping any trailing
// partial batch.
class BatchCursor {
public:
    BatchCursor(std::int64_t n, int batch_size, Rng& rng)
        : batch_(batch_size), rng_(rng), order_(static_cast<std::size_t>(n)) {
        if (n < batch_size) {
            throw std::invalid_argument("train: batch size " + std::to_string(batch_size) +
                                        " exceeds dataset of " + std::to_string(n));
        }
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }

    std::vector<std::int64_t> next() {
        if (pos_ + batch_ > static_cast<std::int64_t>(order_.size())) reshuffle();
        std::vector<std::int64_t> idx(order_.begin() + pos_, order_.begin() + pos_ + batch_);
        pos_ += batch_;
        return idx;
    }

private:
    void reshuffle() {
        rng_.shuffle(order_);
        pos_ = 0;
    }

    std::int64_t batch_;
    Rng& rng_;
    std::vector<std::int64_t> order_;
    std::int64_t pos_ = 0;
};

}  // namespace

TrainResult train(const ModelSpec& spec, ParamStore& weights, const Dataset& data,
                  const AugmentPipeline& pipeline, const TrainOptions& opts,
                  const PruneMask* mask, CheckpointStore* store) {
    opts.schedule.validate();
    const std::int64_t begin = opts.start_iteration;
    const std::int64_t steps =
        opts.steps >= 0 ? opts.steps : opts.schedule.total_iterations - begin;
    const std::int64_t end = begin + steps;
    if (begin < 0 || end > opts.schedule.total_iterations) {
        throw std::invalid_argument("train: iterations [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") outside schedule budget of " +
                                    std::to_string(opts.schedule.total_iterations));
    }

    CompiledModel<float> model;
    compile_model(spec, opts.loss, model, opts.conv_impl);

    std::vector<std::string> trainable;
    for (const auto& p : spec.params) {
        if (p.trainable) trainable.push_back(p.name);
    }

    Sgd sgd(opts.momentum, opts.schedule, begin);
    Rng rng(opts.data_seed);
    Bindings<float>& bindings = weights.values;
    BatchKeysGuard guard{bindings};

    if (mask) apply_mask(weights, *mask);

    auto maybe_snapshot = [&](std::int64_t iteration) {
        if (store && opts.snapshot_policy.wants(iteration, end) && !store->has(iteration)) {
            store->store(iteration, weights);
        }
        if (opts.on_iteration) opts.on_iteration(iteration, weights);
    };

    TrainResult result;
    result.lr_trace.reserve(static_cast<std::size_t>(steps));
    BatchCursor cursor(data.size(), opts.batch_size, rng);

    for (std::int64_t t = begin; t < end; ++t) {
        maybe_snapshot(t);

        const std::vector<std::int64_t> idx = cursor.next();
        Tensor batch = opts.augment ? augment_batch(data, idx, pipeline, rng)
                                    : standardize_batch(data, idx, pipeline.stats);
        bindings["x"] = std::move(batch);
        bindings["labels"] = labels_tensor(batch_labels(data, idx));

        model.graph.forward(bindings, /*training=*/true);
        const double loss = static_cast<double>(model.loss->value().data[0]);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train: loss is " + std::to_string(loss) + " at iteration " +
                                     std::to_string(t) + "; aborting run");
        }
        model.graph.backward("loss");

        if (mask) {
            for (const auto& e : mask->entries) {
                Tensor& g = model.graph.grad_mut(e.name);
                for (std::size_t i = 0; i < e.keep.size(); ++i) {
                    if (!e.keep[i]) g.data[i] = 0.0f;
                }
            }
        }

        std::unordered_map<std::string, const Tensor*> grads;
        grads.reserve(trainable.size());
        for (const auto& name : trainable) grads[name] = &model.graph.find(name)->grad();
        sgd.step(weights, trainable, grads);

        if (mask) {
            for (const auto& e : mask->entries) {
                apply_mask(weights.at(e.name), e);
                if (Tensor* v = sgd.velocity(e.name)) apply_mask(*v, e);
            }
        }

        result.lr_trace.push_back(lr_at(opts.schedule, t));
        result.final_loss = loss;
        ++result.steps;
    }
    maybe_snapshot(end);
    return result;
}

double evaluate(const ModelSpec& spec, const ParamStore& weights, const Dataset& data,
                const ChannelStats& stats, int batch_size, ConvImpl conv_impl) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    CompiledModel<float> model;
    compile_model(spec, LossConfig{}, model, conv_impl);

    // Evaluation must not disturb the weights; bind a copy of the values map
    // (batch-norm statistics are only written in training mode, but the
    // batch keys alone justify the copy).
    Bindings<float> bindings = weights.values;

    std::int64_t correct = 0;
    const int classes = spec.classes;
    for (std::int64_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::int64_t count = std::min<std::int64_t>(batch_size, data.size() - begin);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
        std::iota(idx.begin(), idx.end(), begin);
        bindings["x"] = standardize_batch(data, idx, stats);
        bindings["labels"] = labels_tensor(batch_labels(data, idx));
        model.graph.forward(bindings, /*training=*/false);
        const Tensor& logits = model.logits->value();
        for (std::int64_t b = 0; b < count; ++b) {
            const float* row = logits.data.data() + b * classes;
            int arg = 0;
            for (int c = 1; c < classes; ++c) {
                if (row[c] > row[arg]) arg = c;
            }
            if (arg == data.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace rewindlab
