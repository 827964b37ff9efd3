#include "rewindlab/model_spec.hpp"

#include <cmath>

namespace rewindlab {

ParamReport count_params(const ModelSpec& spec) {
    ParamReport report;
    for (const auto& p : spec.params) {
        std::int64_t n = shape_numel(p.shape);
        if (p.trainable) report.trainable_count += n;
        if (p.prunable) report.kernel_count += n;
        report.per_layer.push_back({p.name, n, p.trainable, p.prunable});
    }
    return report;
}

ParamStore init_weights(const ModelSpec& spec, std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    for (const auto& p : spec.params) {
        Tensor t(p.shape);
        switch (p.init) {
            case ParamInit::zeros:
                break;
            case ParamInit::ones:
                t.fill(1.0f);
                break;
            case ParamInit::he_uniform: {
                double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in));
                for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
                break;
            }
        }
        store.insert(p.name, std::move(t));
    }
    return store;
}

}  // namespace rewindlab
