#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rewindlab/model_spec.hpp"

namespace rewindlab {

/// Built model: immutable architecture plus one run's weight state.
struct Model {
    ModelSpec spec;
    ParamStore weights;
};

/// Zoo names accepted by build(): resnet20, resnet56, resnet110, wrn16-8,
/// mlp-small, cnn-small.
std::vector<std::string> model_zoo();

ModelSpec make_model_spec(const std::string& name, int classes, double bn_decay);

/// Plain fully-connected stack with biases; hidden layers use ReLU.
/// Exposed for tests and the mlp-small zoo entry.
ModelSpec make_mlp(const std::string& name, const Shape& input_hwc, const std::vector<int>& hidden,
                   int classes);

Model build(const std::string& name, int classes, std::uint64_t seed, double bn_decay);

}  // namespace rewindlab
