#pragma once

// Strict JSON experiment configuration.
//
// Unknown keys are rejected (naming the offending dotted path), types are
// checked, and defaults are filled for everything absent. The effective
// config can be echoed back to JSON; re-parsing the echo reproduces the
// identical config.

#include <string>
#include <vector>

#include "json.hpp"
#include "rewindlab/experiment.hpp"

namespace rewindlab {

// Strict parse; throws std::invalid_argument naming the bad key or value.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Full effective config (every field, defaults resolved).
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

// `key.path=value` with JSON-parsed values (bare words fall back to
// strings): `optim.l2=2e-4`, `prune.compressions=[2,4]`, `model=resnet20`.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Loads a config file, or a bundled preset when `path_or_preset` names one,
// then applies overrides in order and validates.
ExperimentConfig parse_config(const std::string& path_or_preset,
                              const std::vector<std::string>& overrides);

}  // namespace rewindlab
