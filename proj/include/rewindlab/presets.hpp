#pragma once

// Bundled experiment presets: the five paper-scale configurations with
// their published hyper-parameters, plus reduced desk-scale setups that
// run in minutes on a single core.

#include <string>
#include <vector>

#include "json.hpp"

namespace rewindlab {

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
nlohmann::json preset_config(const std::string& name);

}  // namespace rewindlab
