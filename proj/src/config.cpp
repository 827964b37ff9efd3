#include "rewindlab/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "rewindlab/presets.hpp"

namespace rewindlab {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& path, const std::string& why) {
    throw std::invalid_argument("config key '" + path + "': " + why);
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            bad_key(path.empty() ? key : path + "." + key, "unknown key");
        }
    }
}

template <typename T>
void get_to(const json& obj, const std::string& path, const std::string& key, T& out) {
    if (!obj.contains(key)) return;
    try {
        obj.at(key).get_to(out);
    } catch (const json::exception& e) {
        bad_key(path.empty() ? key : path + "." + key, std::string("type mismatch (") + e.what() + ")");
    }
}

void parse_synthetic(const json& j, const std::string& path, SyntheticSpec& out) {
    if (!j.is_object()) bad_key(path, "must be an object");
    check_keys(j, path, {"classes", "train_examples", "validation_examples", "max_shift",
                         "noise_stddev", "template_blend", "seed"});
    get_to(j, path, "classes", out.classes);
    get_to(j, path, "train_examples", out.train_examples);
    get_to(j, path, "validation_examples", out.validation_examples);
    get_to(j, path, "max_shift", out.max_shift);
    get_to(j, path, "noise_stddev", out.noise_stddev);
    get_to(j, path, "template_blend", out.template_blend);
    get_to(j, path, "seed", out.seed);
}

void parse_dataset(const json& j, ExperimentConfig& cfg) {
    if (j.is_string()) {
        cfg.dataset = j.get<std::string>();
        return;
    }
    if (!j.is_object()) bad_key("dataset", "must be a name or an object");
    check_keys(j, "dataset", {"name", "data_dir", "train_subset", "validation_subset", "synthetic"});
    get_to(j, "dataset", "name", cfg.dataset);
    get_to(j, "dataset", "data_dir", cfg.data_dir);
    get_to(j, "dataset", "train_subset", cfg.train_subset);
    get_to(j, "dataset", "validation_subset", cfg.validation_subset);
    if (j.contains("synthetic")) parse_synthetic(j.at("synthetic"), "dataset.synthetic", cfg.synthetic);
}

void parse_prune(const json& j, ExperimentConfig& cfg) {
    if (!j.is_object()) bad_key("prune", "must be an object");
    check_keys(j, "prune",
               {"kind", "scope", "compressions", "sparsities", "step_fraction", "rounds", "exempt"});
    get_to(j, "prune", "kind", cfg.prune_kind);
    get_to(j, "prune", "scope", cfg.prune_scope);
    get_to(j, "prune", "compressions", cfg.compressions);
    get_to(j, "prune", "sparsities", cfg.sparsities);
    get_to(j, "prune", "step_fraction", cfg.step_fraction);
    get_to(j, "prune", "rounds", cfg.rounds);
    get_to(j, "prune", "exempt", cfg.prune_exempt);
}

void parse_schedule(const json& j, LrSchedule& out) {
    if (!j.is_object()) bad_key("optim.schedule", "must be an object");
    check_keys(j, "optim.schedule", {"base_lr", "boundaries", "multipliers", "total_iterations"});
    get_to(j, "optim.schedule", "base_lr", out.base_lr);
    get_to(j, "optim.schedule", "boundaries", out.boundaries);
    get_to(j, "optim.schedule", "multipliers", out.multipliers);
    get_to(j, "optim.schedule", "total_iterations", out.total_iterations);
}

void parse_optim(const json& j, ExperimentConfig& cfg) {
    if (!j.is_object()) bad_key("optim", "must be an object");
    check_keys(j, "optim", {"momentum", "l2", "l2_scope", "batch_size", "schedule"});
    get_to(j, "optim", "momentum", cfg.momentum);
    get_to(j, "optim", "l2", cfg.l2);
    get_to(j, "optim", "l2_scope", cfg.l2_scope);
    get_to(j, "optim", "batch_size", cfg.batch_size);
    if (j.contains("schedule")) parse_schedule(j.at("schedule"), cfg.schedule);
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    ExperimentConfig cfg;
    // Runnable desk-scale defaults; presets and files override.
    cfg.schedule = LrSchedule{0.1, {1000, 1500}, {0.1, 0.1}, 2000};
    cfg.batch_size = 32;

    check_keys(j, "", {"name", "model", "dataset", "mode", "strategy", "prune", "trials", "seed",
                       "rewind_iteration", "finetune_lr", "optim", "bn_decay", "augment",
                       "snapshot_cadence", "out_dir", "deterministic"});
    get_to(j, "", "name", cfg.name);
    get_to(j, "", "model", cfg.model);
    if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg);
    get_to(j, "", "mode", cfg.mode);
    get_to(j, "", "strategy", cfg.strategy);
    if (j.contains("prune")) parse_prune(j.at("prune"), cfg);
    get_to(j, "", "trials", cfg.trials);
    get_to(j, "", "seed", cfg.seed);
    get_to(j, "", "rewind_iteration", cfg.rewind_iteration);
    get_to(j, "", "finetune_lr", cfg.finetune_lr);
    if (j.contains("optim")) parse_optim(j.at("optim"), cfg);
    get_to(j, "", "bn_decay", cfg.bn_decay);
    get_to(j, "", "augment", cfg.augment);
    get_to(j, "", "snapshot_cadence", cfg.snapshot_cadence);
    get_to(j, "", "out_dir", cfg.out_dir);
    get_to(j, "", "deterministic", cfg.deterministic);

    if (cfg.mode == "one-shot" && cfg.compressions.empty() && cfg.sparsities.empty()) {
        cfg.compressions = {2.0, 4.0};
    }
    cfg.validate();
    return cfg;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["name"] = cfg.name;
    j["model"] = cfg.model;
    j["dataset"] = {{"name", cfg.dataset},
                    {"data_dir", cfg.data_dir},
                    {"train_subset", cfg.train_subset},
                    {"validation_subset", cfg.validation_subset},
                    {"synthetic",
                     {{"classes", cfg.synthetic.classes},
                      {"train_examples", cfg.synthetic.train_examples},
                      {"validation_examples", cfg.synthetic.validation_examples},
                      {"max_shift", cfg.synthetic.max_shift},
                      {"noise_stddev", cfg.synthetic.noise_stddev},
                      {"template_blend", cfg.synthetic.template_blend},
                      {"seed", cfg.synthetic.seed}}}};
    j["mode"] = cfg.mode;
    j["strategy"] = cfg.strategy;
    j["prune"] = {{"kind", cfg.prune_kind},
                  {"scope", cfg.prune_scope},
                  {"compressions", cfg.compressions},
                  {"sparsities", cfg.sparsities},
                  {"step_fraction", cfg.step_fraction},
                  {"rounds", cfg.rounds},
                  {"exempt", cfg.prune_exempt}};
    j["trials"] = cfg.trials;
    j["seed"] = cfg.seed;
    j["rewind_iteration"] = cfg.rewind_iteration;
    j["finetune_lr"] = cfg.finetune_lr;
    j["optim"] = {{"momentum", cfg.momentum},
                  {"l2", cfg.l2},
                  {"l2_scope", cfg.l2_scope},
                  {"batch_size", cfg.batch_size},
                  {"schedule",
                   {{"base_lr", cfg.schedule.base_lr},
                    {"boundaries", cfg.schedule.boundaries},
                    {"multipliers", cfg.schedule.multipliers},
                    {"total_iterations", cfg.schedule.total_iterations}}}};
    j["bn_decay"] = cfg.bn_decay;
    j["augment"] = cfg.augment;
    j["snapshot_cadence"] = cfg.snapshot_cadence;
    j["out_dir"] = cfg.out_dir;
    j["deterministic"] = cfg.deterministic;
    return j;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("override '" + assignment + "' is not of the form key.path=value");
    }
    const std::string dotted = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(value_text);
    } catch (const nlohmann::json::exception&) {
        value = value_text;  // bare words (model names, strategies) are strings
    }

    nlohmann::json* node = &j;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot - pos);
        if (part.empty()) throw std::invalid_argument("override key '" + dotted + "' has an empty segment");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
        node = &(*node)[part];
        if (!node->is_object()) {
            throw std::invalid_argument("override key '" + dotted + "': '" + part + "' is not an object");
        }
        pos = dot + 1;
    }
}

ExperimentConfig parse_config(const std::string& path_or_preset,
                              const std::vector<std::string>& overrides) {
    nlohmann::json j;
    if (std::filesystem::exists(path_or_preset)) {
        std::ifstream is(path_or_preset);
        if (!is) throw std::runtime_error("cannot open config file '" + path_or_preset + "'");
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config file '" + path_or_preset + "': " + e.what());
        }
    } else if (is_preset(path_or_preset)) {
        j = preset_config(path_or_preset);
    } else {
        std::string names;
        for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
        throw std::invalid_argument("'" + path_or_preset +
                                    "' is neither a config file nor a preset; presets: " + names);
    }
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

}  // namespace rewindlab
