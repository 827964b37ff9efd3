#include "rewindlab/presets.hpp"

#include <stdexcept>

namespace rewindlab {

namespace {

using nlohmann::json;

json paper_preset(const std::string& name, const std::string& model, const std::string& dataset,
                  json schedule, double l2, double bn_decay) {
    return json{{"name", name},
                {"model", model},
                {"dataset", dataset},
                {"mode", "one-shot"},
                {"strategy", "lr_rewind"},
                {"prune", {{"kind", "unstructured"}, {"scope", "global"}, {"compressions", {2.0, 4.0, 8.0, 16.0}}}},
                {"trials", 2},
                {"seed", 1},
                {"optim",
                 {{"momentum", 0.9},
                  {"l2", l2},
                  {"l2_scope", "all"},
                  {"batch_size", 128},
                  {"schedule", std::move(schedule)}}},
                {"bn_decay", bn_decay},
                {"augment", true},
                {"snapshot_cadence", 1000}};
}

// Learning rate 0.1, divided by 10 after 36k and 54k of 72k iterations.
json resnet_schedule() {
    return json{{"base_lr", 0.1},
                {"boundaries", {36000, 54000}},
                {"multipliers", {0.1, 0.1}},
                {"total_iterations", 72000}};
}

// Learning rate 0.1, multiplied by 0.2 after 32k, 48k, 64k of 80k iterations.
json wrn_schedule() {
    return json{{"base_lr", 0.1},
                {"boundaries", {32000, 48000, 64000}},
                {"multipliers", {0.2, 0.2, 0.2}},
                {"total_iterations", 80000}};
}

json desk_schedule() {
    return json{{"base_lr", 0.1},
                {"boundaries", {1000, 1500}},
                {"multipliers", {0.1, 0.1}},
                {"total_iterations", 2000}};
}

json desk_preset(const std::string& name, const std::string& model) {
    return json{{"name", name},
                {"model", model},
                {"dataset",
                 {{"name", "synthetic"},
                  {"synthetic",
                   {{"classes", 10},
                    {"train_examples", 8000},
                    {"validation_examples", 2000},
                    {"max_shift", 4},
                    {"noise_stddev", 32.0},
                    {"template_blend", 0.6},
                    {"seed", 0}}}}},
                {"mode", "one-shot"},
                {"strategy", "finetune"},
                {"prune", {{"kind", "unstructured"}, {"scope", "global"}, {"sparsities", {0.5, 0.8}}}},
                {"trials", 3},
                {"seed", 1},
                {"rewind_iteration", 500},
                {"optim",
                 {{"momentum", 0.9},
                  {"l2", 1e-4},
                  {"l2_scope", "all"},
                  {"batch_size", 32},
                  {"schedule", desk_schedule()}}},
                {"bn_decay", 0.997},
                {"augment", true},
                {"snapshot_cadence", 500}};
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"resnet20-cifar10",  "resnet56-cifar10", "resnet110-cifar10", "resnet56-cifar100",
            "wrn16-8-cifar10",   "desk-cnn-synthetic", "desk-mlp-synthetic", "desk-cnn-cifar10"};
}

bool is_preset(const std::string& name) {
    for (const auto& n : preset_names()) {
        if (n == name) return true;
    }
    return false;
}

nlohmann::json preset_config(const std::string& name) {
    if (name == "resnet20-cifar10") {
        return paper_preset(name, "resnet20", "cifar10", resnet_schedule(), 1e-4, 0.997);
    }
    if (name == "resnet56-cifar10") {
        return paper_preset(name, "resnet56", "cifar10", resnet_schedule(), 1e-4, 0.997);
    }
    if (name == "resnet110-cifar10") {
        return paper_preset(name, "resnet110", "cifar10", resnet_schedule(), 1e-4, 0.997);
    }
    if (name == "resnet56-cifar100") {
        return paper_preset(name, "resnet56", "cifar100", resnet_schedule(), 1e-4, 0.997);
    }
    if (name == "wrn16-8-cifar10") {
        return paper_preset(name, "wrn16-8", "cifar10", wrn_schedule(), 2e-4, 0.9);
    }
    if (name == "desk-cnn-synthetic") return desk_preset(name, "cnn-small");
    if (name == "desk-mlp-synthetic") return desk_preset(name, "mlp-small");
    if (name == "desk-cnn-cifar10") {
        json j = desk_preset(name, "cnn-small");
        j["dataset"] = {{"name", "cifar10"}, {"train_subset", 8000}, {"validation_subset", 2000}};
        return j;
    }
    throw std::invalid_argument("unknown preset '" + name + "'");
}

}  // namespace rewindlab
