#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rewindlab/config.hpp"
#include "rewindlab/presets.hpp"

using namespace rewindlab;
using nlohmann::json;

namespace {

json minimal_config() {
    return json{{"model", "mlp-small"}, {"dataset", "synthetic"}, {"strategy", "finetune"}};
}

std::filesystem::path temp_json(const std::string& stem, const json& j) {
    auto p = std::filesystem::temp_directory_path() /
             (stem + std::to_string(::getpid()) + ".json");
    std::ofstream os(p);
    os << j.dump(2);
    return p;
}

}  // namespace

TEST_CASE("minimal config resolves the documented defaults") {
    ExperimentConfig c = config_from_json(minimal_config());
    CHECK(c.model == "mlp-small");
    CHECK(c.dataset == "synthetic");
    CHECK(c.strategy == "finetune");
    CHECK(c.trials == 2);
    CHECK(c.step_fraction == 0.3);
    CHECK(c.mode == "one-shot");
    // K default: -1 sentinel resolving to N/4
    CHECK(c.rewind_iteration == -1);
    CHECK(c.resolved_rewind_iteration() == c.schedule.total_iterations / 4);
    CHECK(c.prune_kind == "unstructured");
    CHECK(c.prune_scope == "global");
    CHECK(c.momentum == 0.9);
    CHECK(c.finetune_lr == 0.001);
    // one-shot with no explicit targets gets a small default sweep
    CHECK_FALSE(c.compressions.empty());
}

TEST_CASE("unknown keys are rejected with their dotted path") {
    json j = minimal_config();
    j["foo"] = 1;
    CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("foo"), std::invalid_argument);

    json nested = minimal_config();
    nested["optim"] = {{"l2", 1e-4}, {"wut", 3}};
    CHECK_THROWS_WITH_AS(config_from_json(nested), doctest::Contains("optim.wut"),
                         std::invalid_argument);

    json deep = minimal_config();
    deep["prune"] = {{"kind", "unstructured"}, {"sparsity", 0.5}};  // right name is 'sparsities'
    CHECK_THROWS_WITH_AS(config_from_json(deep), doctest::Contains("prune.sparsity"),
                         std::invalid_argument);
}

TEST_CASE("type mismatches name the key") {
    json j = minimal_config();
    j["trials"] = "two";
    CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("trials"), std::invalid_argument);

    json j2 = minimal_config();
    j2["optim"] = {{"l2", "a lot"}};
    CHECK_THROWS_WITH_AS(config_from_json(j2), doctest::Contains("l2"), std::invalid_argument);
}

TEST_CASE("dataset accepts a bare string or a detailed object") {
    ExperimentConfig c1 = config_from_json(minimal_config());
    CHECK(c1.dataset == "synthetic");

    json j = minimal_config();
    j["dataset"] = {{"name", "cifar10"}, {"train_subset", 8000}, {"validation_subset", 2000}};
    ExperimentConfig c2 = config_from_json(j);
    CHECK(c2.dataset == "cifar10");
    CHECK(c2.train_subset == 8000);
    CHECK(c2.validation_subset == 2000);

    json bad = minimal_config();
    bad["dataset"] = {{"name", "cifar10"}, {"subset", 1}};
    CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("dataset.subset"),
                         std::invalid_argument);
}

TEST_CASE("overrides apply dotted paths with JSON value parsing") {
    json j = minimal_config();
    apply_override(j, "optim.l2=2e-4");
    apply_override(j, "prune.compressions=[2,4,8]");
    apply_override(j, "name=sweep-1");
    apply_override(j, "augment=false");
    ExperimentConfig c = config_from_json(j);
    CHECK(c.l2 == 2e-4);
    CHECK(c.compressions == std::vector<double>{2.0, 4.0, 8.0});
    CHECK(c.name == "sweep-1");  // bare word parsed as string
    CHECK(c.augment == false);

    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), std::invalid_argument);
    CHECK_THROWS_AS(apply_override(j, "=5"), std::invalid_argument);
    CHECK_THROWS_AS(apply_override(j, "a..b=5"), std::invalid_argument);
}

TEST_CASE("presets parse, validate, and carry the published hyper-parameters") {
    for (const std::string& name : preset_names()) {
        CAPTURE(name);
        ExperimentConfig c = parse_config(name, {});
        CHECK(c.name == name);
        CHECK(c.trials >= 1);
    }

    ExperimentConfig resnet = parse_config("resnet20-cifar10", {});
    CHECK(resnet.schedule.base_lr == 0.1);
    CHECK(resnet.schedule.boundaries == std::vector<std::int64_t>{36000, 54000});
    CHECK(resnet.schedule.total_iterations == 72000);
    CHECK(resnet.l2 == 1e-4);
    CHECK(resnet.bn_decay == 0.997);
    CHECK(resnet.batch_size == 128);

    ExperimentConfig wrn = parse_config("wrn16-8-cifar10", {});
    CHECK(wrn.schedule.boundaries == std::vector<std::int64_t>{32000, 48000, 64000});
    CHECK(wrn.schedule.multipliers == std::vector<double>{0.2, 0.2, 0.2});
    CHECK(wrn.schedule.total_iterations == 80000);
    CHECK(wrn.l2 == 2e-4);
    CHECK(wrn.bn_decay == 0.9);

    ExperimentConfig c100 = parse_config("resnet56-cifar100", {});
    CHECK(c100.dataset == "cifar100");
}

TEST_CASE("preset override reproduces the WRN regularization on another model") {
    ExperimentConfig c = parse_config("resnet20-cifar10", {"optim.l2=2e-4"});
    CHECK(c.l2 == 2e-4);
    CHECK(c.model == "resnet20");
}

TEST_CASE("unknown preset or missing file lists the presets") {
    try {
        parse_config("no-such-thing", {});
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("no-such-thing") != std::string::npos);
        CHECK(msg.find("desk-cnn-synthetic") != std::string::npos);
    }
}

TEST_CASE("config files load from disk and report parse errors with context") {
    json j = minimal_config();
    j["trials"] = 3;
    const auto path = temp_json("cfg_ok", j);
    ExperimentConfig c = parse_config(path.string(), {"seed=7"});
    std::filesystem::remove(path);
    CHECK(c.trials == 3);
    CHECK(c.seed == 7);

    const auto bad = std::filesystem::temp_directory_path() /
                     ("cfg_bad" + std::to_string(::getpid()) + ".json");
    {
        std::ofstream os(bad);
        os << "{ not json";
    }
    CHECK_THROWS_WITH_AS(parse_config(bad.string(), {}), doctest::Contains(bad.string().c_str()),
                         std::invalid_argument);
    std::filesystem::remove(bad);
}

TEST_CASE("effective config echo round-trips to an identical config") {
    ExperimentConfig c = parse_config("desk-cnn-synthetic", {"strategy=weight_rewind", "trials=3"});
    nlohmann::ordered_json echo = config_to_json(c);
    ExperimentConfig again = config_from_json(json::parse(echo.dump()));
    nlohmann::ordered_json echo2 = config_to_json(again);
    CHECK(echo.dump(2) == echo2.dump(2));
    CHECK(again.strategy == "weight_rewind");
    CHECK(again.trials == 3);
    CHECK(again.schedule.total_iterations == c.schedule.total_iterations);
    CHECK(again.synthetic.train_examples == c.synthetic.train_examples);
}

TEST_CASE("desk presets stay inside a desk-scale budget") {
    for (const char* name : {"desk-cnn-synthetic", "desk-mlp-synthetic", "desk-cnn-cifar10"}) {
        ExperimentConfig c = parse_config(name, {});
        CAPTURE(name);
        CHECK(c.schedule.total_iterations <= 5000);
        CHECK(c.trials <= 5);
        // every target must be either a compression or sparsity list
        CHECK((c.compressions.size() + c.sparsities.size()) >= 1);
    }
}

TEST_CASE("config rejects a non-object root") {
    CHECK_THROWS_AS(config_from_json(json::array()), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(json(3)), std::invalid_argument);
}
