#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rewindlab/checkpoint.hpp"
#include "rewindlab/data.hpp"
#include "rewindlab/models.hpp"
#include "rewindlab/prune.hpp"
#include "rewindlab/rewind.hpp"
#include "rewindlab/trainer.hpp"

using namespace rewindlab;

namespace {

/// Shared desk fixture: a tiny MLP on small synthetic images. Everything
/// below trains in milliseconds.
struct Lab {
    ModelSpec spec;
    Dataset train_set;
    Dataset val_set;
    AugmentPipeline pipeline;
    LrSchedule schedule{0.1, {20, 30}, {0.1, 0.1}, 40};

    Lab() {
        SyntheticSpec s;
        s.classes = 4;
        s.height = 8;
        s.width = 8;
        s.channels = 1;
        s.train_examples = 64;
        s.validation_examples = 16;
        s.max_shift = 2;
        s.noise_stddev = 10.0;
        s.seed = 5;
        auto pair = make_synthetic(s);
        train_set = std::move(pair.first);
        val_set = std::move(pair.second);
        spec = make_mlp("lab-mlp", {8, 8, 1}, {12}, 4);
        pipeline.stats = standardize_stats(train_set);
        pipeline.pad = 1;
        pipeline.crop = 8;
    }

    TrainOptions options(std::uint64_t seed = 9) const {
        TrainOptions o;
        o.schedule = schedule;
        o.momentum = 0.9;
        o.loss.l2_coefficient = 1e-4;
        o.batch_size = 16;
        o.augment = true;
        o.data_seed = seed;
        return o;
    }

    RetrainEnv env() const {
        RetrainEnv e;
        e.train_data = &train_set;
        e.pipeline = &pipeline;
        e.loss.l2_coefficient = 1e-4;
        e.momentum = 0.9;
        e.batch_size = 16;
        e.augment = true;
        return e;
    }
};

}  // namespace

TEST_CASE("training is a pure function of weights, data, and options") {
    Lab lab;
    ParamStore w1 = init_weights(lab.spec, 1);
    ParamStore w2 = init_weights(lab.spec, 1);
    ParamStore w3 = init_weights(lab.spec, 1);
    train(lab.spec, w1, lab.train_set, lab.pipeline, lab.options(9));
    train(lab.spec, w2, lab.train_set, lab.pipeline, lab.options(9));
    train(lab.spec, w3, lab.train_set, lab.pipeline, lab.options(10));
    CHECK(state_equal(w1, w2));
    CHECK_FALSE(state_equal(w1, w3));
}

TEST_CASE("training mutates batch-norm moving statistics when BN is present") {
    // the CNN zoo entry has BN; a few steps must move the stats
    ModelSpec spec = make_model_spec("cnn-small", 4, 0.9);
    SyntheticSpec s;
    s.classes = 4;
    s.train_examples = 16;
    s.validation_examples = 8;
    s.seed = 2;
    auto [train_set, val_set] = make_synthetic(s);
    AugmentPipeline pipe;
    pipe.stats = standardize_stats(train_set);
    ParamStore w = init_weights(spec, 3);
    const Tensor before = w.at("conv1/bn/moving_mean");
    TrainOptions o;
    o.schedule = LrSchedule::constant(0.01, 2);
    o.batch_size = 8;
    o.data_seed = 4;
    train(spec, w, train_set, pipe, o);
    CHECK_FALSE(bitwise_equal(w.at("conv1/bn/moving_mean"), before));
}

TEST_CASE("masked positions stay exactly zero through training") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 7);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.5);
    apply_mask(w, mask);

    TrainOptions o = lab.options();
    bool checked_midway = false;
    o.on_iteration = [&](std::int64_t it, const ParamStore& state) {
        if (it != 17) return;  // arbitrary mid-run iteration
        checked_midway = true;
        for (const auto& e : mask.entries)
            for (std::size_t i = 0; i < e.keep.size(); ++i)
                if (!e.keep[i]) CHECK(state.at(e.name).data[i] == 0.0f);
    };
    train(lab.spec, w, lab.train_set, lab.pipeline, o, &mask);
    CHECK(checked_midway);

    std::int64_t surviving_nonzero = 0;
    for (const auto& e : mask.entries) {
        const Tensor& t = w.at(e.name);
        for (std::size_t i = 0; i < e.keep.size(); ++i) {
            if (!e.keep[i]) {
                CHECK(t.data[i] == 0.0f);
            } else if (t.data[i] != 0.0f) {
                ++surviving_nonzero;
            }
        }
    }
    CHECK(surviving_nonzero > 0);  // training actually happened
}

TEST_CASE("snapshots land exactly where the policy asks") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 2);
    TrainOptions o = lab.options();
    o.snapshot_policy.cadence = 16;
    o.snapshot_policy.forced = {20, 30, 10};  // schedule boundaries + K
    CheckpointStore store("snap-test");
    train(lab.spec, w, lab.train_set, lab.pipeline, o, nullptr, &store);
    CHECK(store.iterations() == std::vector<std::int64_t>{0, 10, 16, 20, 30, 32, 40});
}

TEST_CASE("snapshots record the exact state the run passed through") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 4);
    TrainOptions o = lab.options();
    o.snapshot_policy.cadence = 10;
    std::map<std::int64_t, ParamStore> history;
    o.on_iteration = [&](std::int64_t it, const ParamStore& state) {
        if (it % 10 == 0 || it == 40) history.emplace(it, state);
    };
    CheckpointStore store("history");
    train(lab.spec, w, lab.train_set, lab.pipeline, o, nullptr, &store);

    for (std::int64_t k : store.iterations()) {
        REQUIRE(history.count(k) == 1);
        const Checkpoint& cp = store.restore(k);
        for (const auto& name : cp.state.order)
            CHECK(bitwise_equal(cp.state.at(name), history.at(k).at(name)));
    }
    // the final state of the run is the final snapshot
    CHECK(state_equal(store.restore(40).state, w));
}

TEST_CASE("lr_trace follows the schedule, including offsets") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 3);
    TrainOptions o = lab.options();
    TrainResult r = train(lab.spec, w, lab.train_set, lab.pipeline, o);
    REQUIRE(r.steps == 40);
    CHECK(r.lr_trace[0] == 0.1);
    CHECK(r.lr_trace[19] == 0.1);
    CHECK(r.lr_trace[20] == doctest::Approx(0.01));
    CHECK(r.lr_trace[30] == doctest::Approx(0.001));

    // a retrain from offset 20 consumes lr(20) first and runs 20 steps
    ParamStore w2 = init_weights(lab.spec, 3);
    TrainOptions tail = lab.options();
    tail.start_iteration = 20;
    TrainResult rt = train(lab.spec, w2, lab.train_set, lab.pipeline, tail);
    CHECK(rt.steps == 20);
    CHECK(rt.lr_trace[0] == doctest::Approx(0.01));
}

TEST_CASE("the iteration window is validated against the schedule") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 3);
    TrainOptions o = lab.options();
    o.start_iteration = 30;
    o.steps = 20;  // 30+20 > 40
    CHECK_THROWS_AS(train(lab.spec, w, lab.train_set, lab.pipeline, o), std::invalid_argument);
    o.start_iteration = -1;
    o.steps = 2;
    CHECK_THROWS_AS(train(lab.spec, w, lab.train_set, lab.pipeline, o), std::invalid_argument);
}

TEST_CASE("a NaN loss aborts with the iteration in the message") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 3);
    // a divergent learning rate produces inf/NaN within a few steps
    TrainOptions o = lab.options();
    o.schedule = LrSchedule::constant(1e18, 40);
    try {
        train(lab.spec, w, lab.train_set, lab.pipeline, o);
        FAIL("expected divergence");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("evaluate computes top-1 accuracy with ties to the lowest index") {
    Lab lab;
    // zero weights -> all logits equal -> argmax picks class 0
    ParamStore w = init_weights(lab.spec, 1);
    for (const auto& name : w.order) w.at(name).fill(0.0f);
    const double acc = evaluate(lab.spec, w, lab.val_set, lab.pipeline.stats, 5);
    std::int64_t zeros = 0;
    for (int lbl : lab.val_set.labels) zeros += lbl == 0 ? 1 : 0;
    CHECK(acc == doctest::Approx(static_cast<double>(zeros) / lab.val_set.size()).epsilon(1e-12));
}

TEST_CASE("retrain plans implement the three strategies") {
    LrSchedule original{0.1, {36000, 54000}, {0.1, 0.1}, 72000};

    RetrainPlan ft = make_retrain_plan(Strategy::finetune, original, 10000, 0.001);
    CHECK(ft.retrain_iterations == 72000);
    CHECK(ft.schedule_offset == 0);
    CHECK(ft.schedule.base_lr == 0.001);
    CHECK(ft.schedule.boundaries.empty());

    RetrainPlan wr = make_retrain_plan(Strategy::weight_rewind, original, 36000);
    CHECK(wr.retrain_iterations == 72000 - 36000);
    CHECK(wr.schedule_offset == 36000);
    CHECK(lr_at(wr.schedule, wr.schedule_offset) == doctest::Approx(0.01));

    RetrainPlan lr = make_retrain_plan(Strategy::lr_rewind, original, 36000);
    CHECK(lr.retrain_iterations == 72000);
    CHECK(lr.schedule_offset == 0);
    CHECK(lr_at(lr.schedule, 0) == 0.1);

    CHECK_THROWS_AS(make_retrain_plan(Strategy::weight_rewind, original, -1), std::invalid_argument);
    CHECK_THROWS_AS(make_retrain_plan(Strategy::weight_rewind, original, 72001), std::invalid_argument);
}

TEST_CASE("strategy names round-trip") {
    for (Strategy s : {Strategy::finetune, Strategy::weight_rewind, Strategy::lr_rewind})
        CHECK(strategy_from_name(strategy_name(s)) == s);
    CHECK_THROWS_AS(strategy_from_name("magnitude"), std::invalid_argument);
}

TEST_CASE("zero-step and zero-lr retrains leave weights unchanged") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 11);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.3);
    ParamStore pruned = w;
    apply_mask(pruned, mask);

    SUBCASE("weight_rewind at K=N performs no steps") {
        CheckpointStore store("full");
        TrainOptions o = lab.options();
        o.snapshot_policy.cadence = 10;
        ParamStore trained = init_weights(lab.spec, 11);
        train(lab.spec, trained, lab.train_set, lab.pipeline, o, nullptr, &store);

        TrainResult stats;
        ParamStore out = run_weight_rewind(lab.spec, lab.env(), store, 40, mask, lab.schedule, 5, &stats);
        CHECK(stats.steps == 0);
        ParamStore expected = store.restore(40).state;
        apply_mask(expected, mask);
        CHECK(state_equal(out, expected));
    }

    SUBCASE("finetune with lr=0 and no regularization is inert") {
        RetrainEnv env = lab.env();
        env.loss.l2_coefficient = 0.0;
        ParamStore out = run_finetune(lab.spec, env, pruned, mask, lab.schedule, 0.0, 5);
        CHECK(state_equal(out, pruned));
    }
}

TEST_CASE("rewound weights equal the masked snapshot bit-exactly") {
    Lab lab;
    CheckpointStore store("rw");
    ParamStore w = init_weights(lab.spec, 13);
    const ParamStore initial = w;
    TrainOptions o = lab.options();
    o.snapshot_policy.cadence = 10;
    train(lab.spec, w, lab.train_set, lab.pipeline, o, nullptr, &store);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.5);

    SUBCASE("K=10 matches the mid-run snapshot") {
        ParamStore r = rewound_weights(store, 10, mask);
        const ParamStore& snap = store.restore(10).state;
        for (const auto& e : mask.entries) {
            const Tensor& rt = r.at(e.name);
            const Tensor& st = snap.at(e.name);
            for (std::size_t i = 0; i < e.keep.size(); ++i) {
                if (e.keep[i]) {
                    CHECK(rt.data[i] == st.data[i]);
                } else {
                    CHECK(rt.data[i] == 0.0f);
                }
            }
        }
    }
    SUBCASE("K=0 is the lottery-ticket reset to initialization") {
        ParamStore r = rewound_weights(store, 0, mask);
        ParamStore expected = initial;
        apply_mask(expected, mask);
        CHECK(state_equal(r, expected));
    }
    SUBCASE("unstored K lists what exists") {
        CHECK_THROWS_AS(rewound_weights(store, 7, mask), std::out_of_range);
    }
}

TEST_CASE("retrain iteration accounting: N, N-K, N") {
    Lab lab;
    CheckpointStore store("acct");
    ParamStore w = init_weights(lab.spec, 17);
    TrainOptions o = lab.options();
    o.snapshot_policy.cadence = 10;
    train(lab.spec, w, lab.train_set, lab.pipeline, o, nullptr, &store);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.5);
    ParamStore pruned = w;
    apply_mask(pruned, mask);

    TrainResult ft, wr, lr;
    run_finetune(lab.spec, lab.env(), pruned, mask, lab.schedule, 0.001, 5, &ft);
    run_weight_rewind(lab.spec, lab.env(), store, 10, mask, lab.schedule, 5, &wr);
    run_lr_rewind(lab.spec, lab.env(), pruned, mask, lab.schedule, 5, &lr);
    CHECK(ft.steps == 40);
    CHECK(wr.steps == 30);
    CHECK(lr.steps == 40);
    // schedule consumption starts at lr(K) for weight rewinding
    CHECK(wr.lr_trace[0] == 0.1);
    CHECK(wr.lr_trace[10] == doctest::Approx(0.01));  // global iteration 20
    CHECK(lr.lr_trace[0] == 0.1);
    CHECK(ft.lr_trace[0] == 0.001);
    CHECK(ft.lr_trace[39] == 0.001);
}

TEST_CASE("lr rewinding equals weight rewinding at K=N plus a schedule-reset retrain") {
    Lab lab;
    CheckpointStore store("equiv");
    ParamStore w = init_weights(lab.spec, 23);
    TrainOptions o = lab.options();
    o.snapshot_policy.cadence = 10;
    train(lab.spec, w, lab.train_set, lab.pipeline, o, nullptr, &store);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.5);
    ParamStore pruned = w;
    apply_mask(pruned, mask);

    const std::uint64_t seed = 31;
    ParamStore via_lr = run_lr_rewind(lab.spec, lab.env(), pruned, mask, lab.schedule, seed);

    ParamStore rewound = run_weight_rewind(lab.spec, lab.env(), store, 40, mask, lab.schedule, seed);
    RetrainPlan reset = make_retrain_plan(Strategy::lr_rewind, lab.schedule, 40);
    ParamStore via_wr = run_retrain(lab.spec, lab.env(), rewound, mask, reset, seed);

    CHECK(state_equal(via_lr, via_wr));
}

TEST_CASE("retrains start from zero velocity (two identical calls agree)") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 29);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.4);
    ParamStore pruned = w;
    apply_mask(pruned, mask);
    ParamStore a = run_lr_rewind(lab.spec, lab.env(), pruned, mask, lab.schedule, 77);
    ParamStore b = run_lr_rewind(lab.spec, lab.env(), pruned, mask, lab.schedule, 77);
    CHECK(state_equal(a, b));
}

TEST_CASE("retraining improves on the freshly pruned network at high sparsity") {
    Lab lab;
    ParamStore w = init_weights(lab.spec, 41);
    TrainOptions o = lab.options();
    train(lab.spec, w, lab.train_set, lab.pipeline, o);
    PruneMask mask = prune_unstructured(prunable_view(lab.spec, w), 0.8);
    ParamStore pruned = w;
    apply_mask(pruned, mask);

    const double before = evaluate(lab.spec, pruned, lab.val_set, lab.pipeline.stats);
    ParamStore after = run_lr_rewind(lab.spec, lab.env(), pruned, mask, lab.schedule, 3);
    const double acc = evaluate(lab.spec, after, lab.val_set, lab.pipeline.stats);
    CHECK(acc >= before);
}
