#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rewindlab/optim.hpp"

using namespace rewindlab;

namespace {

LrSchedule resnet_schedule() { return {0.1, {36000, 54000}, {0.1, 0.1}, 72000}; }
LrSchedule wrn_schedule() { return {0.1, {32000, 48000, 64000}, {0.2, 0.2, 0.2}, 80000}; }

Sgd make_sgd(double momentum, LrSchedule s) { return Sgd(momentum, std::move(s)); }

/// One-tensor convenience wrapper around Sgd::step.
void step_scalar(Sgd& sgd, ParamStore& store, const Tensor& grad) {
    std::unordered_map<std::string, const Tensor*> grads{{"w", &grad}};
    sgd.step(store, {"w"}, grads);
}

}  // namespace

TEST_CASE("lr_at reproduces the published schedules") {
    const LrSchedule rs = resnet_schedule();
    CHECK(lr_at(rs, 0) == 0.1);
    CHECK(lr_at(rs, 35999) == 0.1);
    CHECK(lr_at(rs, 36000) == 0.1 * 0.1);
    CHECK(lr_at(rs, 53999) == 0.1 * 0.1);
    CHECK(lr_at(rs, 54000) == 0.1 * 0.1 * 0.1);
    CHECK(lr_at(rs, 71999) == 0.1 * 0.1 * 0.1);

    const LrSchedule ws = wrn_schedule();
    CHECK(lr_at(ws, 0) == 0.1);
    CHECK(lr_at(ws, 32000) == 0.1 * 0.2);
    CHECK(lr_at(ws, 48000) == 0.1 * 0.2 * 0.2);
    CHECK(lr_at(ws, 64000) == 0.1 * 0.2 * 0.2 * 0.2);
    CHECK(lr_at(ws, 79999) == 0.1 * 0.2 * 0.2 * 0.2);
}

TEST_CASE("lr_at rejects out-of-range iterations") {
    const LrSchedule rs = resnet_schedule();
    CHECK_THROWS_AS(lr_at(rs, -1), std::out_of_range);
    CHECK_THROWS_AS(lr_at(rs, 72000), std::out_of_range);
}

TEST_CASE("lr_at is non-increasing and right-continuous for paper schedules") {
    for (const LrSchedule& s : {resnet_schedule(), wrn_schedule()}) {
        double prev = lr_at(s, 0);
        for (std::int64_t t = 1; t < s.total_iterations; t += 997) {
            const double cur = lr_at(s, t);
            CHECK(cur <= prev);
            prev = cur;
        }
        // right-continuity: the boundary iteration already has the new value
        for (std::size_t i = 0; i < s.boundaries.size(); ++i) {
            CHECK(lr_at(s, s.boundaries[i]) < lr_at(s, s.boundaries[i] - 1));
            CHECK(lr_at(s, s.boundaries[i]) == lr_at(s, s.boundaries[i] + 1));
        }
    }
}

TEST_CASE("schedule validation rejects malformed inputs") {
    CHECK_THROWS_AS((LrSchedule{-0.1, {}, {}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {5, 5}, {0.1, 0.1}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {5, 3}, {0.1, 0.1}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {10}, {0.1}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {5}, {0.1, 0.1}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {5}, {-0.5}, 10}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((LrSchedule{0.1, {}, {}, 0}.validate()), std::invalid_argument);
    CHECK_NOTHROW((LrSchedule{0.1, {5}, {0.1}, 10}.validate()));
    // lr 0 is the degenerate no-op schedule; allowed
    CHECK_NOTHROW(LrSchedule::constant(0.0, 5).validate());
}

TEST_CASE("single Nesterov step matches the hand-computed oracle") {
    ParamStore store;
    store.insert("w", Tensor({1}, {1.0f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.1, 10));
    const Tensor g({1}, {1.0f});
    step_scalar(sgd, store, g);
    // v = 0.9*0 - 0.1*1 = -0.1 ; w = 1 + 0.9*(-0.1) - 0.1*1 = 0.81
    CHECK(store.at("w")[0] == doctest::Approx(0.81).epsilon(1e-6));
    CHECK((*sgd.velocity("w"))[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(sgd.iteration() == 1);
}

TEST_CASE("consecutive steps match an independent scalar simulation") {
    ParamStore store;
    store.insert("w", Tensor({1}, {0.5f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.05, 100));

    // independent simulation in double, same update form
    double w = 0.5, v = 0.0;
    const double mu = 0.9, lr = 0.05, g = 0.3;
    const Tensor gt({1}, {0.3f});
    for (int t = 0; t < 5; ++t) {
        step_scalar(sgd, store, gt);
        v = mu * v - lr * g;
        w = w + mu * v - lr * g;
        CHECK(store.at("w")[0] == doctest::Approx(w).epsilon(1e-5));
    }
}

TEST_CASE("momentum zero reduces to plain SGD") {
    ParamStore store;
    store.insert("w", Tensor({2}, {1.0f, -2.0f}));
    Sgd sgd = make_sgd(0.0, LrSchedule::constant(0.1, 10));
    const Tensor g({2}, {0.5f, -1.0f});
    step_scalar(sgd, store, g);
    CHECK(store.at("w")[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-6));
    CHECK(store.at("w")[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
}

TEST_CASE("the step consumes the schedule at the current iteration") {
    // schedule drops by 10x at t=2; verify step 2 uses the new rate
    ParamStore store;
    store.insert("w", Tensor({1}, {0.0f}));
    Sgd sgd = make_sgd(0.0, LrSchedule{1.0, {2}, {0.1}, 4});
    const Tensor g({1}, {1.0f});
    step_scalar(sgd, store, g);  // t=0, lr=1
    CHECK(store.at("w")[0] == doctest::Approx(-1.0));
    step_scalar(sgd, store, g);  // t=1, lr=1
    CHECK(store.at("w")[0] == doctest::Approx(-2.0));
    step_scalar(sgd, store, g);  // t=2, lr=0.1
    CHECK(store.at("w")[0] == doctest::Approx(-2.1));
}

TEST_CASE("start_iteration offsets the schedule (rewound retraining)") {
    ParamStore store;
    store.insert("w", Tensor({1}, {0.0f}));
    Sgd sgd(0.0, LrSchedule{1.0, {2}, {0.1}, 4}, /*start_iteration=*/2);
    const Tensor g({1}, {1.0f});
    step_scalar(sgd, store, g);  // t=2 immediately -> lr=0.1
    CHECK(store.at("w")[0] == doctest::Approx(-0.1));
    CHECK(sgd.iteration() == 3);
}

TEST_CASE("NaN gradient aborts with tensor name and iteration") {
    ParamStore store;
    store.insert("w", Tensor({1}, {1.0f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.1, 10));
    const Tensor ok({1}, {1.0f});
    step_scalar(sgd, store, ok);
    const Tensor bad({1}, {std::nanf("")});
    try {
        step_scalar(sgd, store, bad);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("w") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);  // iteration 1
    }
}

TEST_CASE("weight decay: with only the L2 gradient, magnitude strictly decreases") {
    // grad of lambda*w^2 is 2*lambda*w; iterate and watch |w| shrink
    ParamStore store;
    store.insert("w", Tensor({1}, {2.0f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.1, 1000));
    const double lambda = 1e-2;
    double prev = 2.0;
    for (int t = 0; t < 50; ++t) {
        const float w = store.at("w")[0];
        const Tensor g({1}, {static_cast<float>(2.0 * lambda * w)});
        step_scalar(sgd, store, g);
        const double cur = std::abs(static_cast<double>(store.at("w")[0]));
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("tensors with zero gradients hold still and grow no velocity") {
    ParamStore store;
    store.insert("a", Tensor({2}, {1.0f, 2.0f}));
    store.insert("b", Tensor({2}, {3.0f, 4.0f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.1, 10));
    const Tensor ga({2}, {0.1f, 0.1f});
    const Tensor gb({2}, {0.0f, 0.0f});
    std::unordered_map<std::string, const Tensor*> grads{{"a", &ga}, {"b", &gb}};
    sgd.step(store, {"a", "b"}, grads);
    CHECK(store.at("b")[0] == 3.0f);
    CHECK(store.at("b")[1] == 4.0f);
    Tensor* vb = sgd.velocity("b");
    REQUIRE(vb != nullptr);
    CHECK((*vb)[0] == 0.0f);
    CHECK((*vb)[1] == 0.0f);
}

TEST_CASE("gradient shape mismatch is an error") {
    ParamStore store;
    store.insert("w", Tensor({2}, {1.0f, 2.0f}));
    Sgd sgd = make_sgd(0.9, LrSchedule::constant(0.1, 10));
    const Tensor g({3}, std::vector<float>{1.0f, 1.0f, 1.0f});
    std::unordered_map<std::string, const Tensor*> grads{{"w", &g}};
    CHECK_THROWS_AS(sgd.step(store, {"w"}, grads), std::runtime_error);
}

TEST_CASE("reference loss: perfect prediction and uniform prediction") {
    SUBCASE("confident correct logits, lambda 0") {
        Tensor64 logits({1, 3}, {50.0, 0.0, 0.0});
        CHECK(regularized_loss(logits, {0}, {}, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("uniform over 10 classes -> ln 10") {
        Tensor64 logits({2, 10});
        CHECK(regularized_loss(logits, {3, 9}, {}, 0.0) ==
              doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
    SUBCASE("L2 term adds lambda * sum of squares") {
        Tensor64 logits({1, 10});
        Tensor64 w({2}, {3.0, 4.0});
        const double base = regularized_loss(logits, {0}, {}, 0.0);
        const double with_l2 = regularized_loss(logits, {0}, {&w}, 1e-4);
        CHECK(with_l2 - base == doctest::Approx(25e-4).epsilon(1e-9));
    }
    SUBCASE("batch size mismatch") {
        Tensor64 logits({2, 10});
        CHECK_THROWS_AS(regularized_loss(logits, {0}, {}, 0.0), std::invalid_argument);
    }
}
