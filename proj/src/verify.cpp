#include "rewindlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>
#include <vector>

#include "rewindlab/checkpoint.hpp"
#include "rewindlab/data.hpp"
#include "rewindlab/models.hpp"
#include "rewindlab/optim.hpp"
#include "rewindlab/prune.hpp"
#include "rewindlab/rewind.hpp"
#include "rewindlab/trainer.hpp"

namespace rewindlab {

namespace {

struct Reporter {
    std::ostream& os;
    int failures = 0;

    void check(bool ok, const std::string& name, const std::string& details) {
        os << (ok ? "PASS " : "FAIL ") << name << ": " << details << "\n";
        if (!ok) ++failures;
    }
};

// --- architecture parameter counts ------------------------------------------

void check_param_counts(Reporter& r) {
    const struct {
        const char* model;
        std::int64_t trainable, kernels;
    } expected[] = {
        {"resnet20", 272282, 270896},
        {"resnet56", 855578, 851504},
        {"resnet110", 1730522, 1722416},
        {"wrn16-8", 10961370, 10954160},
    };
    for (const auto& e : expected) {
        ParamReport rep = count_params(make_model_spec(e.model, 10, 0.997));
        std::ostringstream details;
        details << e.model << " trainable=" << rep.trainable_count << " kernels=" << rep.kernel_count
                << " (expected " << e.trainable << ", " << e.kernels << ")";
        r.check(rep.trainable_count == e.trainable && rep.kernel_count == e.kernels, "param-count",
                details.str());
    }
}

// --- finite-difference gradient check ----------------------------------------

// Central differences in double precision against the graph's reverse-mode
// gradients for every requires_grad input. Loss must be a pure function of
// the bindings (batch-norm moving statistics are written but never read in
// training mode, so they do not break purity).
double max_fd_rel_error(Graph<double>& graph, const Bindings<double>& bindings,
                        const std::string& loss, const std::vector<std::string>& params,
                        bool training) {
    Bindings<double> work = bindings;
    graph.forward(work, training);
    graph.backward(loss);
    std::map<std::string, Tensor64> analytic;
    for (const auto& name : params) analytic[name] = graph.grad(name);

    const double h = 1e-3;
    const double floor = 1e-6;
    double worst = 0.0;
    for (const auto& name : params) {
        const Tensor64& base = bindings.at(name);
        for (std::size_t i = 0; i < base.data.size(); ++i) {
            auto eval = [&](double delta) {
                Bindings<double> b = bindings;
                b[name].data[i] += delta;
                graph.forward(b, training);
                return graph.value(loss).data[0];
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double a = analytic[name].data[i];
            const double rel = std::fabs(a - numeric) /
                               std::max({std::fabs(a), std::fabs(numeric), floor});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

void check_gradients(Reporter& r) {
    // A composed CNN covering conv (strided + SAME), batch-norm (training
    // mode), relu, residual add, pooling, dense, softmax cross-entropy, and
    // the L2 term.
    ModelBuilder b;
    std::string x = b.input({6, 6, 2});
    std::string c1 = b.conv("c1", x, 3, 2, 3, 2);
    std::string n1 = b.batchnorm("n1", c1, 3, 0.9);
    std::string r1 = b.relu("r1", n1);
    std::string c2 = b.conv("c2", r1, 3, 3, 3, 1);
    std::string a1 = b.add("a1", c2, r1);
    std::string gap = b.global_avg_pool("gap", a1);
    std::string fc = b.dense("fc", gap, 3, 4);
    ModelSpec spec = b.finish("gradcheck-cnn", 4, fc);

    LossConfig loss_cfg;
    loss_cfg.l2_coefficient = 1e-3;
    CompiledModel<double> model;
    compile_model(spec, loss_cfg, model, ConvImpl::reference);

    Rng rng(0xced5eedull);
    Bindings<double> bindings;
    ParamStore init = init_weights(spec, 7);
    std::vector<std::string> params;
    for (const auto& p : spec.params) {
        bindings[p.name] = init.at(p.name).cast<double>();
        if (p.trainable) params.push_back(p.name);
    }
    Tensor64 x_val({3, 6, 6, 2});
    for (auto& v : x_val.data) {
        // Keep activations away from relu kinks for finite differences.
        double u = rng.normal();
        v = (u >= 0 ? u + 0.05 : u - 0.05);
    }
    Tensor64 labels({3});
    for (std::size_t i = 0; i < 3; ++i) labels.data[i] = static_cast<double>(rng.uniform_int(4));
    bindings["x"] = x_val;
    bindings["labels"] = labels;

    const double worst = max_fd_rel_error(model.graph, bindings, "loss", params, /*training=*/true);
    std::ostringstream details;
    details << "composed CNN, max relative error " << std::scientific << std::setprecision(2)
            << worst << " (tolerance 1e-4)";
    r.check(worst < 1e-4, "gradient-check", details.str());
}

void check_conv_impl_agreement(Reporter& r) {
    Rng rng(0x5eedbeefull);
    double worst = 0.0;
    for (int stride : {1, 2}) {
        for (Padding pad : {Padding::same, Padding::valid}) {
            Graph<float> ref_g, fast_g;
            auto build = [&](Graph<float>& g, ConvImpl impl) {
                auto* x = g.input("x", {2, 5, 5, 3});
                auto* k = g.input("k", {3, 3, 3, 4});
                g.conv2d("y", x, k, stride, pad, impl);
            };
            build(ref_g, ConvImpl::reference);
            build(fast_g, ConvImpl::im2col);
            Bindings<float> bind;
            Tensor x({2, 5, 5, 3}), k({3, 3, 3, 4});
            for (auto& v : x.data) v = static_cast<float>(rng.normal());
            for (auto& v : k.data) v = static_cast<float>(rng.normal());
            bind["x"] = x;
            bind["k"] = k;
            ref_g.forward(bind, false);
            fast_g.forward(bind, false);
            const auto& a = ref_g.value("y").data;
            const auto& b = fast_g.value("y").data;
            for (std::size_t i = 0; i < a.size(); ++i) {
                worst = std::max(worst, static_cast<double>(std::fabs(a[i] - b[i])));
            }
        }
    }
    std::ostringstream details;
    details << "reference vs im2col forward, max abs difference " << std::scientific
            << std::setprecision(2) << worst << " (tolerance 1e-5)";
    r.check(worst < 1e-5, "conv-impl-agreement", details.str());
}

// --- learning-rate schedule ---------------------------------------------------

void check_schedule(Reporter& r) {
    const LrSchedule resnet{0.1, {36000, 54000}, {0.1, 0.1}, 72000};
    const LrSchedule wrn{0.1, {32000, 48000, 64000}, {0.2, 0.2, 0.2}, 80000};
    bool ok = true;
    std::ostringstream details;
    auto expect = [&](const LrSchedule& s, std::int64_t t, double want) {
        const double got = lr_at(s, t);
        if (got != want) {
            ok = false;
            details << " [t=" << t << " got " << got << " want " << want << "]";
        }
    };
    expect(resnet, 0, 0.1);
    expect(resnet, 35999, 0.1);
    expect(resnet, 36000, 0.1 * 0.1);
    expect(resnet, 53999, 0.1 * 0.1);
    expect(resnet, 54000, 0.1 * 0.1 * 0.1);
    expect(resnet, 71999, 0.1 * 0.1 * 0.1);
    expect(wrn, 0, 0.1);
    expect(wrn, 32000, 0.1 * 0.2);
    expect(wrn, 48000, 0.1 * 0.2 * 0.2);
    expect(wrn, 64000, 0.1 * 0.2 * 0.2 * 0.2);
    expect(wrn, 79999, 0.1 * 0.2 * 0.2 * 0.2);
    if (ok) details << "0.1/0.01/0.001 and 0.1/0.02/0.004/0.0008 at all boundaries";
    r.check(ok, "schedule", details.str());
}

// --- pruning vs full sort ------------------------------------------------------

void check_pruning(Reporter& r) {
    Rng rng(0x9e3779b9ull);
    Tensor a({10, 12}), c({60});
    for (auto& v : a.data) v = static_cast<float>(rng.normal());
    for (auto& v : c.data) v = static_cast<float>(rng.normal());
    std::vector<PrunableView> view = {{"a", &a}, {"c", &c}};
    const double s = 0.37;
    PruneMask mask = prune_unstructured(view, s);

    // Independent oracle: sort every (|w|, tensor, position) ascending and
    // mask the first floor(s * total).
    struct Item {
        float mag;
        int tensor;
        std::int64_t pos;
    };
    std::vector<Item> items;
    for (int t = 0; t < 2; ++t) {
        const auto& data = t == 0 ? a.data : c.data;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
            items.push_back({std::fabs(data[static_cast<std::size_t>(i)]), t, i});
        }
    }
    std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) {
        return std::tie(x.mag, x.tensor, x.pos) < std::tie(y.mag, y.tensor, y.pos);
    });
    const std::int64_t to_mask =
        static_cast<std::int64_t>(std::floor(s * static_cast<double>(items.size())));
    std::vector<std::vector<std::uint8_t>> want = {
        std::vector<std::uint8_t>(a.data.size(), 1), std::vector<std::uint8_t>(c.data.size(), 1)};
    for (std::int64_t i = 0; i < to_mask; ++i) {
        want[static_cast<std::size_t>(items[static_cast<std::size_t>(i)].tensor)]
            [static_cast<std::size_t>(items[static_cast<std::size_t>(i)].pos)] = 0;
    }
    const bool ok = mask.entries[0].keep == want[0] && mask.entries[1].keep == want[1];
    std::ostringstream details;
    details << "global magnitude mask equals full-sort oracle on 180 weights at s=" << s;
    r.check(ok, "pruning-vs-sort", details.str());
}

// --- accounting identities ------------------------------------------------------

void check_accounting(Reporter& r) {
    bool ok = true;
    std::ostringstream details;
    auto within = [&](double got, double want, double rel_tol, const std::string& what) {
        const double rel = std::fabs(got - want) / std::fabs(want);
        if (rel > rel_tol) {
            ok = false;
            details << " [" << what << ": got " << got << " want " << want << "]";
        }
    };
    within(1.0 / (1.0 - 0.893), 9.35, 0.005, "s=0.893 -> c");
    within(static_cast<double>(survivors_for_compression(270896, 9.35)), 29000, 0.005,
           "resnet20 9.35x survivors");
    within(static_cast<double>(survivors_for_compression(851504, 22.73)), 37600, 0.005,
           "resnet56 22.73x survivors");
    within(static_cast<double>(survivors_for_compression(10954160, 100.0)), 109500, 0.005,
           "wrn 100x survivors");
    for (double p : {0.2, 0.3}) {
        double direct = 1.0;
        for (int k = 1; k <= 10; ++k) {
            direct *= 1.0 - p;
            within(iterative_sparsity(p, k), 1.0 - direct, 1e-12,
                   "iterative p=" + std::to_string(p) + " k=" + std::to_string(k));
        }
    }
    if (ok) details << "compression/sparsity/survivor identities within 0.5%";
    r.check(ok, "accounting", details.str());
}

// --- strategy equivalence on a tiny run ------------------------------------------

void check_strategy_equivalence(Reporter& r) {
    SyntheticSpec data_spec;
    data_spec.classes = 4;
    data_spec.train_examples = 64;
    data_spec.validation_examples = 16;
    data_spec.seed = 3;
    auto splits = make_synthetic(data_spec);
    Dataset& train_set = splits.first;
    ChannelStats stats = standardize_stats(train_set);
    AugmentPipeline pipeline;
    pipeline.stats = stats;

    ModelSpec spec = make_mlp("tiny-mlp", {32, 32, 3}, {8}, 4);
    ParamStore weights = init_weights(spec, 11);

    const LrSchedule schedule{0.1, {20}, {0.1}, 40};
    TrainOptions opts;
    opts.schedule = schedule;
    opts.loss.l2_coefficient = 1e-4;
    opts.batch_size = 16;
    opts.data_seed = 5;
    opts.snapshot_policy.cadence = 10;
    CheckpointStore store("verify");
    train(spec, weights, train_set, pipeline, opts, nullptr, &store);

    PruneMask mask = prune_unstructured(prunable_view(spec, weights), 0.5);

    RetrainEnv env;
    env.train_data = &train_set;
    env.pipeline = &pipeline;
    env.loss = opts.loss;
    env.batch_size = 16;

    const std::uint64_t seed = 17;
    ParamStore via_lr = run_lr_rewind(spec, env, weights, mask, schedule, seed);

    ParamStore via_wr = run_weight_rewind(spec, env, store, schedule.total_iterations, mask,
                                          schedule, seed);
    RetrainPlan forced = make_retrain_plan(Strategy::lr_rewind, schedule, 0);
    via_wr = run_retrain(spec, env, std::move(via_wr), mask, forced, seed);

    r.check(state_equal(via_lr, via_wr), "strategy-equivalence",
            "lr_rewind == weight_rewind(K=N) + schedule-reset retrain, bit-exact over 40 steps");
}

}  // namespace

int run_verify(std::ostream& os) {
    Reporter r{os};
    check_param_counts(r);
    check_gradients(r);
    check_conv_impl_agreement(r);
    check_schedule(r);
    check_pruning(r);
    check_accounting(r);
    check_strategy_equivalence(r);
    os << (r.failures == 0 ? "verify: all checks passed\n"
                           : "verify: " + std::to_string(r.failures) + " check(s) FAILED\n");
    return r.failures;
}

}  // namespace rewindlab
