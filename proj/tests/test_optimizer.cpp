#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "metatrack/adam.hpp"
#include "metatrack/optimizer.hpp"

using namespace metatrack;

namespace {

OptimizerParams zero_optimizer(int64_t hidden) {
    OptimizerParams p;
    p.hidden = hidden;
    p.wx1 = make_leaf(Tensor({4 * hidden, 4, 1, 1}));
    p.wh1 = make_leaf(Tensor({4 * hidden, hidden, 1, 1}));
    p.b1 = make_leaf(Tensor({4 * hidden}));
    p.wx2 = make_leaf(Tensor({4 * hidden, hidden, 1, 1}));
    p.wh2 = make_leaf(Tensor({4 * hidden, hidden, 1, 1}));
    p.b2 = make_leaf(Tensor({4 * hidden}));
    p.proj_w = make_leaf(Tensor({1, hidden, 1, 1}));
    p.proj_b = make_leaf(Tensor({1}));
    return p;
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("all-zero optimizer weights predict exactly one half") {
    const int64_t n = 7, H = 5;
    OptimizerParams w = zero_optimizer(H);
    Rng rng(61);
    Var lam0 = make_constant(random_tensor({n}, rng, 0.01, 0.99));
    OptimizerState st = init_state(n, lam0, H);
    Var inputs = stack_inputs(st, make_constant(random_tensor({n}, rng)),
                              make_constant(random_tensor({n}, rng)), make_scalar(0.3));
    auto [lambda, st2] = predict_learning_rates(inputs, w, st);
    for (int64_t i = 0; i < n; ++i) REQUIRE(lambda.value()[i] == 0.5);
    // hidden state stays at zero: tanh(0) cell passes nothing through
    for (int64_t i = 0; i < st2.h2.size(); ++i) REQUIRE(st2.h2.value()[i] == 0.0);
}

TEST_CASE("predictions are equivariant under coordinate permutation") {
    const int64_t n = 6, H = 4;
    Rng rng(67);
    OptimizerParams w = make_optimizer(H, rng);
    Tensor lam0 = random_tensor({n}, rng, 0.1, 0.9);
    Tensor g = random_tensor({n}, rng), th = random_tensor({n}, rng);

    auto run = [&](const Tensor& l0, const Tensor& gr, const Tensor& t) {
        OptimizerState st = init_state(n, make_constant(l0), H);
        Var in = stack_inputs(st, make_constant(gr), make_constant(t), make_scalar(1.25));
        return predict_learning_rates(in, w, st).first.value();
    };
    Tensor base = run(lam0, g, th);

    const int64_t perm[6] = {3, 0, 5, 1, 4, 2};
    Tensor lam0p({n}), gp({n}), thp({n});
    for (int64_t i = 0; i < n; ++i) {
        lam0p[i] = lam0[perm[i]];
        gp[i] = g[perm[i]];
        thp[i] = th[perm[i]];
    }
    Tensor got = run(lam0p, gp, thp);
    for (int64_t i = 0; i < n; ++i) REQUIRE(got[i] == base[perm[i]]);
}

TEST_CASE("input stack lays out columns as rate, gradient, parameter, loss") {
    const int64_t H = 3;
    OptimizerState st = init_state(2, make_constant(Tensor({2}, {0.1, 0.2})), H);
    Var in = stack_inputs(st, make_constant(Tensor({2}, {1.0, 2.0})),
                          make_constant(Tensor({2}, {3.0, 4.0})), make_scalar(5.0));
    REQUIRE(in.shape() == std::vector<int64_t>{2, 4});
    const Tensor& v = in.value();
    REQUIRE(v[0] == 0.1);
    REQUIRE(v[1] == 1.0);
    REQUIRE(v[2] == 3.0);
    REQUIRE(v[3] == 5.0);
    REQUIRE(v[4] == 0.2);
    REQUIRE(v[5] == 2.0);
    REQUIRE(v[6] == 4.0);
    REQUIRE(v[7] == 5.0);

    REQUIRE_THROWS_AS(stack_inputs(st, make_constant(Tensor({3})),
                                   make_constant(Tensor({2})), make_scalar(0.0)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(stack_inputs(st, make_constant(Tensor({2})),
                                   make_constant(Tensor({2})), make_constant(Tensor({2}))),
                      std::invalid_argument);
}

TEST_CASE("state init validates and seeds the previous rates") {
    Var lam0 = make_constant(Tensor({3}, {0.2, 0.5, 0.9}));
    OptimizerState st = init_state(3, lam0, 6);
    REQUIRE(st.h1.shape() == std::vector<int64_t>{6, 1, 3});
    for (int64_t i = 0; i < st.c2.size(); ++i) REQUIRE(st.c2.value()[i] == 0.0);
    for (int64_t i = 0; i < 3; ++i) REQUIRE(st.lambda_prev.value()[i] == lam0.value()[i]);
    REQUIRE_THROWS_AS(init_state(4, lam0, 6), std::invalid_argument);
}

TEST_CASE("predicted rates stay in the open unit interval on extreme inputs") {
    const int64_t n = 5, H = 8;
    Rng rng(71);
    OptimizerParams w = make_optimizer(H, rng);
    OptimizerState st = init_state(n, make_constant(Tensor::full({n}, 0.5)), H);
    Var in = stack_inputs(st, make_constant(Tensor::full({n}, 1e6)),
                          make_constant(Tensor::full({n}, -1e6)), make_scalar(1e6));
    Tensor lam = predict_learning_rates(in, w, st).first.value();
    for (int64_t i = 0; i < n; ++i) {
        REQUIRE(lam[i] > 0.0);
        REQUIRE(lam[i] < 1.0);
        REQUIRE(std::isfinite(lam[i]));
    }

    Tensor bad = Tensor::full({n, 4}, 1.0);
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(predict_learning_rates(make_constant(bad), w, st),
                      std::invalid_argument);
}

TEST_CASE("the recurrent state carries information between steps") {
    const int64_t n = 4, H = 6;
    Rng rng(73);
    OptimizerParams w = make_optimizer(H, rng);
    Var lam0 = make_constant(Tensor::full({n}, 0.3));
    Var g = make_constant(Tensor({n}, {0.5, -0.2, 0.8, -0.9}));
    Var th = make_constant(Tensor({n}, {1.0, 2.0, -1.0, 0.5}));

    OptimizerState st = init_state(n, lam0, H);
    Var in1 = stack_inputs(st, g, th, make_scalar(0.7));
    auto [lam1, st1] = predict_learning_rates(in1, w, st);
    Var in2 = stack_inputs(st1, g, th, make_scalar(0.7));
    Tensor with_state = predict_learning_rates(in2, w, st1).first.value();

    // same inputs fed to a freshly zeroed state give a different answer
    OptimizerState fresh = init_state(n, lam1, H);
    Var in2b = stack_inputs(fresh, g, th, make_scalar(0.7));
    Tensor without_state = predict_learning_rates(in2b, w, fresh).first.value();
    double diff = 0.0;
    for (int64_t i = 0; i < n; ++i) diff += std::abs(with_state[i] - without_state[i]);
    REQUIRE(diff > 1e-9);
}

TEST_CASE("parameter updates apply elementwise and validate shapes") {
    Var th = make_constant(Tensor({2}, {1.0, -3.0}));
    Var lam = make_constant(Tensor({2}, {0.1, 0.5}));
    Var g = make_constant(Tensor({2}, {2.0, 4.0}));
    Tensor out = apply_update(th, lam, g).value();
    REQUIRE(out[0] == Catch::Approx(0.8));
    REQUIRE(out[1] == Catch::Approx(-5.0));

    Tensor same = apply_update(th, make_constant(Tensor({2})), g).value();
    REQUIRE(same[0] == 1.0);
    REQUIRE(same[1] == -3.0);

    REQUIRE_THROWS_AS(apply_update(th, make_constant(Tensor({3})), g),
                      std::invalid_argument);
}

TEST_CASE("meta-gradients through two recurrent steps match finite differences") {
    const int64_t n = 4, H = 3;
    Rng rng(79);
    OptimizerParams w = make_optimizer(H, rng);
    Var lam0 = make_leaf(random_tensor({n}, rng, 0.05, 0.95));
    Var g1 = make_constant(random_tensor({n}, rng));
    Var t1 = make_constant(random_tensor({n}, rng));
    Var g2 = make_constant(random_tensor({n}, rng));
    Var t2 = make_constant(random_tensor({n}, rng));

    auto build = [&]() {
        OptimizerState st = init_state(n, lam0, H);
        Var in1 = stack_inputs(st, g1, t1, make_scalar(0.4));
        auto [lam_a, st1] = predict_learning_rates(in1, w, st);
        Var in2 = stack_inputs(st1, g2, t2, make_scalar(0.2));
        auto [lam_b, st2] = predict_learning_rates(in2, w, st1);
        (void)st2;
        return mean_all(square(lam_b)) + scale(mean_all(square(lam_a)), 0.5);
    };

    std::vector<Var> params = w.all();
    params.push_back(lam0);
    auto analytic = gradient(build(), params);
    std::vector<Tensor> values;
    for (const Var& p : params) values.push_back(p.value());
    auto numeric = finite_difference(
        [&](const std::vector<Tensor>& vals) {
            for (size_t p = 0; p < params.size(); ++p) params[p].bind(vals[p]);
            return build().item();
        },
        values, 1e-5);
    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p)
        for (int64_t i = 0; i < params[p].size(); ++i) {
            const double a = analytic[p].value()[i], nn = numeric[p][i];
            worst = std::max(worst,
                             std::abs(a - nn) / std::max({1.0, std::abs(a), std::abs(nn)}));
        }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("one analytic step solves a scalar quadratic") {
    // for loss (x*theta - y)^2 the single-step optimal rate is 1/(2 x^2)
    Rng rng(83);
    for (int rep = 0; rep < 20; ++rep) {
        const double x = rng.uniform(0.2, 3.0) * (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
        const double y = rng.uniform(-2.0, 2.0);
        Var theta = make_leaf(Tensor({1}, {rng.uniform(-2.0, 2.0)}));
        auto loss_of = [&](const Var& t) {
            Var r = scale(t, x) - make_scalar(y);
            return sum_all(square(r));
        };
        Var g = gradient(loss_of(theta), {theta})[0];
        Var lam = make_constant(Tensor({1}, {1.0 / (2.0 * x * x)}));
        Var theta2 = apply_update(theta, lam, g);
        REQUIRE(loss_of(theta2).item() < 1e-12);
    }
}

TEST_CASE("optimizer construction is seeded and sized as documented") {
    Rng a(91), b(91), c(92);
    OptimizerParams w1 = make_optimizer(20, a);
    OptimizerParams w2 = make_optimizer(20, b);
    OptimizerParams w3 = make_optimizer(20, c);
    REQUIRE(w1.param_count() == 5301);
    double same = 0.0, diff = 0.0;
    for (int64_t i = 0; i < w1.wx1.size(); ++i) {
        same += std::abs(w1.wx1.value()[i] - w2.wx1.value()[i]);
        diff += std::abs(w1.wx1.value()[i] - w3.wx1.value()[i]);
    }
    REQUIRE(same == 0.0);
    REQUIRE(diff > 0.0);
    REQUIRE(w1.proj_b.value()[0] == -4.0);
    REQUIRE_THROWS_AS(make_optimizer(0, a), std::invalid_argument);
}

TEST_CASE("adam converges on a separable quadratic") {
    Tensor p({3}, {4.0, -2.0, 0.5});
    const double target[3] = {1.0, 1.0, -1.5};
    Adam opt(0.05);
    for (int it = 0; it < 800; ++it) {
        Tensor g({3});
        for (int64_t i = 0; i < 3; ++i) g[i] = 2.0 * (p[i] - target[i]);
        opt.step("p", p, g);
    }
    for (int64_t i = 0; i < 3; ++i) REQUIRE(std::abs(p[i] - target[i]) < 1e-3);
}

TEST_CASE("adam's first step moves by the learning rate") {
    Tensor p({1}, {1.0});
    Adam opt(0.01);
    Tensor g({1}, {0.37});
    opt.step("p", p, g);
    // bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g)
    REQUIRE(p[0] == Catch::Approx(1.0 - 0.01).epsilon(1e-6));

    Tensor wrong({2});
    REQUIRE_THROWS_AS(opt.step("p", wrong, Tensor({2})), std::invalid_argument);
    REQUIRE_THROWS_AS(opt.step("q", p, Tensor({3})), std::invalid_argument);
}

TEST_CASE("step decay halves the rate every five epochs") {
    REQUIRE(decayed_lr(1e-3, 0, 5, 0.5) == 1e-3);
    REQUIRE(decayed_lr(1e-3, 4, 5, 0.5) == 1e-3);
    REQUIRE(decayed_lr(1e-3, 5, 5, 0.5) == Catch::Approx(5e-4));
    REQUIRE(decayed_lr(1e-3, 14, 5, 0.5) == Catch::Approx(2.5e-4));
    REQUIRE_THROWS_AS(decayed_lr(1e-3, 1, 0, 0.5), std::invalid_argument);
}
