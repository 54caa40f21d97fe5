#include <cmath>
#include <random>

#include "doctest.h"

#include "doc/autodiff.hpp"
#include "doc/latent.hpp"
#include "doc/rng.hpp"

using namespace doc;
using ad::Var;

namespace {

// Scalar function exercising every op; safe for params anywhere in [-2, 2].
Var fixture_expr(ad::Tape& t, ad::ParamStore& p) {
    Var a = ad::param(t, p, 0);
    Var b = ad::param(t, p, 1);
    Var c = ad::param(t, p, 2);
    Var d = ad::param(t, p, 3);
    Var e = ad::param(t, p, 4);

    Var u = a * b + ad::tanh(c) - ad::relu(d - 0.3) + ad::sqr(e);
    Var v = ad::exp(a * 0.5) / (2.0 + ad::sqr(b));
    Var w = ad::log(1.0 + ad::exp(c + d));  // softplus keeps log positive

    std::vector<Var> xs = {a + b, c * d, e - a, v};
    std::vector<double> ws = {0.1, 0.2, 0.3, 0.4};
    Var lse = ad::log_weighted_sum_exp(xs, ws);
    Var lme = ad::log_mean_exp(xs);

    std::vector<Var> logits = {a, b + c, d * e};
    auto sm = ad::softmax(logits);
    auto lsm = ad::log_softmax(logits);

    return u + v - w + lse * 0.5 + lme * 0.25 + sm[1] * 3.0 - lsm[2];
}

double eval_at(std::vector<double> values) {
    ad::ParamStore p("p");
    p.values = std::move(values);
    p.grads.assign(p.values.size(), 0.0);
    ad::Tape t;
    return fixture_expr(t, p).val();
}

}  // namespace

TEST_CASE("basic op derivatives are exact") {
    ad::ParamStore p("p", 2);
    p.values = {0.7, -0.4};
    ad::Tape t;
    Var x = ad::param(t, p, 0);
    Var y = ad::param(t, p, 1);

    SUBCASE("product rule") {
        Var f = x * y;
        t.backward(f.idx);
        CHECK(p.grads[0] == doctest::Approx(-0.4));
        CHECK(p.grads[1] == doctest::Approx(0.7));
    }
    SUBCASE("quotient rule") {
        p.zero_grad();
        Var f = x / y;
        t.backward(f.idx);
        CHECK(p.grads[0] == doctest::Approx(1.0 / -0.4));
        CHECK(p.grads[1] == doctest::Approx(-0.7 / (0.4 * 0.4)));
    }
    SUBCASE("exp and log") {
        p.zero_grad();
        Var f = ad::exp(x) + ad::log(2.0 + y);
        t.backward(f.idx);
        CHECK(p.grads[0] == doctest::Approx(std::exp(0.7)));
        CHECK(p.grads[1] == doctest::Approx(1.0 / 1.6));
    }
    SUBCASE("reused subexpression accumulates") {
        p.zero_grad();
        Var f = x * x + x;
        t.backward(f.idx);
        CHECK(p.grads[0] == doctest::Approx(2.0 * 0.7 + 1.0));
    }
}

TEST_CASE("relu gradient is zero below the kink") {
    ad::ParamStore p("p", 1);
    ad::Tape t;
    p.values[0] = -0.5;
    Var f = ad::relu(ad::param(t, p, 0));
    t.backward(f.idx);
    CHECK(p.grads[0] == 0.0);
    CHECK(f.val() == 0.0);
}

TEST_CASE("detach blocks the gradient path exactly") {
    ad::ParamStore p("p", 1);
    p.values[0] = 1.3;
    ad::Tape t;
    Var x = ad::param(t, p, 0);
    Var f = ad::detach(x * x) * x;
    CHECK(f.val() == doctest::Approx(1.3 * 1.3 * 1.3));
    t.backward(f.idx);
    CHECK(p.grads[0] == doctest::Approx(1.3 * 1.3));  // only the live factor
}

TEST_CASE("gradients match central finite differences on 120 fixtures") {
    const double h = 1e-6;
    int checked = 0;
    for (int seed = 0; seed < 120; ++seed) {
        Rng rng = make_rng(1000, seed);
        std::uniform_real_distribution<double> unif(-2.0, 2.0);
        std::vector<double> base(5);
        for (double& v : base) v = unif(rng);

        ad::ParamStore p("p");
        p.values = base;
        p.grads.assign(5, 0.0);
        ad::Tape t;
        Var f = fixture_expr(t, p);
        t.backward(f.idx);

        for (int i = 0; i < 5; ++i) {
            // Skip fixtures where a kink sits inside the difference stencil.
            double kink = base[3] - 0.3;
            if (i == 3 && std::abs(kink) < 10 * h) continue;
            auto lo = base, hi = base;
            lo[i] -= h;
            hi[i] += h;
            double fd = (eval_at(hi) - eval_at(lo)) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(p.grads[i]), 1.0});
            CHECK(std::abs(p.grads[i] - fd) / denom <= 1e-4);
            ++checked;
        }
    }
    CHECK(checked >= 500);
}

TEST_CASE("log_weighted_sum_exp matches the direct computation") {
    ad::Tape t;
    std::vector<Var> xs = {ad::constant(t, 100.0), ad::constant(t, 101.0),
                           ad::constant(t, 99.5)};
    std::vector<double> ws = {0.2, 0.5, 0.3};
    double direct = std::log(0.2 * std::exp(100.0 - 101.0) + 0.5 +
                             0.3 * std::exp(99.5 - 101.0)) +
                    101.0;
    CHECK(ad::log_weighted_sum_exp(xs, ws).val() == doctest::Approx(direct));
    CHECK_THROWS_AS(ad::log_weighted_sum_exp({}, {}), ShapeError);
}

TEST_CASE("softmax is normalized and shift invariant") {
    ad::ParamStore p("p", 3);
    p.values = {0.2, -1.0, 0.7};
    ad::Tape t;
    std::vector<Var> logits = {ad::param(t, p, 0), ad::param(t, p, 1),
                               ad::param(t, p, 2)};
    auto sm = ad::softmax(logits);
    double total = 0.0;
    for (const auto& v : sm) total += v.val();
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<Var> shifted = {logits[0] + 5.0, logits[1] + 5.0,
                                logits[2] + 5.0};
    auto sm2 = ad::softmax(shifted);
    for (std::size_t i = 0; i < sm.size(); ++i)
        CHECK(sm[i].val() == doctest::Approx(sm2[i].val()).epsilon(1e-12));

    auto lsm = ad::log_softmax(logits);
    for (std::size_t i = 0; i < sm.size(); ++i)
        CHECK(std::exp(lsm[i].val()) == doctest::Approx(sm[i].val()));
}

TEST_CASE("apply_sgd descends and ascends") {
    ad::ParamStore p("p", 2);
    p.values = {1.0, 2.0};
    p.grads = {0.5, -1.0};
    p.apply_sgd(0.1);
    CHECK(p.values[0] == doctest::Approx(0.95));
    CHECK(p.values[1] == doctest::Approx(2.1));
    p.apply_sgd(0.1, true);
    CHECK(p.values[0] == doctest::Approx(1.0));
    CHECK(p.values[1] == doctest::Approx(2.0));
    CHECK(p.grad_norm() == doctest::Approx(std::sqrt(0.25 + 1.0)));
    p.zero_grad();
    CHECK(p.grad_norm() == 0.0);
}

TEST_CASE("gaussian KL matches the closed form against itself and a shift") {
    ad::Tape t;
    auto g = [&](double mu, double ls) {
        return gaussian_latent({ad::constant(t, mu)}, {ad::constant(t, ls)});
    };
    CHECK(kl(g(0.3, -1.0), g(0.3, -1.0)).val() == doctest::Approx(0.0));
    // KL(N(1,1) || N(0,1)) = 0.5 (sigma floor shifts it only slightly).
    CHECK(kl(g(1.0, 0.0), g(0.0, 0.0)).val() ==
          doctest::Approx(0.5).epsilon(1e-4));
    CHECK(kl(g(0.0, 0.0), g(0.0, 1.0)).val() > 0.0);
}

TEST_CASE("categorical KL matches the closed form") {
    ad::Tape t;
    auto cat = [&](std::vector<double> logits) {
        std::vector<Var> vs;
        for (double l : logits) vs.push_back(ad::constant(t, l));
        return categorical_latent(vs);
    };
    auto a = cat({std::log(0.7), std::log(0.3)});
    auto b = cat({std::log(0.4), std::log(0.6)});
    double expect = 0.7 * std::log(0.7 / 0.4) + 0.3 * std::log(0.3 / 0.6);
    CHECK(kl(a, b).val() == doctest::Approx(expect).epsilon(1e-6));
    CHECK(kl(a, a).val() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_THROWS_AS(kl(a, gaussian_latent({ad::constant(t, 0.0)},
                                          {ad::constant(t, 0.0)})),
                    TypeError);
}

TEST_CASE("stopgrad latent carries values but no gradient") {
    ad::ParamStore p("p", 2);
    p.values = {0.4, -0.2};
    ad::Tape t;
    auto live = categorical_latent(
        std::vector<Var>{ad::param(t, p, 0), ad::param(t, p, 1)});
    auto frozen = stopgrad(live);
    Var f = frozen.probs[0] * 3.0;
    t.backward(f.idx);
    CHECK(p.grads[0] == 0.0);
    CHECK(p.grads[1] == 0.0);
    CHECK(frozen.probs[0].val() == doctest::Approx(live.probs[0].val()));
}

TEST_CASE("gaussian sampling is reparameterized") {
    ad::ParamStore p("p", 2);
    p.values = {0.5, -0.5};  // mu, log sigma
    ad::Tape t;
    auto dist = gaussian_latent({ad::param(t, p, 0)}, {ad::param(t, p, 1)});
    Rng rng = make_rng(5, 0);
    auto s = sample_latent(dist, rng);
    t.backward(s.z[0].idx);
    CHECK(p.grads[0] == doctest::Approx(1.0));  // dz/dmu = 1
    double eps = (s.z[0].val() - 0.5) / (std::exp(-0.5) + kSigmaFloor);
    CHECK(p.grads[1] == doctest::Approx(std::exp(-0.5) * eps).epsilon(1e-6));
}

TEST_CASE("straight-through categorical sample is one-hot with live grads") {
    ad::ParamStore p("p", 3);
    p.values = {0.1, 0.9, -0.3};
    ad::Tape t;
    auto dist = categorical_latent(std::vector<Var>{
        ad::param(t, p, 0), ad::param(t, p, 1), ad::param(t, p, 2)});
    Rng rng = make_rng(6, 0);
    auto s = sample_latent(dist, rng, 1.0);
    REQUIRE(s.atom >= 0);
    REQUIRE(s.atom < 3);
    double total = 0.0;
    for (std::size_t i = 0; i < s.z.size(); ++i) {
        CHECK(s.z[i].val() ==
              (static_cast<int>(i) == s.atom ? 1.0 : 0.0));
        total += s.z[i].val();
    }
    CHECK(total == 1.0);
    t.backward(s.z[s.atom].idx);
    double gsum = 0.0;
    for (double g : p.grads) gsum += std::abs(g);
    CHECK(gsum > 0.0);  // the relaxed path carries gradient
}

TEST_CASE("sampled categorical frequencies track the posterior") {
    ad::Tape t;
    auto dist = categorical_latent(std::vector<Var>{
        ad::constant(t, std::log(0.2)), ad::constant(t, std::log(0.8))});
    Rng rng = make_rng(8, 0);
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        ad::Tape local;
        auto d2 = categorical_latent(std::vector<Var>{
            ad::constant(local, std::log(0.2)),
            ad::constant(local, std::log(0.8))});
        hits += sample_latent(d2, rng).atom;
    }
    CHECK(static_cast<double>(hits) / n == doctest::Approx(0.8).epsilon(0.03));
    (void)dist;
}

TEST_CASE("clamp_var freezes values outside the range") {
    ad::ParamStore p("p", 1);
    p.values = {4.0};
    ad::Tape t;
    Var x = ad::param(t, p, 0);
    Var c = clamp_var(x, -5.0, 2.0);
    CHECK(c.val() == 2.0);
    t.backward(c.idx);
    CHECK(p.grads[0] == 0.0);

    p.values[0] = 1.0;
    p.zero_grad();
    ad::Tape t2;
    Var y = clamp_var(ad::param(t2, p, 0), -5.0, 2.0);
    t2.backward(y.idx);
    CHECK(p.grads[0] == 1.0);
}

TEST_CASE("backward rejects invalid roots") {
    ad::Tape t;
    CHECK_THROWS_AS(t.backward(0), ShapeError);
    CHECK_THROWS_AS(t.backward(-1), ShapeError);
}
