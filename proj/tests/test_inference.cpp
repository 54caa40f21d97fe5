#include <cmath>
#include <sstream>

#include "doctest.h"

#include "doc/inference.hpp"
#include "doc/objectives.hpp"
#include "doc/planner.hpp"

using namespace doc;

TEST_CASE("select_latent exhaustive scan takes the best supported atom") {
    Rng rng = make_rng(0, 0);
    std::vector<double> prior = {0.5, 0.0, 0.5};
    std::vector<double> values = {1.0, 9.0, 3.0};
    // The zero-prior atom is skipped even though its value is largest.
    CHECK(select_latent(prior, values, 3, rng, true) == 2);

    std::vector<double> tied = {2.0, 2.0, 1.0};
    std::vector<double> unif = {0.3, 0.3, 0.4};
    CHECK(select_latent(unif, tied, 3, rng, true) == 0);  // lowest index wins

    CHECK_THROWS_AS(select_latent(prior, values, 0, rng), InvalidParameterError);
    CHECK_THROWS_AS(select_latent(prior, {1.0, std::nan(""), 0.0}, 2, rng),
                    NumericError);
    CHECK_THROWS_AS(select_latent({0.0, 0.0}, {1.0, 2.0}, 2, rng, true),
                    InvalidParameterError);
}

TEST_CASE("sampled selection improves with K") {
    std::vector<double> prior(10, 0.1);
    std::vector<double> values;
    for (int z = 0; z < 10; ++z) values.push_back(double(z));
    auto hit_rate = [&](int K) {
        int hits = 0;
        for (int i = 0; i < 2000; ++i) {
            Rng rng = make_rng(77, i);
            if (select_latent(prior, values, K, rng) == 9) ++hits;
        }
        return hits / 2000.0;
    };
    double k1 = hit_rate(1), k3 = hit_rate(3);
    CHECK(k1 == doctest::Approx(0.1).epsilon(0.25));
    CHECK(k3 == doctest::Approx(1.0 - std::pow(0.9, 3)).epsilon(0.15));
    CHECK(k3 > k1);
    // K at least the atom count falls back to the exhaustive scan.
    Rng rng = make_rng(0, 0);
    CHECK(select_latent(prior, values, 10, rng) == 9);
}

TEST_CASE("exhaustive scan floors rare atoms for learned latents only") {
    Environment env = bandit_env(0.2);
    Dataset d = collect(env, bandit_behavior(0.2), 100, 1, "bandit");
    Rng rng = make_rng(0, 0);

    // A DoC atom with prior mass 0.01 is skipped even if its V is huge.
    TabularBundle b = make_tabular_bundle(Method::Doc, d, 1, 2, 2, 0);
    b.prior_logits.values = {std::log(0.99), std::log(0.01)};
    b.value.values = {0.5, 99.0};
    CHECK(select_latent(b, 8, rng) == 0);
    // Raw overload keeps the historical no-floor behavior.
    CHECK(select_latent({0.99, 0.01}, {0.5, 99.0}, 2, rng, true) == 1);
    // If every atom is rare the floor is dropped rather than throwing.
    CHECK(select_latent({0.01, 0.02, 0.97}, {5.0, 1.0, 0.0}, 8, rng, true,
                        0.99) == 0);

    // Return-bin conditioning keeps rare high-return bins selectable.
    TabularBundle rcsl = make_tabular_bundle(Method::Rcsl, d, 1, 2, 2, 0);
    rcsl.prior_logits.values = {std::log(0.99), std::log(0.01)};
    CHECK(select_latent(rcsl, 8, rng) == rcsl.return_bin(1.0));
}

TEST_CASE("consistency gap is zero when V equals the rollout value") {
    Environment env = bandit_env(0.2);
    Dataset d = collect(env, bandit_behavior(0.2), 100, 1, "bandit");
    TabularBundle b = make_tabular_bundle(Method::Doc, d, 1, 2, 2, 0);
    // Force a deterministic arm-0 policy under z=0 and set V to its value.
    b.policy_logits.values[b.pol_index(0, 0, 0)] = 30.0;
    b.policy_logits.values[b.pol_index(0, 0, 1)] = -30.0;
    b.value.values[0] = 0.8;
    CHECK(consistency_gap(b, env, 0) == doctest::Approx(0.0).epsilon(1e-9));
    b.value.values[0] = 0.3;
    CHECK(consistency_gap(b, env, 0) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("supported_latents reflects aggregate posterior mass") {
    Environment env = bandit_env(0.3);
    Dataset d = collect(env, bandit_behavior(0.3), 50, 2, "bandit");
    TabularBundle b = make_tabular_bundle(Method::Doc, d, 1, 2, 3, 0);
    // Concentrate every posterior row on atom 1.
    for (std::size_t row = 0; row < b.row_sig.size(); ++row) {
        b.q_logits.values[row * b.num_z + 0] = -40.0;
        b.q_logits.values[row * b.num_z + 1] = 40.0;
        b.q_logits.values[row * b.num_z + 2] = -40.0;
    }
    auto supported = supported_latents(b, d);
    CHECK(supported == std::vector<int>{1});
}

TEST_CASE("plug-in MI: independent coin flips are near zero") {
    std::vector<std::tuple<int, int, int>> samples;
    std::vector<double> weights;
    Rng rng = make_rng(21, 0);
    for (int i = 0; i < 10000; ++i) {
        int x = int(rng() & 1);
        int z = int(rng() & 1);
        samples.emplace_back(x, z, 0);
        weights.push_back(1.0);
    }
    CHECK(plugin_conditional_mi(samples, weights) <= 0.02);
}

TEST_CASE("plug-in MI: z equal to a fair coin gives log 2") {
    // Exact weights first.
    std::vector<std::tuple<int, int, int>> samples = {{0, 0, 0}, {1, 1, 0}};
    std::vector<double> weights = {0.5, 0.5};
    CHECK(plugin_conditional_mi(samples, weights) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Sampled version at n = 10^4.
    samples.clear();
    weights.clear();
    Rng rng = make_rng(22, 0);
    for (int i = 0; i < 10000; ++i) {
        int x = int(rng() & 1);
        samples.emplace_back(x, x, 0);
        weights.push_back(1.0);
    }
    CHECK(plugin_conditional_mi(samples, weights) ==
          doctest::Approx(std::log(2.0)).epsilon(0.015));
}

TEST_CASE("plug-in MI: deterministic x given the condition is zero") {
    std::vector<std::tuple<int, int, int>> samples;
    std::vector<double> weights;
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < 2; ++z) {
            samples.emplace_back(c * 10, z, c);  // x is a function of c alone
            weights.push_back(1.0);
        }
    CHECK(plugin_conditional_mi(samples, weights) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(plugin_conditional_mi(samples, {1.0}), ShapeError);
}

TEST_CASE("trajectory MI: first-action latents carry no step information") {
    // Conditioned on (s_t, a_t), z = a_0 adds nothing about r_t or s_{t+1}.
    Environment env = bandit_env(0.3);
    Dataset d = collect(env, bandit_behavior(0.3), 400, 3, "bandit");
    std::vector<std::vector<double>> zw;
    for (const auto& tau : d.trajectories) {
        std::vector<double> w(2, 0.0);
        w[tau.actions[0]] = 1.0;
        zw.push_back(w);
    }
    auto mi = mi_exact_discrete(d.trajectories, zw);
    CHECK(mi.reward_mi == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(mi.next_state_mi == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("trajectory MI: return-bin latents leak reward information") {
    Environment env = bandit_env(0.3);
    Dataset d = collect(env, bandit_behavior(0.3), 400, 3, "bandit");
    TabularBundle rcsl = make_tabular_bundle(Method::Rcsl, d, 1, 2, 2, 0);
    auto mi = mi_exact_discrete(rcsl, d);
    CHECK(mi.reward_mi > 0.3);  // r is a function of z within each (s, a) cell
}

TEST_CASE("bayes fit reproduces conditional action frequencies and values") {
    // Toy tree under a uniform behavior, z = first action.
    Environment env = toy_tree_env();
    auto wts = enumerate_trajectories(env);
    std::vector<Trajectory> taus;
    std::vector<double> weights;
    std::vector<std::vector<double>> zw;
    PolicyFn behavior = uniform_policy(env);
    for (const auto& wt : wts) {
        taus.push_back(wt.trajectory);
        weights.push_back(wt.env_prob * policy_factor(wt.trajectory, behavior));
        std::vector<double> w(2, 0.0);
        w[wt.trajectory.actions[0]] = 1.0;
        zw.push_back(w);
    }
    BayesFit fit = fit_bayes_tabular(taus, weights, zw, env.num_actions);
    CHECK(fit.z_marginal[0] == doctest::Approx(0.5));
    CHECK(fit.z_marginal[1] == doctest::Approx(0.5));
    CHECK(fit.value[0] == doctest::Approx(1.0));   // 0.01 * 100
    CHECK(fit.value[1] == doctest::Approx(10.0));

    // Theorem-style consistency: MI-zero assignment + exact fit => zero gap.
    for (int z = 0; z < 2; ++z) {
        double rollout = exact_policy_value(env, fit.conditioned(env, z));
        CHECK(std::abs(fit.value[z] - rollout) <= 1e-9);
    }
}

TEST_CASE("markov consistency holds on a stochastic lake for action latents") {
    Environment env = frozen_lake_env("SF\nFG", 0.6, 3);
    auto wts = enumerate_trajectories(env);
    std::vector<Trajectory> taus;
    std::vector<double> weights;
    std::vector<std::vector<double>> zw;
    PolicyFn behavior = uniform_policy(env);
    for (const auto& wt : wts) {
        taus.push_back(wt.trajectory);
        weights.push_back(wt.env_prob * policy_factor(wt.trajectory, behavior));
        std::vector<double> w(4, 0.0);
        w[wt.trajectory.actions[0]] = 1.0;
        zw.push_back(w);
    }
    BayesFit fit = fit_bayes_tabular(taus, weights, zw, env.num_actions);
    for (int z = 0; z < 4; ++z) {
        if (fit.z_marginal[z] <= 0.0) continue;
        double rollout = exact_policy_value(env, fit.conditioned(env, z));
        CHECK(std::abs(fit.value[z] - rollout) <= 1e-9);
    }
}

TEST_CASE("return-bin conditioning is inconsistent on the bandit") {
    // The motivating failure: conditioning on r = 1 promises value 1 but
    // the induced policy only achieves 0.5.
    Environment env = bandit_env(0.1);
    auto wts = enumerate_trajectories(env);
    std::vector<Trajectory> taus;
    std::vector<double> weights;
    std::vector<std::vector<double>> zw;
    PolicyFn behavior = bandit_behavior(0.1);
    for (const auto& wt : wts) {
        taus.push_back(wt.trajectory);
        weights.push_back(wt.env_prob * policy_factor(wt.trajectory, behavior));
        std::vector<double> w(2, 0.0);
        w[wt.trajectory.rewards[0] == 1.0 ? 1 : 0] = 1.0;
        zw.push_back(w);
    }
    BayesFit fit = fit_bayes_tabular(taus, weights, zw, env.num_actions);
    CHECK(fit.value[1] == doctest::Approx(1.0));
    double rollout = exact_policy_value(env, fit.conditioned(env, 1));
    CHECK(rollout == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::abs(fit.value[1] - rollout) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("counterexample: cluster conditioning breaks trajectory support") {
    CounterexampleReport rep = counterexample_check();
    CHECK(rep.pass);
    REQUIRE(rep.policy_s0_z0.size() == 2);
    CHECK(rep.policy_s0_z0[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.policy_s0_z0[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.policy_s1_z0[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.prob_tau2_env == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(rep.prob_tau2_data_z0 == 0.0);
    CHECK(rep.value_gap_z0 == 0.0);
}

TEST_CASE("evaluate reports MC within 4 sigma of the exact value") {
    Environment env = bandit_env(0.2);
    Dataset d = collect(env, bandit_behavior(0.2), 200, 4, "bandit");
    TabularBundle b = make_tabular_bundle(Method::Rcsl, d, 1, 2, 2, 0);
    EvalReport rep = evaluate(b, env, 2000, 8, 12);
    REQUIRE(rep.exact_value.has_value());
    double exact = *rep.exact_value;
    double sigma = std::sqrt(exact * (1.0 - exact) / 2000.0);
    CHECK(std::abs(rep.mean_return - exact) <= 4.0 * sigma + 1e-9);
    CHECK(rep.gap.has_value());
    CHECK(*rep.gap == doctest::Approx(std::abs(rep.v_selected - exact)));
    CHECK(rep.method == "rcsl");
    CHECK(rep.ci95 > 0.0);

    // Same seed, same report.
    EvalReport rep2 = evaluate(b, env, 2000, 8, 12);
    CHECK(rep2.selected_z == rep.selected_z);
    CHECK(rep2.mean_return == rep.mean_return);
}

TEST_CASE("eval CSV schema matches the contract") {
    EvalReport rep;
    rep.method = "doc";
    rep.env_name = "bandit";
    rep.param_p = 0.1;
    rep.epsilon = 0.0;
    rep.seed = 7;
    rep.v_selected = 0.9;
    rep.mean_return = 0.88;
    rep.ci95 = 0.02;
    rep.exact_value = 0.9;
    rep.gap = 0.0;
    std::ostringstream os;
    write_eval_csv_header(os);
    write_eval_csv_row(os, rep);
    std::istringstream is(os.str());
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(header ==
          "method,env,p,epsilon,seed,v_selected,mean_return,ci95,exact_value,"
          "gap");
    CHECK(row == "doc,bandit,0.1,0,7,0.9,0.88,0.02,0.9,0");

    // Unenumerable environments leave the exact columns empty.
    rep.exact_value.reset();
    rep.gap.reset();
    std::ostringstream os2;
    write_eval_csv_row(os2, rep);
    CHECK(os2.str() == "doc,bandit,0.1,0,7,0.9,0.88,0.02,,\n");
}

TEST_CASE("trained doc model is consistent on the bandit") {
    Environment env = bandit_env(0.2);
    Dataset d = collect(env, bandit_behavior(0.2), 400, 6, "bandit");
    TrainConfig cfg;
    cfg.method = Method::Doc;
    cfg.latent_atoms = 2;
    cfg.steps = 1500;
    cfg.learning_rate = 0.3;
    cfg.seed = 6;
    auto result = train(d, env, cfg);
    const TabularBundle& b = result.bundle;
    for (int z : supported_latents(b, d, 0.05))
        CHECK(consistency_gap(b, env, z) <= 0.05);
    // And the selected latent achieves near-optimal value.
    Rng rng = make_rng(6, 0);
    int z_star = select_latent(b, 8, rng);
    double v = exact_policy_value(env, conditioned_policy(b, env, z_star));
    CHECK(v >= 0.8 - 0.05);
    // The latent carries no step-level information.
    auto mi = mi_exact_discrete(b, d);
    CHECK(mi.reward_mi <= 0.05);
}
