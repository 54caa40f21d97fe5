#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "doc/dataset.hpp"
#include "doc/environment.hpp"
#include "doc/errors.hpp"
#include "doc/models.hpp"
#include "doc/rng.hpp"

namespace doc {

// Exact E[R(tau)] under pi in env via full trajectory enumeration.
inline double exact_policy_value(const Environment& env, const PolicyFn& policy,
                                 std::size_t budget = 500000) {
    double value = 0.0;
    for (const auto& wt : enumerate_trajectories(env, budget))
        value += wt.env_prob * policy_factor(wt.trajectory, policy) *
                 wt.trajectory.ret();
    return value;
}

// Samples z_1..z_K from the prior and returns the index of the argmax of V,
// ties broken by lowest sample index. When exhaustive, scans every atom.
inline int select_latent(const std::vector<double>& prior_probs,
                         const std::vector<double>& values, int K, Rng& rng,
                         bool exhaustive = false, double prior_floor = 0.0) {
    if (K < 1) throw InvalidParameterError("select_latent: K must be >= 1");
    for (double v : values)
        if (!std::isfinite(v))
            throw NumericError("select_latent: non-finite value output");
    int best = -1;
    double best_v = 0.0;
    if (exhaustive || K >= int(values.size())) {
        for (std::size_t z = 0; z < values.size(); ++z) {
            if (prior_probs[z] <= 0.0 || prior_probs[z] < prior_floor) continue;
            if (best < 0 || values[z] > best_v) {
                best = int(z);
                best_v = values[z];
            }
        }
        if (best < 0 && prior_floor > 0.0) {
            // Every atom fell under the floor: keep only the zero-prior skip.
            for (std::size_t z = 0; z < values.size(); ++z) {
                if (prior_probs[z] <= 0.0) continue;
                if (best < 0 || values[z] > best_v) {
                    best = int(z);
                    best_v = values[z];
                }
            }
        }
        if (best < 0) throw InvalidParameterError("select_latent: empty prior");
        return best;
    }
    for (int k = 0; k < K; ++k) {
        int z = sample_index(prior_probs, rng);
        if (best < 0 || values[z] > best_v) {
            best = z;
            best_v = values[z];
        }
    }
    return best;
}

inline int select_latent(const TabularBundle& b, int K, Rng& rng) {
    std::vector<double> values(b.num_z);
    for (int z = 0; z < b.num_z; ++z) values[z] = b.value_of(z);
    // Exhaustive enumeration replaces sampling for small categorical supports.
    // For learned latents the scan skips atoms too rare to show up in K
    // prior draws, mirroring the sampled path; return-bin conditioning
    // (rcsl, pct-bc) deliberately targets rare high-return bins, so no floor.
    bool exhaustive = b.num_z <= K;
    double floor = (b.method == Method::Doc || b.method == Method::Vae)
                       ? 0.5 / double(K)
                       : 0.0;
    return select_latent(b.prior_probs(), values, K, rng, exhaustive, floor);
}

// pi(.|., z) as a PolicyFn; masks to the environment's available actions.
inline PolicyFn conditioned_policy(const TabularBundle& b,
                                   const Environment& env, int z) {
    auto bptr = std::make_shared<TabularBundle>(b);
    auto eptr = std::make_shared<Environment>(env);
    return [bptr, eptr, z](const Trajectory&, int, int s) {
        return bptr->policy_probs(s, z, eptr->actions_at(s));
    };
}

// |V(z) - V_M(pi_z)|, the Definition-1 consistency gap.
inline double consistency_gap(const TabularBundle& b, const Environment& env,
                              int z, std::size_t budget = 500000) {
    double exact = exact_policy_value(env, conditioned_policy(b, env, z), budget);
    return std::abs(b.value_of(z) - exact);
}

// Latent atoms carrying non-negligible aggregate posterior mass over the
// dataset; the empirical counterpart of Pr[z|q,D] > 0.
inline std::vector<int> supported_latents(const TabularBundle& b,
                                          const Dataset& data,
                                          double threshold = 1e-3) {
    std::vector<double> mass(b.num_z, 0.0);
    for (const auto& tau : data.trajectories) {
        auto q = b.posterior_probs(tau);
        for (int z = 0; z < b.num_z; ++z) mass[z] += q[z] / double(data.size());
    }
    std::vector<int> out;
    for (int z = 0; z < b.num_z; ++z)
        if (mass[z] >= threshold) out.push_back(z);
    return out;
}

// --- exact discrete conditional mutual information -------------------------

// Plug-in conditional MI from weighted joint counts: sum_c p(c) *
// KL(p(x,z|c) || p(x|c) p(z|c)), in nats. Inputs are (x, z, c) triples.
inline double plugin_conditional_mi(
    const std::vector<std::tuple<int, int, int>>& samples,
    const std::vector<double>& weights) {
    if (samples.size() != weights.size())
        throw ShapeError("plugin_conditional_mi: size mismatch");
    std::map<int, double> pc;
    std::map<std::tuple<int, int, int>, double> pxzc;
    std::map<std::pair<int, int>, double> pxc, pzc;
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& [x, z, c] = samples[i];
        const double w = weights[i];
        if (w <= 0.0) continue;
        pc[c] += w;
        pxzc[{x, z, c}] += w;
        pxc[{x, c}] += w;
        pzc[{z, c}] += w;
        total += w;
    }
    if (total <= 0.0) return 0.0;
    double mi = 0.0;
    for (const auto& [key, w] : pxzc) {
        const auto& [x, z, c] = key;
        double pj = w / total;
        double px = pxc.at({x, c}) / pc.at(c);
        double pz = pzc.at({z, c}) / pc.at(c);
        mi += pj * std::log((w / pc.at(c)) / (px * pz));
    }
    return std::max(mi, 0.0);
}

struct MiEstimate {
    double reward_mi = 0.0;
    double next_state_mi = 0.0;
};

// Conditional MI between the latent and each of (r_t, s_{t+1}), conditioned
// on (s_t, a_t) (or the full history prefix), pooled across timesteps.
// z_weights[i] is a distribution over latent atoms for trajectory i.
inline MiEstimate mi_exact_discrete(
    const std::vector<Trajectory>& taus,
    const std::vector<std::vector<double>>& z_weights,
    bool condition_on_history = false) {
    if (taus.size() != z_weights.size())
        throw ShapeError("mi_exact_discrete: trajectory/weight count mismatch");
    // Dense integer codes for rewards, conditioning cells.
    std::map<double, int> reward_code;
    std::map<std::string, int> cell_code;
    std::vector<std::tuple<int, int, int>> r_samples, s_samples;
    std::vector<double> r_weights, s_weights;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const Trajectory& tau = taus[i];
        const int H = tau.horizon();
        std::string hist;
        for (int t = 0; t <= H; ++t) {
            std::string cell = condition_on_history
                                   ? hist + "|" + std::to_string(tau.states[t]) +
                                         "," + std::to_string(tau.actions[t])
                                   : std::to_string(tau.states[t]) + "," +
                                         std::to_string(tau.actions[t]);
            int c = cell_code.emplace(cell, int(cell_code.size())).first->second;
            int rx = reward_code.emplace(tau.rewards[t], int(reward_code.size()))
                         .first->second;
            int sx = t < H ? tau.states[t + 1] : -1;
            for (std::size_t z = 0; z < z_weights[i].size(); ++z) {
                double w = z_weights[i][z];
                if (w <= 0.0) continue;
                r_samples.emplace_back(rx, int(z), c);
                r_weights.push_back(w);
                s_samples.emplace_back(sx, int(z), c);
                s_weights.push_back(w);
            }
            hist += std::to_string(tau.states[t]) + "," +
                    std::to_string(tau.actions[t]) + "," +
                    std::to_string(tau.rewards[t]) + ";";
        }
    }
    return {plugin_conditional_mi(r_samples, r_weights),
            plugin_conditional_mi(s_samples, s_weights)};
}

inline MiEstimate mi_exact_discrete(const TabularBundle& b, const Dataset& data,
                                    bool condition_on_history = false) {
    std::vector<std::vector<double>> zw;
    zw.reserve(data.size());
    for (const auto& tau : data.trajectories)
        zw.push_back(b.posterior_probs(tau));
    return mi_exact_discrete(data.trajectories, zw, condition_on_history);
}

// --- Bayes-optimal tabular fit (exact-frequency oracle) ---------------------

// Time-dependent Markov policy and value fitted exactly to a weighted
// trajectory distribution under a fixed latent assignment. This is the
// no-optimization-error reference the consistency theorems assume.
struct BayesFit {
    int num_z = 0;
    // pi[t][s][z] -> action distribution; missing cells fall back to uniform.
    std::map<std::tuple<int, int, int>, std::vector<double>> policy;
    std::vector<double> value;         // E[R | z]
    std::vector<double> z_marginal;    // Pr[z]
    int num_actions = 0;

    PolicyFn conditioned(const Environment& env, int z) const {
        auto self = std::make_shared<BayesFit>(*this);
        auto eptr = std::make_shared<Environment>(env);
        return [self, eptr, z](const Trajectory&, int t, int s) {
            auto it = self->policy.find({t, s, z});
            if (it != self->policy.end()) return it->second;
            std::vector<double> p(self->num_actions, 0.0);
            const auto& avail = eptr->actions_at(s);
            for (int a : avail) p[a] = 1.0 / double(avail.size());
            return p;
        };
    }
};

// weights[i]: probability of trajectory i; z_weights[i]: Pr[z | tau_i].
inline BayesFit fit_bayes_tabular(const std::vector<Trajectory>& taus,
                                  const std::vector<double>& weights,
                                  const std::vector<std::vector<double>>& z_weights,
                                  int num_actions) {
    if (taus.empty()) throw InvalidParameterError("fit_bayes_tabular: empty");
    BayesFit fit;
    fit.num_actions = num_actions;
    fit.num_z = int(z_weights.front().size());
    fit.value.assign(fit.num_z, 0.0);
    fit.z_marginal.assign(fit.num_z, 0.0);
    std::map<std::tuple<int, int, int>, std::vector<double>> counts;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const Trajectory& tau = taus[i];
        for (int z = 0; z < fit.num_z; ++z) {
            double w = weights[i] * z_weights[i][z];
            if (w <= 0.0) continue;
            fit.z_marginal[z] += w;
            fit.value[z] += w * tau.ret();
            for (std::size_t t = 0; t < tau.states.size(); ++t) {
                auto& c = counts[{int(t), tau.states[t], z}];
                if (c.empty()) c.assign(num_actions, 0.0);
                c[tau.actions[t]] += w;
            }
        }
    }
    for (int z = 0; z < fit.num_z; ++z)
        if (fit.z_marginal[z] > 0.0) fit.value[z] /= fit.z_marginal[z];
    for (auto& [key, c] : counts) {
        double total = 0.0;
        for (double x : c) total += x;
        for (double& x : c) x /= total;
        fit.policy.emplace(key, c);
    }
    return fit;
}

// --- Appendix-style counter-example check ----------------------------------

struct CounterexampleReport {
    std::vector<double> policy_s0_z0;  // should be [0.5, 0.5]
    std::vector<double> policy_s1_z0;  // should be [0.5, 0.5]
    double prob_tau2_env = 0.0;        // Pr[tau_2 | pi_z0, M]; should be 0.25
    double prob_tau2_data_z0 = 0.0;    // Pr[tau_2 | z0, D]; should be 0
    double value_gap_z0 = 0.0;         // Definition-1 gap; should be 0
    bool pass = false;
};

// Builds the deterministic two-step environment, the four equal-weight
// episodes, and the action-pair clustering; shows that trajectory-support
// consistency fails while Definition-1 consistency holds.
inline CounterexampleReport counterexample_check() {
    Environment env = counterexample_env();
    // tau_0 .. tau_3 keyed by (a0, a1): (0,0), (1,1), (0,1), (1,0).
    auto make_tau = [](int a0, int a1) {
        Trajectory tau;
        tau.states = {0, 1};
        tau.actions = {a0, a1};
        tau.rewards = {0.0, 0.0};
        return tau;
    };
    std::vector<Trajectory> taus = {make_tau(0, 0), make_tau(1, 1),
                                    make_tau(0, 1), make_tau(1, 0)};
    std::vector<double> weights(4, 0.25);
    // z0 = {tau_0, tau_1}, z1 = {tau_2, tau_3}.
    std::vector<std::vector<double>> zw = {
        {1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}};
    BayesFit fit = fit_bayes_tabular(taus, weights, zw, env.num_actions);

    CounterexampleReport rep;
    PolicyFn pi_z0 = fit.conditioned(env, 0);
    rep.policy_s0_z0 = pi_z0(Trajectory{}, 0, 0);
    rep.policy_s1_z0 = pi_z0(Trajectory{}, 1, 1);

    // Pr[tau_2 | pi_z0, M]: enumerate and pick the (a0=0, a1=1) episode.
    for (const auto& wt : enumerate_trajectories(env))
        if (wt.trajectory.actions == std::vector<int>{0, 1})
            rep.prob_tau2_env =
                wt.env_prob * policy_factor(wt.trajectory, pi_z0);
    // Pr[tau_2 | z0, D].
    double mass = 0.0;
    for (std::size_t i = 0; i < taus.size(); ++i)
        if (taus[i].actions == std::vector<int>{0, 1})
            mass += weights[i] * zw[i][0];
    rep.prob_tau2_data_z0 = mass / fit.z_marginal[0];

    double exact = exact_policy_value(env, pi_z0);
    rep.value_gap_z0 = std::abs(fit.value[0] - exact);

    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    rep.pass = close(rep.policy_s0_z0[0], 0.5) && close(rep.policy_s0_z0[1], 0.5) &&
               close(rep.policy_s1_z0[0], 0.5) && close(rep.policy_s1_z0[1], 0.5) &&
               close(rep.prob_tau2_env, 0.25) &&
               close(rep.prob_tau2_data_z0, 0.0) && close(rep.value_gap_z0, 0.0);
    return rep;
}

// --- evaluation ------------------------------------------------------------

struct EvalReport {
    std::string method;
    std::string env_name;
    double param_p = 0.0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    int selected_z = -1;
    double v_selected = 0.0;
    double mean_return = 0.0;
    double ci95 = 0.0;
    std::optional<double> exact_value;
    std::optional<double> gap;
};

inline void write_eval_csv_header(std::ostream& os) {
    os << "method,env,p,epsilon,seed,v_selected,mean_return,ci95,exact_value,"
          "gap\n";
}

inline void write_eval_csv_row(std::ostream& os, const EvalReport& r) {
    os << r.method << "," << r.env_name << "," << r.param_p << "," << r.epsilon
       << "," << r.seed << "," << r.v_selected << "," << r.mean_return << ","
       << r.ci95 << ",";
    if (r.exact_value) os << *r.exact_value;
    os << ",";
    if (r.gap) os << *r.gap;
    os << "\n";
}

// Algorithm-1 latent selection, Monte Carlo rollout, and (when the
// environment is small enough to enumerate) the exact value and gap.
inline EvalReport evaluate(const TabularBundle& b, const Environment& env,
                           int n_rollouts, int K, std::uint64_t seed,
                           std::size_t enum_budget = 500000) {
    EvalReport rep;
    rep.method = method_name(b.method);
    rep.env_name = env.name;
    rep.seed = seed;
    Rng sel_rng = make_rng(seed, 41);
    rep.selected_z = select_latent(b, K, sel_rng);
    rep.v_selected = b.value_of(rep.selected_z);
    PolicyFn pi = conditioned_policy(b, env, rep.selected_z);

    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n_rollouts; ++i) {
        Rng rng = make_rng(seed, 100 + std::uint64_t(i));
        double r = sample_episode(env, pi, rng).ret();
        sum += r;
        sumsq += r * r;
    }
    rep.mean_return = sum / n_rollouts;
    if (n_rollouts > 1) {
        double var = std::max(
            0.0, (sumsq - sum * sum / n_rollouts) / (n_rollouts - 1));
        rep.ci95 = 1.96 * std::sqrt(var / n_rollouts);
    }
    try {
        double exact = exact_policy_value(env, pi, enum_budget);
        rep.exact_value = exact;
        rep.gap = std::abs(rep.v_selected - exact);
    } catch (const EnumerationTooLargeError&) {
        // Monte Carlo only; gap column left empty.
    }
    return rep;
}

}  // namespace doc
