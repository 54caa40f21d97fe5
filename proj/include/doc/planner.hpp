#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <vector>

#include "doc/environment.hpp"
#include "doc/errors.hpp"

namespace doc {

// Finite-horizon tabular value iteration. q[t][s][a] is the optimal
// remaining return when taking a in s with t decision steps already spent.
struct ValueIteration {
    std::vector<std::vector<std::vector<double>>> q;  // [t][s][a]
    std::vector<std::vector<double>> v;               // [t][s]

    static ValueIteration solve(const Environment& env) {
        if (!env.markov)
            throw Error("value iteration requires a Markov environment");
        const int H = env.horizon;
        ValueIteration vi;
        vi.q.assign(H + 1, std::vector<std::vector<double>>(
                               env.num_states,
                               std::vector<double>(env.num_actions, 0.0)));
        vi.v.assign(H + 1, std::vector<double>(env.num_states, 0.0));
        for (int t = H; t >= 0; --t) {
            for (int s = 0; s < env.num_states; ++s) {
                double best = -std::numeric_limits<double>::infinity();
                for (int a : env.actions_at(s)) {
                    const auto& rd = env.reward_dist(s, a);
                    double val = 0.0;
                    for (std::size_t i = 0; i < rd.size(); ++i)
                        val += rd.atoms[i] * rd.probs[i];
                    if (t < H) {
                        const auto& td = env.transition_dist(s, a);
                        for (std::size_t i = 0; i < td.size(); ++i)
                            val += td.probs[i] * vi.v[t + 1][td.atoms[i]];
                    }
                    vi.q[t][s][a] = val;
                    best = std::max(best, val);
                }
                vi.v[t][s] = best;
            }
        }
        return vi;
    }

    int greedy_action(const Environment& env, int t, int s) const {
        int best_a = env.actions_at(s).front();
        double best = -std::numeric_limits<double>::infinity();
        for (int a : env.actions_at(s))
            if (q[t][s][a] > best + 1e-12) {
                best = q[t][s][a];
                best_a = a;
            }
        return best_a;
    }
};

// Pulls arm 0 with probability p, arm 1 otherwise.
inline PolicyFn bandit_behavior(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw InvalidParameterError("bandit_behavior: p must be in [0,1]");
    return [p](const Trajectory&, int, int) {
        return std::vector<double>{p, 1.0 - p};
    };
}

// With probability 1-epsilon act greedily w.r.t. exact value iteration on
// plan_env (typically the nominal-stochasticity copy of the deployment
// environment), with probability epsilon act uniformly.
inline PolicyFn epsilon_mixed_planner(const Environment& plan_env,
                                      double epsilon) {
    if (!plan_env.markov)
        throw Error("epsilon_mixed_planner: non-Markov environments unsupported");
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw InvalidParameterError("epsilon_mixed_planner: epsilon in [0,1]");
    auto vi = std::make_shared<ValueIteration>(ValueIteration::solve(plan_env));
    auto env = std::make_shared<Environment>(plan_env);
    return [vi, env, epsilon](const Trajectory&, int t, int s) {
        std::vector<double> p(env->num_actions, 0.0);
        const auto& avail = env->actions_at(s);
        for (int a : avail) p[a] = epsilon / static_cast<double>(avail.size());
        // Clamp t for deployment horizons longer than the planning horizon.
        int tt = std::min(t, env->horizon);
        p[vi->greedy_action(*env, tt, s)] += 1.0 - epsilon;
        return p;
    };
}

}  // namespace doc
