#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doc/distribution.hpp"
#include "doc/errors.hpp"
#include "doc/rng.hpp"

namespace doc {

// Episode (s_t, a_t, r_t) for t = 0..H. All three lists have length H+1.
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<double> rewards;

    int horizon() const { return static_cast<int>(states.size()) - 1; }

    double ret() const {
        return std::accumulate(rewards.begin(), rewards.end(), 0.0);
    }

    bool operator==(const Trajectory& o) const = default;

    // Stable textual key for tabular posterior lookup and grouping.
    std::string signature() const {
        std::ostringstream os;
        for (std::size_t t = 0; t < states.size(); ++t)
            os << states[t] << ":" << actions[t] << ":" << rewards[t] << ";";
        return os.str();
    }
};

// Finite-horizon stochastic MDP with explicit finite reward/transition
// distributions. Immutable after construction.
struct Environment {
    std::string name;
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    int initial_state = 0;
    bool markov = true;

    // Indexed [state][action]; entries valid for every available action.
    std::vector<std::vector<FiniteDist<double>>> reward;
    std::vector<std::vector<FiniteDist<int>>> transition;
    // Available actions per state (subset of 0..num_actions-1).
    std::vector<std::vector<int>> available;

    const FiniteDist<double>& reward_dist(int s, int a) const {
        return reward.at(s).at(a);
    }
    const FiniteDist<int>& transition_dist(int s, int a) const {
        return transition.at(s).at(a);
    }
    const std::vector<int>& actions_at(int s) const { return available.at(s); }

    // Stable config string; hashed into the dataset fingerprint.
    std::string config_string() const {
        std::ostringstream os;
        os << name << "|S=" << num_states << "|A=" << num_actions
           << "|H=" << horizon << "|s0=" << initial_state;
        for (int s = 0; s < num_states; ++s)
            for (int a : available[s]) {
                os << "|R(" << s << "," << a << ")=";
                const auto& rd = reward[s][a];
                for (std::size_t i = 0; i < rd.size(); ++i)
                    os << rd.atoms[i] << "@" << rd.probs[i] << ",";
                os << "|T(" << s << "," << a << ")=";
                const auto& td = transition[s][a];
                for (std::size_t i = 0; i < td.size(); ++i)
                    os << td.atoms[i] << "@" << td.probs[i] << ",";
            }
        return os.str();
    }

    void validate() const {
        for (int s = 0; s < num_states; ++s)
            for (int a : available[s]) {
                if (!reward[s][a].normalized())
                    throw InvalidParameterError("reward dist not normalized");
                if (!transition[s][a].normalized())
                    throw InvalidParameterError("transition dist not normalized");
            }
    }
};

// Action distribution given the episode prefix (entries 0..t-1 filled),
// the timestep t, and the current state. Returns probs over all actions;
// mass outside actions_at(state) must be zero.
using PolicyFn =
    std::function<std::vector<double>(const Trajectory& prefix, int t, int state)>;

inline PolicyFn uniform_policy(const Environment& env) {
    return [env](const Trajectory&, int, int s) {
        std::vector<double> p(env.num_actions, 0.0);
        const auto& avail = env.actions_at(s);
        for (int a : avail) p[a] = 1.0 / static_cast<double>(avail.size());
        return p;
    };
}

inline PolicyFn constant_action_policy(const Environment& env, int action) {
    return [env, action](const Trajectory&, int, int s) {
        std::vector<double> p(env.num_actions, 0.0);
        const auto& avail = env.actions_at(s);
        for (int a : avail)
            if (a == action) {
                p[a] = 1.0;
                return p;
            }
        // Fall back to the single available action at restricted states.
        if (avail.size() == 1) {
            p[avail[0]] = 1.0;
            return p;
        }
        throw PolicyError("constant_action_policy: action unavailable at state");
    };
}

inline void check_action_probs(const Environment& env, int s,
                               const std::vector<double>& p) {
    if (static_cast<int>(p.size()) != env.num_actions)
        throw PolicyError("policy returned wrong-size action distribution");
    double total = 0.0;
    std::vector<char> ok(env.num_actions, 0);
    for (int a : env.actions_at(s)) ok[a] = 1;
    for (int a = 0; a < env.num_actions; ++a) {
        if (p[a] < -1e-12 || !std::isfinite(p[a]))
            throw PolicyError("policy returned invalid probability");
        if (p[a] > 1e-12 && !ok[a])
            throw PolicyError("policy put mass on unavailable action");
        total += p[a];
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw PolicyError("policy distribution does not sum to 1");
}

// --- built-in environments -------------------------------------------------

// Two-armed bandit, H=0: arm 0 pays Bern(1-p), arm 1 pays Bern(p).
inline Environment bandit_env(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw InvalidParameterError("bandit_env: p must be in [0,1]");
    Environment env;
    env.name = "bandit";
    env.num_states = 1;
    env.num_actions = 2;
    env.horizon = 0;
    env.initial_state = 0;
    env.available = {{0, 1}};
    env.reward = {{FiniteDist<double>({1.0, 0.0}, {1.0 - p, p}),
                   FiniteDist<double>({1.0, 0.0}, {p, 1.0 - p})}};
    env.transition = {{FiniteDist<int>::point(0), FiniteDist<int>::point(0)}};
    return env;
}

// H=1 tree: at the root, action 0 reaches a reward-r_hi leaf with
// probability q_hi (else a zero-reward leaf); action 1 surely reaches a
// reward-r_lo leaf. Leaves have a single no-op action carrying the payoff.
inline Environment toy_tree_env(double q_hi = 0.01, double r_hi = 100.0,
                                double r_lo = 10.0) {
    if (!(q_hi >= 0.0 && q_hi <= 1.0))
        throw InvalidParameterError("toy_tree_env: q_hi must be in [0,1]");
    Environment env;
    env.name = "toytree";
    env.num_states = 4;  // 0 root, 1 hi leaf, 2 zero leaf, 3 lo leaf
    env.num_actions = 2;
    env.horizon = 1;
    env.initial_state = 0;
    env.available = {{0, 1}, {0}, {0}, {0}};
    env.reward.assign(4, std::vector<FiniteDist<double>>(2));
    env.transition.assign(4, std::vector<FiniteDist<int>>(2));
    env.reward[0][0] = FiniteDist<double>::point(0.0);
    env.reward[0][1] = FiniteDist<double>::point(0.0);
    if (q_hi >= 1.0)
        env.transition[0][0] = FiniteDist<int>::point(1);
    else if (q_hi <= 0.0)
        env.transition[0][0] = FiniteDist<int>::point(2);
    else
        env.transition[0][0] = FiniteDist<int>({1, 2}, {q_hi, 1.0 - q_hi});
    env.transition[0][1] = FiniteDist<int>::point(3);
    env.reward[1][0] = FiniteDist<double>::point(r_hi);
    env.reward[2][0] = FiniteDist<double>::point(0.0);
    env.reward[3][0] = FiniteDist<double>::point(r_lo);
    for (int s = 1; s < 4; ++s) env.transition[s][0] = FiniteDist<int>::point(s);
    return env;
}

// Deterministic 3-state counter-example: binary choices at s0 and s1,
// every transition and reward is a point mass, all rewards zero.
inline Environment counterexample_env() {
    Environment env;
    env.name = "counterexample";
    env.num_states = 3;
    env.num_actions = 2;
    env.horizon = 1;
    env.initial_state = 0;
    env.available = {{0, 1}, {0, 1}, {0, 1}};
    env.reward.assign(3, std::vector<FiniteDist<double>>(
                             2, FiniteDist<double>::point(0.0)));
    env.transition.assign(3, std::vector<FiniteDist<int>>(2));
    for (int a = 0; a < 2; ++a) {
        env.transition[0][a] = FiniteDist<int>::point(1);
        env.transition[1][a] = FiniteDist<int>::point(2);
        env.transition[2][a] = FiniteDist<int>::point(2);
    }
    return env;
}

// --- FrozenLake ------------------------------------------------------------

struct LakeLayout {
    int width = 0;
    int height = 0;
    std::vector<std::string> rows;  // characters S, G, H, F
};

inline LakeLayout parse_lake_layout(const std::string& text) {
    LakeLayout layout;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        layout.rows.push_back(line);
    }
    if (layout.rows.empty()) throw LayoutError("lake layout: empty grid");
    layout.height = static_cast<int>(layout.rows.size());
    layout.width = static_cast<int>(layout.rows[0].size());
    int starts = 0, goals = 0;
    for (const auto& row : layout.rows) {
        if (static_cast<int>(row.size()) != layout.width)
            throw LayoutError("lake layout: ragged rows");
        for (char c : row) {
            if (c == 'S') ++starts;
            else if (c == 'G') ++goals;
            else if (c != 'H' && c != 'F')
                throw LayoutError(std::string("lake layout: bad cell '") + c + "'");
        }
    }
    if (starts != 1) throw LayoutError("lake layout: need exactly one start");
    if (goals < 1) throw LayoutError("lake layout: need at least one goal");
    return layout;
}

inline const char* classic_lake_4x4() {
    return "SFFF\nFHFH\nFFFH\nHFFG\n";
}

// Slippery gridworld: intended move with prob p, each perpendicular slip
// with prob 0.5*(1-p). Goal pays 1 then absorbs into a sink state; holes
// absorb with 0. Moves into walls keep the agent in place. Actions follow
// the gym convention 0=left, 1=down, 2=right, 3=up.
inline Environment frozen_lake_env(const LakeLayout& layout, double p,
                                   int horizon) {
    if (!(p >= 0.0 && p <= 1.0))
        throw InvalidParameterError("frozen_lake_env: p must be in [0,1]");
    if (horizon < 0)
        throw InvalidParameterError("frozen_lake_env: horizon must be >= 0");
    const int w = layout.width, h = layout.height;
    const int sink = w * h;  // absorbing state shared by goals and holes
    Environment env;
    env.name = "frozenlake" + std::to_string(w) + "x" + std::to_string(h);
    env.num_states = w * h + 1;
    env.num_actions = 4;
    env.horizon = horizon;
    env.markov = true;

    auto cell = [&](int s) { return layout.rows[s / w][s % w]; };
    for (int s = 0; s < w * h; ++s)
        if (cell(s) == 'S') env.initial_state = s;

    static constexpr int dx[4] = {-1, 0, 1, 0};
    static constexpr int dy[4] = {0, 1, 0, -1};
    auto step_to = [&](int s, int a) {
        int x = s % w + dx[a];
        int y = s / w + dy[a];
        if (x < 0 || x >= w || y < 0 || y >= h) return s;  // bounce
        return y * w + x;
    };

    env.available.assign(env.num_states, {0, 1, 2, 3});
    env.reward.assign(env.num_states, std::vector<FiniteDist<double>>(4));
    env.transition.assign(env.num_states, std::vector<FiniteDist<int>>(4));
    for (int s = 0; s < env.num_states; ++s) {
        const bool absorbing = (s == sink) || cell(s) == 'H';
        const bool goal = (s != sink) && cell(s) == 'G';
        for (int a = 0; a < 4; ++a) {
            env.reward[s][a] = FiniteDist<double>::point(goal ? 1.0 : 0.0);
            if (absorbing) {
                env.transition[s][a] = FiniteDist<int>::point(sink);
                continue;
            }
            if (goal) {
                env.transition[s][a] = FiniteDist<int>::point(sink);
                continue;
            }
            // Aggregate slip outcomes that land on the same cell.
            std::vector<int> dest;
            std::vector<double> prob;
            auto add = [&](int d, double pr) {
                if (pr <= 0.0) return;
                for (std::size_t i = 0; i < dest.size(); ++i)
                    if (dest[i] == d) {
                        prob[i] += pr;
                        return;
                    }
                dest.push_back(d);
                prob.push_back(pr);
            };
            add(step_to(s, a), p);
            add(step_to(s, (a + 1) % 4), 0.5 * (1.0 - p));
            add(step_to(s, (a + 3) % 4), 0.5 * (1.0 - p));
            env.transition[s][a] = FiniteDist<int>(std::move(dest), std::move(prob));
        }
    }
    return env;
}

inline Environment frozen_lake_env(const std::string& layout_text, double p,
                                   int horizon) {
    return frozen_lake_env(parse_lake_layout(layout_text), p, horizon);
}

// --- rollout and enumeration ----------------------------------------------

inline Trajectory sample_episode(const Environment& env, const PolicyFn& policy,
                                 Rng& rng) {
    Trajectory tau;
    int s = env.initial_state;
    for (int t = 0; t <= env.horizon; ++t) {
        auto probs = policy(tau, t, s);
        check_action_probs(env, s, probs);
        int a = sample_index(probs, rng);
        double r = env.reward_dist(s, a).sample(rng);
        tau.states.push_back(s);
        tau.actions.push_back(a);
        tau.rewards.push_back(r);
        if (t < env.horizon) s = env.transition_dist(s, a).sample(rng);
    }
    return tau;
}

struct WeightedTrajectory {
    Trajectory trajectory;
    double env_prob = 0.0;  // product of reward and transition factors only
};

// Lists every trajectory with nonzero environment support, with the exact
// product of its R/T factors. Policy factors are the caller's to multiply.
inline std::vector<WeightedTrajectory> enumerate_trajectories(
    const Environment& env, std::size_t budget = 500000) {
    std::vector<WeightedTrajectory> out;
    Trajectory tau;
    std::function<void(int, int, double)> dfs = [&](int t, int s, double prob) {
        for (int a : env.actions_at(s)) {
            const auto& rd = env.reward_dist(s, a);
            for (std::size_t ri = 0; ri < rd.size(); ++ri) {
                if (rd.probs[ri] <= 0.0) continue;
                tau.states.push_back(s);
                tau.actions.push_back(a);
                tau.rewards.push_back(rd.atoms[ri]);
                double pr = prob * rd.probs[ri];
                if (t == env.horizon) {
                    if (out.size() >= budget)
                        throw EnumerationTooLargeError(
                            "enumerate_trajectories: budget exceeded");
                    out.push_back({tau, pr});
                } else {
                    const auto& td = env.transition_dist(s, a);
                    for (std::size_t si = 0; si < td.size(); ++si) {
                        if (td.probs[si] <= 0.0) continue;
                        dfs(t + 1, td.atoms[si], pr * td.probs[si]);
                    }
                }
                tau.states.pop_back();
                tau.actions.pop_back();
                tau.rewards.pop_back();
            }
        }
    };
    dfs(0, env.initial_state, 1.0);
    return out;
}

// Probability of a trajectory's action choices under a policy.
inline double policy_factor(const Trajectory& tau, const PolicyFn& policy) {
    double p = 1.0;
    Trajectory prefix;
    for (std::size_t t = 0; t < tau.states.size(); ++t) {
        auto probs = policy(prefix, static_cast<int>(t), tau.states[t]);
        p *= probs[tau.actions[t]];
        prefix.states.push_back(tau.states[t]);
        prefix.actions.push_back(tau.actions[t]);
        prefix.rewards.push_back(tau.rewards[t]);
    }
    return p;
}

}  // namespace doc
