#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "doc/autodiff.hpp"
#include "doc/dataset.hpp"
#include "doc/environment.hpp"
#include "doc/errors.hpp"
#include "doc/latent.hpp"
#include "doc/rng.hpp"

namespace doc {

enum class Method { Doc, Rcsl, Vae, PctBc };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Doc: return "doc";
        case Method::Rcsl: return "rcsl";
        case Method::Vae: return "vae";
        case Method::PctBc: return "pct-bc";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "doc") return Method::Doc;
    if (s == "rcsl" || s == "dt") return Method::Rcsl;
    if (s == "vae") return Method::Vae;
    if (s == "pct-bc" || s == "pctbc" || s == "bc") return Method::PctBc;
    throw InvalidParameterError("unknown method: " + s);
}

inline void init_uniform(ad::ParamStore& store, Rng& rng, double scale = 0.05) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : store.values) v = u(rng);
}

inline void init_fan_in(ad::ParamStore& store, Rng& rng, int fan_in) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(double(fan_in)));
    for (auto& v : store.values) v = n(rng);
}

// --- tabular bundle --------------------------------------------------------

// Lookup-table parameterization of the five learnable functions. The latent
// is categorical over num_z atoms (for rcsl, atoms are return bins; for
// pct-bc there is a single dummy atom).
struct TabularBundle {
    Method method = Method::Doc;
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    int num_z = 0;

    // Posterior rows, keyed by full trajectory signature.
    std::vector<std::string> row_sig;
    std::unordered_map<std::string, int> sig_row;

    // Reward atoms observed in the training dataset (sorted).
    std::vector<double> reward_atoms;
    // rcsl: distinct returns (sorted); atom id -> conditioned return value.
    std::vector<double> return_values;

    ad::ParamStore q_logits;       // [rows][num_z]
    ad::ParamStore policy_logits;  // [S][num_z][A]
    ad::ParamStore prior_logits;   // [num_z]
    ad::ParamStore value;          // [num_z]
    ad::ParamStore energy;         // [R][S+1][num_z][S][A]

    bool trains_posterior() const {
        return method == Method::Doc || method == Method::Vae;
    }

    int pol_index(int s, int z, int a) const {
        return (s * num_z + z) * num_actions + a;
    }
    int sp_index(int sp) const { return sp == kNoNextState ? num_states : sp; }
    int en_index(int ri, int sp, int z, int s, int a) const {
        return (((ri * (num_states + 1) + sp_index(sp)) * num_z + z) *
                    num_states +
                s) * num_actions + a;
    }
    int reward_index(double r) const {
        auto it = std::lower_bound(reward_atoms.begin(), reward_atoms.end(), r);
        if (it == reward_atoms.end() || *it != r)
            throw InvalidParameterError("reward value outside dataset support");
        return static_cast<int>(it - reward_atoms.begin());
    }
    int return_bin(double ret) const {
        int best = 0;
        double dist = std::abs(return_values[0] - ret);
        for (std::size_t i = 1; i < return_values.size(); ++i) {
            double d = std::abs(return_values[i] - ret);
            if (d < dist) {
                dist = d;
                best = static_cast<int>(i);
            }
        }
        return best;
    }
    int row_of(const Trajectory& tau) const {
        auto it = sig_row.find(tau.signature());
        if (it == sig_row.end())
            throw InvalidParameterError("trajectory outside posterior support");
        return it->second;
    }

    // Plain-double softmax of the posterior row for tau.
    std::vector<double> posterior_probs(const Trajectory& tau) const {
        if (method == Method::Rcsl) {
            std::vector<double> p(num_z, 0.0);
            p[return_bin(tau.ret())] = 1.0;
            return p;
        }
        if (method == Method::PctBc) return {1.0};
        return softmax_row(q_logits, row_of(tau) * num_z, num_z);
    }

    std::vector<double> prior_probs() const {
        return softmax_row(prior_logits, 0, num_z);
    }

    double value_of(int z) const {
        if (method == Method::Rcsl) return return_values[z];
        return value.values[z];
    }

    // Action distribution at state s conditioned on latent atom z,
    // restricted to the available action set.
    std::vector<double> policy_probs(int s, int z,
                                     const std::vector<int>& avail) const {
        std::vector<double> p(num_actions, 0.0);
        double m = -1e300;
        for (int a : avail)
            m = std::max(m, policy_logits.values[pol_index(s, z, a)]);
        double denom = 0.0;
        for (int a : avail) {
            p[a] = std::exp(policy_logits.values[pol_index(s, z, a)] - m);
            denom += p[a];
        }
        for (int a : avail) p[a] /= denom;
        return p;
    }

    static std::vector<double> softmax_row(const ad::ParamStore& store,
                                           int offset, int n) {
        double m = -1e300;
        for (int i = 0; i < n; ++i) m = std::max(m, store.values[offset + i]);
        std::vector<double> p(n);
        double denom = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = std::exp(store.values[offset + i] - m);
            denom += p[i];
        }
        for (auto& x : p) x /= denom;
        return p;
    }
};

inline TabularBundle make_tabular_bundle(Method method, const Dataset& data,
                                         int num_states, int num_actions,
                                         int latent_atoms, std::uint64_t seed) {
    if (data.trajectories.empty())
        throw InvalidParameterError("make_tabular_bundle: empty dataset");
    TabularBundle b;
    b.method = method;
    b.num_states = num_states;
    b.num_actions = num_actions;
    b.horizon = data.horizon();

    std::set<double> rewards;
    std::set<double> returns;
    for (const auto& tau : data.trajectories) {
        for (double r : tau.rewards) rewards.insert(r);
        returns.insert(tau.ret());
        if (b.sig_row.emplace(tau.signature(), int(b.row_sig.size())).second)
            b.row_sig.push_back(tau.signature());
    }
    b.reward_atoms.assign(rewards.begin(), rewards.end());
    b.return_values.assign(returns.begin(), returns.end());

    switch (method) {
        case Method::Doc:
        case Method::Vae: b.num_z = latent_atoms; break;
        case Method::Rcsl: b.num_z = int(b.return_values.size()); break;
        case Method::PctBc: b.num_z = 1; break;
    }

    Rng rng = make_rng(seed, 901);
    b.q_logits = ad::ParamStore("q_logits");
    b.policy_logits = ad::ParamStore("policy_logits");
    b.prior_logits = ad::ParamStore("prior_logits");
    b.value = ad::ParamStore("value");
    b.energy = ad::ParamStore("energy");
    if (b.trains_posterior())
        b.q_logits.resize(b.row_sig.size() * b.num_z);
    b.policy_logits.resize(std::size_t(num_states) * b.num_z * num_actions);
    b.prior_logits.resize(b.num_z);
    b.value.resize(b.num_z);
    b.energy.resize(std::size_t(b.reward_atoms.size()) * (num_states + 1) *
                    b.num_z * num_states * num_actions);
    init_uniform(b.q_logits, rng);
    init_uniform(b.policy_logits, rng);
    init_uniform(b.prior_logits, rng);
    init_uniform(b.value, rng);
    init_uniform(b.energy, rng);

    if (method == Method::Rcsl) {
        // V(z) is the conditioned return itself; the prior is the empirical
        // return distribution.
        for (int z = 0; z < b.num_z; ++z) b.value.values[z] = b.return_values[z];
        std::vector<double> counts(b.num_z, 0.0);
        for (const auto& tau : data.trajectories)
            counts[b.return_bin(tau.ret())] += 1.0;
        for (int z = 0; z < b.num_z; ++z)
            b.prior_logits.values[z] =
                std::log(std::max(counts[z] / double(data.size()), kLogProbFloor));
    }
    return b;
}

// --- small-MLP bundle ------------------------------------------------------

struct Mlp {
    int nin = 0, nh = 0, nout = 0;
    ad::ParamStore w1, b1, w2, b2;

    Mlp() = default;
    Mlp(const std::string& name, int in, int hidden, int out, Rng& rng)
        : nin(in), nh(hidden), nout(out),
          w1(name + ".w1", std::size_t(hidden) * in),
          b1(name + ".b1", hidden),
          w2(name + ".w2", std::size_t(out) * hidden),
          b2(name + ".b2", out) {
        init_fan_in(w1, rng, in);
        init_fan_in(w2, rng, hidden);
    }

    std::vector<ad::Var> forward(ad::Tape& t,
                                 const std::vector<ad::Var>& x) const {
        if (int(x.size()) != nin) throw ShapeError("Mlp: input size mismatch");
        std::vector<ad::Var> h;
        h.reserve(nh);
        for (int j = 0; j < nh; ++j) {
            ad::Var acc = ad::param(t, const_cast<ad::ParamStore&>(b1), j);
            for (int i = 0; i < nin; ++i)
                acc = acc +
                      ad::param(t, const_cast<ad::ParamStore&>(w1),
                                std::size_t(j) * nin + i) * x[i];
            h.push_back(ad::relu(acc));
        }
        std::vector<ad::Var> y;
        y.reserve(nout);
        for (int k = 0; k < nout; ++k) {
            ad::Var acc = ad::param(t, const_cast<ad::ParamStore&>(b2), k);
            for (int j = 0; j < nh; ++j)
                acc = acc +
                      ad::param(t, const_cast<ad::ParamStore&>(w2),
                                std::size_t(k) * nh + j) * h[j];
            y.push_back(acc);
        }
        return y;
    }

    std::vector<ad::ParamStore*> stores() { return {&w1, &b1, &w2, &b2}; }
};

// Neural variant: Gaussian latent, mean-pooled step embeddings as the
// sequence summarizer over a context window.
struct MlpBundle {
    Method method = Method::Doc;
    int num_states = 0;
    int num_actions = 0;
    int latent_dim = 8;
    int embed_dim = 16;
    int hidden = 64;
    int window = 20;

    Mlp step_embed;  // [onehot(s), onehot(a), r] -> embedding
    Mlp posterior;   // pooled future embedding -> (mu, log_sigma)
    Mlp prior;       // onehot(s0) -> (mu, log_sigma)
    Mlp policy;      // [onehot(s), hist, z] -> action logits
    Mlp value;       // z -> scalar
    Mlp energy;      // [r, onehot(s')+sentinel, z, onehot(s), onehot(a), hist] -> scalar

    MlpBundle() = default;
    MlpBundle(Method m, int S, int A, int d, int W, std::uint64_t seed,
              int hidden_width = 64, int embed = 16)
        : method(m), num_states(S), num_actions(A), latent_dim(d),
          embed_dim(embed), hidden(hidden_width), window(W) {
        Rng rng = make_rng(seed, 902);
        step_embed = Mlp("step_embed", S + A + 1, hidden, embed_dim, rng);
        posterior = Mlp("posterior", embed_dim, hidden, 2 * d, rng);
        prior = Mlp("prior", S, hidden, 2 * d, rng);
        policy = Mlp("policy", S + embed_dim + d, hidden, A, rng);
        value = Mlp("value", d, hidden, 1, rng);
        energy = Mlp("energy", 1 + (S + 1) + d + S + A + embed_dim, hidden, 1,
                     rng);
    }

    std::vector<ad::Var> onehot(ad::Tape& t, int i, int n) const {
        std::vector<ad::Var> v;
        v.reserve(n);
        for (int k = 0; k < n; ++k)
            v.push_back(ad::constant(t, k == i ? 1.0 : 0.0));
        return v;
    }

    std::vector<ad::Var> embed_step(ad::Tape& t, int s, int a,
                                    double r) const {
        std::vector<ad::Var> x = onehot(t, s, num_states);
        auto ah = onehot(t, a, num_actions);
        x.insert(x.end(), ah.begin(), ah.end());
        x.push_back(ad::constant(t, r));
        return step_embed.forward(t, x);
    }

    // Mean-pooled embeddings of steps [from, to) of tau; zeros when empty.
    std::vector<ad::Var> pooled_features(ad::Tape& t, const Trajectory& tau,
                                         int from, int to) const {
        std::vector<ad::Var> pooled;
        for (int k = 0; k < embed_dim; ++k)
            pooled.push_back(ad::constant(t, 0.0));
        int count = 0;
        for (int u = from; u < to && u < int(tau.states.size()); ++u) {
            if (u < 0) continue;
            auto e = embed_step(t, tau.states[u], tau.actions[u],
                                tau.rewards[u]);
            for (int k = 0; k < embed_dim; ++k) pooled[k] = pooled[k] + e[k];
            ++count;
        }
        if (count > 0)
            for (auto& v : pooled) v = v * (1.0 / count);
        return pooled;
    }

    // History features for acting at timestep t: the last `window` steps.
    std::vector<ad::Var> history_features(ad::Tape& t, const Trajectory& prefix,
                                          int step) const {
        return pooled_features(t, prefix, step - window, step);
    }

    std::vector<ad::ParamStore*> all_stores() {
        std::vector<ad::ParamStore*> out;
        for (Mlp* m : {&step_embed, &posterior, &prior, &policy, &value, &energy})
            for (auto* s : m->stores()) out.push_back(s);
        return out;
    }
};

// Gaussian posterior over the first `window` future steps of tau.
inline LatentDistribution posterior_encode(const MlpBundle& b, ad::Tape& t,
                                           const Trajectory& tau, int window) {
    if (tau.states.empty()) throw ShapeError("posterior_encode: empty trajectory");
    if (window > int(tau.states.size()))
        throw ShapeError("posterior_encode: window exceeds horizon+1");
    auto pooled = b.pooled_features(t, tau, 0, window);
    auto out = b.posterior.forward(t, pooled);
    std::vector<ad::Var> mu(out.begin(), out.begin() + b.latent_dim);
    std::vector<ad::Var> ls(out.begin() + b.latent_dim, out.end());
    return gaussian_latent(std::move(mu), std::move(ls));
}

// Categorical posterior via exact table lookup on the trajectory signature.
inline LatentDistribution posterior_encode(const TabularBundle& b, ad::Tape& t,
                                           const Trajectory& tau) {
    if (tau.states.empty()) throw ShapeError("posterior_encode: empty trajectory");
    int row = b.row_of(tau);
    std::vector<ad::Var> logits;
    logits.reserve(b.num_z);
    for (int z = 0; z < b.num_z; ++z)
        logits.push_back(ad::param(t, const_cast<ad::ParamStore&>(b.q_logits),
                                   std::size_t(row) * b.num_z + z));
    return categorical_latent(logits);
}

inline LatentDistribution prior_encode(const MlpBundle& b, ad::Tape& t,
                                       int s0) {
    auto out = b.prior.forward(t, b.onehot(t, s0, b.num_states));
    std::vector<ad::Var> mu(out.begin(), out.begin() + b.latent_dim);
    std::vector<ad::Var> ls(out.begin() + b.latent_dim, out.end());
    return gaussian_latent(std::move(mu), std::move(ls));
}

inline LatentDistribution prior_encode(const TabularBundle& b, ad::Tape& t) {
    std::vector<ad::Var> logits;
    logits.reserve(b.num_z);
    for (int z = 0; z < b.num_z; ++z)
        logits.push_back(
            ad::param(t, const_cast<ad::ParamStore&>(b.prior_logits), z));
    return categorical_latent(logits);
}

}  // namespace doc
