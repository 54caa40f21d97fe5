#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "doc/autodiff.hpp"
#include "doc/dataset.hpp"
#include "doc/environment.hpp"
#include "doc/errors.hpp"
#include "doc/latent.hpp"
#include "doc/models.hpp"
#include "doc/rng.hpp"

namespace doc {

struct TrainConfig {
    Method method = Method::Doc;
    double beta = 1.0;
    double learning_rate = 0.1;
    int batch_size = 0;  // 0 = full batch
    int negatives = 16;
    int steps = 2000;
    std::uint64_t seed = 0;
    int window = 20;
    double percentile = 10.0;  // pct-bc: keep top percentile by return
    int latent_atoms = 16;
    double st_temperature = 1.0;
    int energy_inner_steps = 1;       // extra energy-ascent steps per iteration
    // Ramp beta linearly from 0 over this many steps (0 = no warmup); lets
    // clusters form on futures before the penalty prices information out.
    long beta_warmup = 0;
    bool include_positive = true;     // append positive in sampled negatives
    // Final policy tempering: divide policy logits by this after training.
    // Values < 1 sharpen the fitted conditionals toward their modal action,
    // standing in for the smoothing a function approximator would provide;
    // 1.0 leaves the maximum-likelihood fit untouched.
    double policy_temperature = 1.0;
    // Rescale each posterior row's gradient by its batch weight so the
    // per-trajectory assignment signal does not vanish with dataset size.
    bool posterior_row_normalize = true;
    int exhaustive_negatives_max = 64;
    int log_every = 50;

    void validate() const {
        if (beta < 0.0) throw InvalidParameterError("config: beta must be >= 0");
        if (learning_rate <= 0.0)
            throw InvalidParameterError("config: learning_rate must be > 0");
        if (batch_size < 0)
            throw InvalidParameterError("config: batch_size must be >= 0");
        if (negatives < 1)
            throw InvalidParameterError("config: negatives must be >= 1");
        if (steps < 0) throw InvalidParameterError("config: steps must be >= 0");
        if (latent_atoms < 1)
            throw InvalidParameterError("config: latent_atoms must be >= 1");
        if (beta_warmup < 0)
            throw InvalidParameterError("config: beta_warmup must be >= 0");
        if (policy_temperature <= 0.0)
            throw InvalidParameterError(
                "config: policy_temperature must be > 0");
    }
};

struct LossReport {
    long step = 0;
    double nll = 0.0;
    double contrastive = 0.0;
    double value_mse = 0.0;
    double prior_kl = 0.0;
    double total = 0.0;
};

// Batch entry after grouping identical trajectories; weights sum to 1.
struct WeightedTau {
    const Trajectory* tau = nullptr;
    double weight = 0.0;
};

inline std::vector<WeightedTau> group_trajectories(
    const std::vector<const Trajectory*>& taus) {
    std::unordered_map<std::string, std::size_t> index;
    std::vector<WeightedTau> out;
    const double w = 1.0 / double(taus.size());
    for (const Trajectory* tau : taus) {
        auto [it, inserted] = index.emplace(tau->signature(), out.size());
        if (inserted)
            out.push_back({tau, w});
        else
            out[it->second].weight += w;
    }
    return out;
}

inline std::vector<WeightedTau> full_batch(const Dataset& data) {
    std::vector<const Trajectory*> taus;
    taus.reserve(data.size());
    for (const auto& tau : data.trajectories) taus.push_back(&tau);
    return group_trajectories(taus);
}

inline std::vector<WeightedTau> sample_batch(const Dataset& data,
                                             int batch_size, Rng& rng) {
    if (batch_size <= 0 || std::size_t(batch_size) >= data.size())
        return full_batch(data);
    std::vector<const Trajectory*> taus;
    taus.reserve(batch_size);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (int i = 0; i < batch_size; ++i)
        taus.push_back(&data.trajectories[pick(rng)]);
    return group_trajectories(taus);
}

// Shared per-tape caches so repeated (state, z) and (z, s, a) lookups reuse
// graph nodes instead of rebuilding softmax/log-sum-exp subtrees.
struct TabularGraphCache {
    ad::Tape* tape = nullptr;
    const TabularBundle* bundle = nullptr;
    std::unordered_map<std::int64_t, std::vector<ad::Var>> log_policy;
    std::unordered_map<std::int64_t, ad::Var> log_denominator;

    TabularGraphCache(ad::Tape& t, const TabularBundle& b)
        : tape(&t), bundle(&b) {}

    // log pi(.|s,z) over all actions.
    const std::vector<ad::Var>& policy_logprobs(int s, int z) {
        std::int64_t key = std::int64_t(s) * bundle->num_z + z;
        auto it = log_policy.find(key);
        if (it != log_policy.end()) return it->second;
        std::vector<ad::Var> logits;
        logits.reserve(bundle->num_actions);
        for (int a = 0; a < bundle->num_actions; ++a)
            logits.push_back(ad::param(
                *tape, const_cast<ad::ParamStore&>(bundle->policy_logits),
                bundle->pol_index(s, z, a)));
        return log_policy.emplace(key, ad::log_softmax(logits)).first->second;
    }

    ad::Var energy_at(double r, int sp, int z, int s, int a) {
        return ad::param(*tape, const_cast<ad::ParamStore&>(bundle->energy),
                         bundle->en_index(bundle->reward_index(r), sp, z, s, a));
    }

    // log E_rho[exp f(r~, s~', z, ., s, a)] over the full support of rho.
    ad::Var exhaustive_log_denominator(const NegativeSampler& rho, int z, int s,
                                       int a) {
        std::int64_t key =
            (std::int64_t(z) * bundle->num_states + s) * bundle->num_actions + a;
        auto it = log_denominator.find(key);
        if (it != log_denominator.end()) return it->second;
        std::vector<ad::Var> fs;
        fs.reserve(rho.size());
        for (const auto& [r, sp] : rho.support)
            fs.push_back(energy_at(r, sp, z, s, a));
        ad::Var v = ad::log_weighted_sum_exp(fs, rho.weights);
        return log_denominator.emplace(key, v).first->second;
    }
};

// One positive step tuple for the contrastive bound.
struct StepTuple {
    int state = 0;
    int action = 0;
    double reward = 0.0;
    int next_state = kNoNextState;
};

inline StepTuple step_tuple(const Trajectory& tau, int t) {
    const int H = tau.horizon();
    return {tau.states[t], tau.actions[t], tau.rewards[t],
            t < H ? tau.states[t + 1] : kNoNextState};
}

// f at the positive pair minus a log-expectation of exp f over negatives
// from rho. Exhaustive when rho's support is small enough; otherwise
// log-mean-exp over sampled negatives (positive appended when configured).
inline ad::Var contrastive_term(TabularGraphCache& cache,
                                const NegativeSampler& rho, int z,
                                const StepTuple& step, const TrainConfig& cfg,
                                Rng& rng) {
    ad::Var pos = cache.energy_at(step.reward, step.next_state, z, step.state,
                                  step.action);
    if (!std::isfinite(pos.val()))
        throw NumericError("contrastive_term: non-finite energy output");
    if (int(rho.size()) <= cfg.exhaustive_negatives_max) {
        return pos - cache.exhaustive_log_denominator(rho, z, step.state,
                                                      step.action);
    }
    std::vector<ad::Var> fs;
    fs.reserve(cfg.negatives + 1);
    for (int i = 0; i < cfg.negatives; ++i) {
        const auto& [r, sp] = rho.support[rho.sample(rng)];
        fs.push_back(cache.energy_at(r, sp, z, step.state, step.action));
    }
    if (cfg.include_positive) fs.push_back(pos);
    return pos - ad::log_mean_exp(fs);
}

// --- per-method loss graphs (tabular, exact expectation over z) ------------

// Return-conditioned NLL: mean over batch of summed per-step action NLL
// with z(tau) = R(tau).
inline ad::Var rcsl_loss(TabularGraphCache& cache,
                         const std::vector<WeightedTau>& batch) {
    const TabularBundle& b = *cache.bundle;
    ad::Tape& t = *cache.tape;
    ad::Var acc = ad::constant(t, 0.0);
    for (const auto& [tau, w] : batch) {
        int z = b.method == Method::PctBc ? 0 : b.return_bin(tau->ret());
        ad::Var nll = ad::constant(t, 0.0);
        for (std::size_t u = 0; u < tau->states.size(); ++u)
            nll = nll - cache.policy_logprobs(tau->states[u], z)[tau->actions[u]];
        acc = acc + w * nll;
    }
    return acc;
}

struct VaeLossResult {
    ad::Var total;
    double nll = 0.0;
    double prior_kl = 0.0;
};

// NLL under the posterior plus beta * KL(q || p); gradient reaches q
// through both terms (no stop-gradient, unlike the aux objective).
inline VaeLossResult vae_loss(TabularGraphCache& cache,
                              const std::vector<WeightedTau>& batch,
                              double beta) {
    const TabularBundle& b = *cache.bundle;
    ad::Tape& t = *cache.tape;
    LatentDistribution prior = prior_encode(b, t);
    ad::Var nll_acc = ad::constant(t, 0.0);
    ad::Var kl_acc = ad::constant(t, 0.0);
    for (const auto& [tau, w] : batch) {
        LatentDistribution post = posterior_encode(b, t, *tau);
        ad::Var tau_nll = ad::constant(t, 0.0);
        for (int z = 0; z < b.num_z; ++z) {
            ad::Var nll = ad::constant(t, 0.0);
            for (std::size_t u = 0; u < tau->states.size(); ++u)
                nll = nll -
                      cache.policy_logprobs(tau->states[u], z)[tau->actions[u]];
            tau_nll = tau_nll + post.probs[z] * nll;
        }
        nll_acc = nll_acc + w * tau_nll;
        kl_acc = kl_acc + w * kl(post, prior);
    }
    VaeLossResult out{nll_acc + beta * kl_acc, nll_acc.val(), kl_acc.val()};
    return out;
}

struct DocLossResult {
    ad::Var policy_side;  // NLL + beta * contrastive; minimized over pi, q
    ad::Var energy_side;  // contrastive with q detached; maximized over f
    double nll = 0.0;
    double contrastive = 0.0;
};

inline DocLossResult doc_loss(TabularGraphCache& cache,
                              const std::vector<WeightedTau>& batch,
                              const NegativeSampler& rho,
                              const TrainConfig& cfg, Rng& rng) {
    const TabularBundle& b = *cache.bundle;
    ad::Tape& t = *cache.tape;
    ad::Var policy_acc = ad::constant(t, 0.0);
    ad::Var energy_acc = ad::constant(t, 0.0);
    double nll_part = 0.0;
    double con_part = 0.0;
    for (const auto& [tau, w] : batch) {
        LatentDistribution post = posterior_encode(b, t, *tau);
        for (int z = 0; z < b.num_z; ++z) {
            ad::Var nll = ad::constant(t, 0.0);
            ad::Var con = ad::constant(t, 0.0);
            for (std::size_t u = 0; u < tau->states.size(); ++u) {
                nll = nll -
                      cache.policy_logprobs(tau->states[u], z)[tau->actions[u]];
                con = con + contrastive_term(cache, rho, z,
                                             step_tuple(*tau, int(u)), cfg, rng);
            }
            policy_acc =
                policy_acc + (w * post.probs[z]) * (nll + cfg.beta * con);
            energy_acc = energy_acc + (w * ad::detach(post.probs[z])) * con;
            nll_part += w * post.probs[z].val() * nll.val();
            con_part += w * post.probs[z].val() * con.val();
        }
    }
    return {policy_acc, energy_acc, nll_part, con_part};
}

struct AuxLossResult {
    ad::Var total;
    double value_mse = 0.0;
    double prior_kl = 0.0;
};

// Value regression plus prior KL with a stop-gradient on q: no gradient
// from this loss reaches the posterior's parameters.
inline AuxLossResult aux_loss(TabularGraphCache& cache,
                              const std::vector<WeightedTau>& batch,
                              bool include_prior_kl = true) {
    const TabularBundle& b = *cache.bundle;
    ad::Tape& t = *cache.tape;
    LatentDistribution prior = prior_encode(b, t);
    ad::Var val_acc = ad::constant(t, 0.0);
    ad::Var kl_acc = ad::constant(t, 0.0);
    for (const auto& [tau, w] : batch) {
        LatentDistribution post = stopgrad(posterior_encode(b, t, *tau));
        const double ret = tau->ret();
        ad::Var vterm = ad::constant(t, 0.0);
        for (int z = 0; z < b.num_z; ++z) {
            ad::Var v = ad::param(t, const_cast<ad::ParamStore&>(b.value), z);
            vterm = vterm + post.probs[z] * ad::sqr(v - ret);
        }
        val_acc = val_acc + w * vterm;
        if (include_prior_kl) kl_acc = kl_acc + w * kl(post, prior);
    }
    AuxLossResult out{val_acc + kl_acc, val_acc.val(), kl_acc.val()};
    return out;
}

// --- training driver (Algorithm-2 style alternating updates) ---------------

struct TrainResult {
    TabularBundle bundle;
    std::vector<LossReport> log;
};

namespace detail {

inline Dataset percentile_filter(const Dataset& data, double percentile) {
    std::vector<double> returns;
    returns.reserve(data.size());
    for (const auto& tau : data.trajectories) returns.push_back(tau.ret());
    std::sort(returns.begin(), returns.end());
    double frac = std::clamp(percentile / 100.0, 0.0, 1.0);
    std::size_t cut = std::size_t(double(returns.size()) * (1.0 - frac));
    if (cut >= returns.size()) cut = returns.size() - 1;
    const double threshold = returns[cut];
    Dataset out;
    out.env_fingerprint = data.env_fingerprint;
    out.behavior_meta = data.behavior_meta + ";pct=" + std::to_string(percentile);
    for (const auto& tau : data.trajectories)
        if (tau.ret() >= threshold) out.trajectories.push_back(tau);
    return out;
}

inline void normalize_posterior_rows(TabularBundle& bundle,
                                     const std::vector<WeightedTau>& batch) {
    for (const auto& [tau, w] : batch) {
        if (w <= 0.0) continue;
        const int row = bundle.row_of(*tau);
        for (int z = 0; z < bundle.num_z; ++z)
            bundle.q_logits.grads[std::size_t(row) * bundle.num_z + z] /= w;
    }
}

}  // namespace detail

inline TrainResult train(const Dataset& dataset, const Environment& env,
                         const TrainConfig& cfg) {
    cfg.validate();
    const Dataset* data = &dataset;
    Dataset filtered;
    if (cfg.method == Method::PctBc) {
        filtered = detail::percentile_filter(dataset, cfg.percentile);
        data = &filtered;
    }
    TabularBundle bundle =
        make_tabular_bundle(cfg.method, *data, env.num_states, env.num_actions,
                            cfg.latent_atoms, cfg.seed);
    NegativeSampler rho;
    if (cfg.method == Method::Doc) rho = build_negative_sampler(*data);

    Rng rng = make_rng(cfg.seed, 7001);
    std::vector<LossReport> log;
    ad::Tape tape;
    std::vector<WeightedTau> cached_full;
    if (cfg.batch_size <= 0 || std::size_t(cfg.batch_size) >= data->size())
        cached_full = full_batch(*data);

    auto stores = [&bundle]() {
        return std::vector<ad::ParamStore*>{&bundle.q_logits,
                                            &bundle.policy_logits,
                                            &bundle.prior_logits, &bundle.value,
                                            &bundle.energy};
    }();

    for (long step = 0; step < cfg.steps; ++step) {
        std::vector<WeightedTau> sampled;
        const std::vector<WeightedTau>* batch_ptr = &cached_full;
        if (cached_full.empty()) {
            sampled = sample_batch(*data, cfg.batch_size, rng);
            batch_ptr = &sampled;
        }

        LossReport rep;
        rep.step = step;
        for (auto* s : stores) s->zero_grad();
        tape.clear();
        TabularGraphCache cache(tape, bundle);

        TrainConfig step_cfg = cfg;
        if (cfg.beta_warmup > 0)
            step_cfg.beta = cfg.beta *
                            std::min(1.0, double(step) / double(cfg.beta_warmup));

        switch (cfg.method) {
            case Method::Doc: {
                // Optional extra energy-ascent steps before the joint update.
                for (int k = 1; k < cfg.energy_inner_steps; ++k) {
                    ad::Tape inner;
                    TabularGraphCache icache(inner, bundle);
                    auto iloss = doc_loss(icache, *batch_ptr, rho, step_cfg, rng);
                    bundle.energy.zero_grad();
                    inner.backward(iloss.energy_side.idx);
                    bundle.energy.apply_sgd(cfg.learning_rate, /*ascend=*/true);
                }
                auto loss = doc_loss(cache, *batch_ptr, rho, step_cfg, rng);
                auto aux = aux_loss(cache, *batch_ptr);
                rep.nll = loss.nll;
                rep.contrastive = loss.contrastive;
                rep.value_mse = aux.value_mse;
                rep.prior_kl = aux.prior_kl;
                rep.total = rep.nll + step_cfg.beta * rep.contrastive +
                            rep.value_mse + rep.prior_kl;
                tape.backward(loss.policy_side.idx);
                bundle.energy.zero_grad();
                tape.backward(loss.energy_side.idx);
                tape.backward(aux.total.idx);
                if (cfg.posterior_row_normalize)
                    detail::normalize_posterior_rows(bundle, *batch_ptr);
                bundle.policy_logits.apply_sgd(cfg.learning_rate);
                bundle.q_logits.apply_sgd(cfg.learning_rate);
                bundle.value.apply_sgd(cfg.learning_rate);
                bundle.prior_logits.apply_sgd(cfg.learning_rate);
                bundle.energy.apply_sgd(cfg.learning_rate, /*ascend=*/true);
                break;
            }
            case Method::Vae: {
                auto loss = vae_loss(cache, *batch_ptr, step_cfg.beta);
                // Train V for Algorithm-1 comparability; weights detached.
                auto aux = aux_loss(cache, *batch_ptr, /*include_prior_kl=*/false);
                rep.nll = loss.nll;
                rep.prior_kl = loss.prior_kl;
                rep.value_mse = aux.value_mse;
                rep.total = rep.nll + step_cfg.beta * rep.prior_kl + rep.value_mse;
                tape.backward(loss.total.idx);
                tape.backward(aux.total.idx);
                if (cfg.posterior_row_normalize)
                    detail::normalize_posterior_rows(bundle, *batch_ptr);
                bundle.policy_logits.apply_sgd(cfg.learning_rate);
                bundle.q_logits.apply_sgd(cfg.learning_rate);
                bundle.prior_logits.apply_sgd(cfg.learning_rate);
                bundle.value.apply_sgd(cfg.learning_rate);
                break;
            }
            case Method::Rcsl:
            case Method::PctBc: {
                ad::Var loss = rcsl_loss(cache, *batch_ptr);
                rep.nll = loss.val();
                rep.total = rep.nll;
                tape.backward(loss.idx);
                bundle.policy_logits.apply_sgd(cfg.learning_rate);
                break;
            }
        }

        if (!std::isfinite(rep.total))
            throw DivergenceError("train: non-finite loss at step " +
                                      std::to_string(step),
                                  step);
        if (cfg.log_every > 0 &&
            (step % cfg.log_every == 0 || step == cfg.steps - 1))
            log.push_back(rep);
    }
    if (cfg.policy_temperature != 1.0)
        for (double& v : bundle.policy_logits.values)
            v /= cfg.policy_temperature;
    return {std::move(bundle), std::move(log)};
}

inline void write_training_log_csv(const std::vector<LossReport>& log,
                                   std::ostream& os) {
    os << "step,nll,contrastive,value_mse,prior_kl,total\n";
    for (const auto& r : log)
        os << r.step << "," << r.nll << "," << r.contrastive << ","
           << r.value_mse << "," << r.prior_kl << "," << r.total << "\n";
}

}  // namespace doc
