#pragma once

#include <cmath>
#include <vector>

#include "doc/objectives.hpp"

namespace doc {

// Neural-variant losses and trainer. Same objective structure as the
// tabular path but with Gaussian latents sampled by reparameterization
// and MLP-parameterized functions.

inline ad::Var mlp_policy_nll(const MlpBundle& b, ad::Tape& t,
                              const Trajectory& tau,
                              const std::vector<ad::Var>& z) {
    ad::Var acc = ad::constant(t, 0.0);
    Trajectory prefix;
    for (std::size_t u = 0; u < tau.states.size(); ++u) {
        std::vector<ad::Var> x = b.onehot(t, tau.states[u], b.num_states);
        auto hist = b.history_features(t, prefix, int(u));
        x.insert(x.end(), hist.begin(), hist.end());
        x.insert(x.end(), z.begin(), z.end());
        auto logits = b.policy.forward(t, x);
        acc = acc - ad::log_softmax(logits)[tau.actions[u]];
        prefix.states.push_back(tau.states[u]);
        prefix.actions.push_back(tau.actions[u]);
        prefix.rewards.push_back(tau.rewards[u]);
    }
    return acc;
}

inline ad::Var mlp_energy(const MlpBundle& b, ad::Tape& t, double r,
                          int next_state, const std::vector<ad::Var>& z,
                          int s, int a, const std::vector<ad::Var>& hist) {
    std::vector<ad::Var> x;
    x.push_back(ad::constant(t, r));
    for (int k = 0; k <= b.num_states; ++k) {
        int slot = next_state == kNoNextState ? b.num_states : next_state;
        x.push_back(ad::constant(t, k == slot ? 1.0 : 0.0));
    }
    x.insert(x.end(), z.begin(), z.end());
    auto sh = b.onehot(t, s, b.num_states);
    x.insert(x.end(), sh.begin(), sh.end());
    auto ah = b.onehot(t, a, b.num_actions);
    x.insert(x.end(), ah.begin(), ah.end());
    x.insert(x.end(), hist.begin(), hist.end());
    ad::Var f = b.energy.forward(t, x)[0];
    if (!std::isfinite(f.val()))
        throw NumericError("mlp_energy: non-finite energy output");
    return f;
}

inline ad::Var mlp_contrastive_sum(const MlpBundle& b, ad::Tape& t,
                                   const Trajectory& tau,
                                   const std::vector<ad::Var>& z,
                                   const NegativeSampler& rho,
                                   const TrainConfig& cfg, Rng& rng) {
    ad::Var acc = ad::constant(t, 0.0);
    Trajectory prefix;
    for (std::size_t u = 0; u < tau.states.size(); ++u) {
        auto st = step_tuple(tau, int(u));
        auto hist = b.history_features(t, prefix, int(u));
        ad::Var pos =
            mlp_energy(b, t, st.reward, st.next_state, z, st.state, st.action, hist);
        std::vector<ad::Var> fs;
        for (int i = 0; i < cfg.negatives; ++i) {
            const auto& [r, sp] = rho.support[rho.sample(rng)];
            fs.push_back(mlp_energy(b, t, r, sp, z, st.state, st.action, hist));
        }
        if (cfg.include_positive) fs.push_back(pos);
        acc = acc + pos - ad::log_mean_exp(fs);
        prefix.states.push_back(tau.states[u]);
        prefix.actions.push_back(tau.actions[u]);
        prefix.rewards.push_back(tau.rewards[u]);
    }
    return acc;
}

struct MlpTrainResult {
    MlpBundle bundle;
    std::vector<LossReport> log;
};

inline MlpTrainResult train_mlp(const Dataset& dataset, const Environment& env,
                                const TrainConfig& cfg, int latent_dim = 8) {
    cfg.validate();
    if (cfg.method == Method::PctBc)
        throw InvalidParameterError("train_mlp: pct-bc uses the tabular path");
    const int d = cfg.method == Method::Rcsl ? 1 : latent_dim;
    const int W = std::min(cfg.window, dataset.horizon() + 1);
    MlpBundle bundle(cfg.method, env.num_states, env.num_actions, d, W,
                     cfg.seed);
    NegativeSampler rho;
    if (cfg.method == Method::Doc) rho = build_negative_sampler(dataset);

    Rng rng = make_rng(cfg.seed, 7101);
    std::vector<LossReport> log;
    auto stores = bundle.all_stores();

    const int B = cfg.batch_size <= 0
                      ? int(std::min<std::size_t>(dataset.size(), 16))
                      : cfg.batch_size;
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

    for (long step = 0; step < cfg.steps; ++step) {
        for (auto* s : stores) s->zero_grad();
        ad::Tape t;
        LossReport rep;
        rep.step = step;
        ad::Var nll_acc = ad::constant(t, 0.0);
        ad::Var con_pol = ad::constant(t, 0.0);
        ad::Var con_energy = ad::constant(t, 0.0);
        ad::Var aux_acc = ad::constant(t, 0.0);
        ad::Var kl_acc = ad::constant(t, 0.0);
        const double w = 1.0 / B;
        for (int i = 0; i < B; ++i) {
            const Trajectory& tau = dataset.trajectories[pick(rng)];
            LatentDistribution prior = prior_encode(bundle, t, tau.states[0]);
            if (cfg.method == Method::Rcsl) {
                std::vector<ad::Var> z = {ad::constant(t, tau.ret())};
                nll_acc = nll_acc + w * mlp_policy_nll(bundle, t, tau, z);
                continue;
            }
            LatentDistribution post = posterior_encode(bundle, t, tau, W);
            LatentSample zs = sample_latent(post, rng, cfg.st_temperature);
            nll_acc = nll_acc + w * mlp_policy_nll(bundle, t, tau, zs.z);
            if (cfg.method == Method::Doc) {
                con_pol = con_pol + w * mlp_contrastive_sum(bundle, t, tau,
                                                            zs.z, rho, cfg, rng);
                std::vector<ad::Var> z_detached;
                for (const auto& v : zs.z) z_detached.push_back(ad::detach(v));
                con_energy =
                    con_energy + w * mlp_contrastive_sum(bundle, t, tau,
                                                         z_detached, rho, cfg,
                                                         rng);
                kl_acc = kl_acc + w * kl(stopgrad(post), prior);
            } else {  // vae: KL regularizes q directly
                kl_acc = kl_acc + w * kl(post, prior);
            }
            std::vector<ad::Var> z_detached;
            for (const auto& v : zs.z) z_detached.push_back(ad::detach(v));
            ad::Var v = bundle.value.forward(t, z_detached)[0];
            aux_acc = aux_acc + w * ad::sqr(v - tau.ret());
        }

        rep.nll = nll_acc.val();
        rep.contrastive = con_pol.val();
        rep.value_mse = aux_acc.val();
        rep.prior_kl = kl_acc.val();
        rep.total = rep.nll + cfg.beta * rep.contrastive + rep.value_mse +
                    rep.prior_kl;
        if (!std::isfinite(rep.total))
            throw DivergenceError("train_mlp: non-finite loss at step " +
                                      std::to_string(step),
                                  step);

        if (cfg.method == Method::Doc) {
            ad::Var policy_side = nll_acc + cfg.beta * con_pol;
            t.backward(policy_side.idx);
            for (auto* s : bundle.energy.stores()) s->zero_grad();
            t.backward(con_energy.idx);
            ad::Var aux_total = aux_acc + kl_acc;
            t.backward(aux_total.idx);
            for (auto* s : bundle.policy.stores()) s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.posterior.stores())
                s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.step_embed.stores())
                s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.value.stores()) s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.prior.stores()) s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.energy.stores())
                s->apply_sgd(cfg.learning_rate, /*ascend=*/true);
        } else if (cfg.method == Method::Vae) {
            ad::Var total = nll_acc + cfg.beta * kl_acc + aux_acc;
            t.backward(total.idx);
            for (auto* s : stores) s->apply_sgd(cfg.learning_rate);
        } else {
            t.backward(nll_acc.idx);
            for (auto* s : bundle.policy.stores()) s->apply_sgd(cfg.learning_rate);
            for (auto* s : bundle.step_embed.stores())
                s->apply_sgd(cfg.learning_rate);
        }

        if (cfg.log_every > 0 &&
            (step % cfg.log_every == 0 || step == cfg.steps - 1))
            log.push_back(rep);
    }
    return {std::move(bundle), std::move(log)};
}

}  // namespace doc
