#pragma once

#include <cmath>
#include <vector>

#include "doc/autodiff.hpp"
#include "doc/distribution.hpp"
#include "doc/errors.hpp"
#include "doc/rng.hpp"

namespace doc {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kLogProbFloor = 1e-12;

// Posterior/prior distribution over the latent z: categorical over m atoms
// or diagonal Gaussian of dimension d. Parameters live on a tape so that
// gradients flow back to whatever produced them.
struct LatentDistribution {
    enum class Kind { Categorical, Gaussian };
    Kind kind = Kind::Categorical;

    std::vector<ad::Var> probs;      // categorical, normalized
    std::vector<ad::Var> mu;         // gaussian
    std::vector<ad::Var> log_sigma;  // gaussian, pre-clamped to [-5, 2]

    std::size_t dim() const {
        return kind == Kind::Categorical ? probs.size() : mu.size();
    }
};

inline ad::Var clamp_var(ad::Var x, double lo, double hi) {
    if (x.val() < lo) return ad::constant(*x.tape, lo);
    if (x.val() > hi) return ad::constant(*x.tape, hi);
    return x;
}

inline LatentDistribution categorical_latent(std::span<const ad::Var> logits) {
    LatentDistribution d;
    d.kind = LatentDistribution::Kind::Categorical;
    d.probs = ad::softmax(logits);
    return d;
}

inline LatentDistribution gaussian_latent(std::vector<ad::Var> mu,
                                          std::vector<ad::Var> log_sigma) {
    if (mu.size() != log_sigma.size())
        throw ShapeError("gaussian_latent: mu/log_sigma size mismatch");
    LatentDistribution d;
    d.kind = LatentDistribution::Kind::Gaussian;
    d.mu = std::move(mu);
    for (auto& ls : log_sigma) d.log_sigma.push_back(clamp_var(ls, -5.0, 2.0));
    return d;
}

// Sampled latent with a differentiable path to the distribution parameters.
// Gaussian: mu + sigma * eps. Categorical: straight-through one-hot over a
// temperature-relaxed softmax; atom is the sampled index.
struct LatentSample {
    std::vector<ad::Var> z;
    int atom = -1;  // categorical only
};

inline LatentSample sample_latent(const LatentDistribution& dist, Rng& rng,
                                  double st_temperature = 1.0) {
    LatentSample out;
    if (dist.kind == LatentDistribution::Kind::Gaussian) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i = 0; i < dist.mu.size(); ++i) {
            double eps = normal(rng);
            ad::Var sigma = ad::exp(dist.log_sigma[i]) + kSigmaFloor;
            out.z.push_back(dist.mu[i] + sigma * eps);
        }
        return out;
    }
    std::vector<double> p;
    p.reserve(dist.probs.size());
    for (const auto& v : dist.probs) p.push_back(v.val());
    out.atom = sample_index(p, rng);
    ad::Tape& t = *dist.probs[0].tape;
    // Relaxation: renormalize probs^(1/T); at T=1 this is the posterior itself.
    std::vector<ad::Var> logits;
    logits.reserve(dist.probs.size());
    for (const auto& v : dist.probs)
        logits.push_back(ad::log(v + kLogProbFloor) * (1.0 / st_temperature));
    auto relaxed = ad::softmax(logits);
    for (std::size_t i = 0; i < relaxed.size(); ++i) {
        double hard = (static_cast<int>(i) == out.atom) ? 1.0 : 0.0;
        out.z.push_back(relaxed[i] + ad::constant(t, hard - relaxed[i].val()));
    }
    return out;
}

// Closed-form KL divergence between latent distributions of the same kind.
inline ad::Var kl(const LatentDistribution& a, const LatentDistribution& b) {
    if (a.kind != b.kind || a.dim() != b.dim())
        throw TypeError("kl: distribution kind/dimension mismatch");
    if (a.kind == LatentDistribution::Kind::Categorical) {
        ad::Tape& t = *a.probs[0].tape;
        ad::Var acc = ad::constant(t, 0.0);
        for (std::size_t i = 0; i < a.probs.size(); ++i) {
            ad::Var pa = a.probs[i] + kLogProbFloor;
            ad::Var pb = b.probs[i] + kLogProbFloor;
            acc = acc + a.probs[i] * (ad::log(pa) - ad::log(pb));
        }
        return acc;
    }
    ad::Tape& t = *a.mu[0].tape;
    ad::Var acc = ad::constant(t, 0.0);
    for (std::size_t i = 0; i < a.mu.size(); ++i) {
        ad::Var sa = ad::exp(a.log_sigma[i]) + kSigmaFloor;
        ad::Var sb = ad::exp(b.log_sigma[i]) + kSigmaFloor;
        ad::Var d = a.mu[i] - b.mu[i];
        acc = acc + ad::log(sb) - ad::log(sa) +
              (ad::sqr(sa) + ad::sqr(d)) / (2.0 * ad::sqr(sb)) - 0.5;
    }
    return acc;
}

// Detached copy: same values, no gradient path.
inline LatentDistribution stopgrad(const LatentDistribution& d) {
    LatentDistribution out;
    out.kind = d.kind;
    for (const auto& v : d.probs) out.probs.push_back(ad::detach(v));
    for (const auto& v : d.mu) out.mu.push_back(ad::detach(v));
    for (const auto& v : d.log_sigma) out.log_sigma.push_back(ad::detach(v));
    return out;
}

}  // namespace doc
