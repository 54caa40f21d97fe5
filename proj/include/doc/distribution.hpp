#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "doc/errors.hpp"
#include "doc/rng.hpp"

namespace doc {

// Finite distribution over values of T with explicit atoms and weights.
template <typename T>
struct FiniteDist {
    std::vector<T> atoms;
    std::vector<double> probs;

    FiniteDist() = default;
    FiniteDist(std::vector<T> a, std::vector<double> p)
        : atoms(std::move(a)), probs(std::move(p)) {
        if (atoms.size() != probs.size())
            throw ShapeError("FiniteDist: atoms/probs size mismatch");
    }

    static FiniteDist point(T value) { return FiniteDist({value}, {1.0}); }

    std::size_t size() const { return atoms.size(); }

    double total_mass() const {
        double s = 0.0;
        for (double p : probs) s += p;
        return s;
    }

    bool normalized(double tol = 1e-12) const {
        for (double p : probs)
            if (p < -tol) return false;
        return std::abs(total_mass() - 1.0) <= tol;
    }

    const T& sample(Rng& rng) const {
        double u = uniform01(rng);
        double acc = 0.0;
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            acc += probs[i];
            if (u < acc) return atoms[i];
        }
        return atoms.back();
    }
};

// Samples an index from an explicit probability vector.
inline int sample_index(const std::vector<double>& probs, Rng& rng) {
    double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace doc
