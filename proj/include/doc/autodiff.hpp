#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "doc/errors.hpp"

namespace doc::ad {

// Named flat parameter array with a matching gradient accumulator.
struct ParamStore {
    std::string name;
    std::vector<double> values;
    std::vector<double> grads;

    ParamStore() = default;
    explicit ParamStore(std::string n, std::size_t size = 0, double init = 0.0)
        : name(std::move(n)), values(size, init), grads(size, 0.0) {}

    std::size_t size() const { return values.size(); }

    void resize(std::size_t n, double init = 0.0) {
        values.assign(n, init);
        grads.assign(n, 0.0);
    }

    void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

    double grad_norm() const {
        double s = 0.0;
        for (double g : grads) s += g * g;
        return std::sqrt(s);
    }

    // v -= lr * g (descent) or v += lr * g (ascent).
    void apply_sgd(double lr, bool ascend = false) {
        const double sign = ascend ? 1.0 : -1.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] += sign * lr * grads[i];
    }
};

enum class Op : std::uint8_t {
    Const,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Tanh,
    Relu,
    Sqr,
};

// Reverse-mode tape over scalar nodes. One tape per loss evaluation;
// backward() accumulates into the referenced ParamStores.
class Tape {
  public:
    struct Node {
        double val;
        double grad;
        Op op;
        std::int32_t a;
        std::int32_t b;
        ParamStore* store;
        std::int32_t pidx;
    };

    std::vector<Node> nodes;

    void clear() { nodes.clear(); }
    std::size_t size() const { return nodes.size(); }

    std::int32_t push(double val, Op op, std::int32_t a = -1,
                      std::int32_t b = -1, ParamStore* store = nullptr,
                      std::int32_t pidx = -1) {
        nodes.push_back({val, 0.0, op, a, b, store, pidx});
        return static_cast<std::int32_t>(nodes.size()) - 1;
    }

    void backward(std::int32_t root) {
        if (root < 0 || root >= static_cast<std::int32_t>(nodes.size()))
            throw ShapeError("backward: invalid root node");
        for (auto& n : nodes) n.grad = 0.0;
        nodes[root].grad = 1.0;
        for (std::int32_t i = root; i >= 0; --i) {
            const Node& n = nodes[i];
            const double g = n.grad;
            if (g == 0.0 && n.op != Op::Param) continue;
            switch (n.op) {
                case Op::Const:
                    break;
                case Op::Param:
                    if (g != 0.0) n.store->grads[n.pidx] += g;
                    break;
                case Op::Add:
                    nodes[n.a].grad += g;
                    nodes[n.b].grad += g;
                    break;
                case Op::Sub:
                    nodes[n.a].grad += g;
                    nodes[n.b].grad -= g;
                    break;
                case Op::Mul:
                    nodes[n.a].grad += g * nodes[n.b].val;
                    nodes[n.b].grad += g * nodes[n.a].val;
                    break;
                case Op::Div:
                    nodes[n.a].grad += g / nodes[n.b].val;
                    nodes[n.b].grad -=
                        g * nodes[n.a].val / (nodes[n.b].val * nodes[n.b].val);
                    break;
                case Op::Neg:
                    nodes[n.a].grad -= g;
                    break;
                case Op::Exp:
                    nodes[n.a].grad += g * n.val;
                    break;
                case Op::Log:
                    nodes[n.a].grad += g / nodes[n.a].val;
                    break;
                case Op::Tanh:
                    nodes[n.a].grad += g * (1.0 - n.val * n.val);
                    break;
                case Op::Relu:
                    if (nodes[n.a].val > 0.0) nodes[n.a].grad += g;
                    break;
                case Op::Sqr:
                    nodes[n.a].grad += g * 2.0 * nodes[n.a].val;
                    break;
            }
        }
    }
};

// Scalar handle into a tape.
struct Var {
    Tape* tape = nullptr;
    std::int32_t idx = -1;

    double val() const { return tape->nodes[idx].val; }
    double grad() const { return tape->nodes[idx].grad; }
};

inline Var constant(Tape& t, double v) { return {&t, t.push(v, Op::Const)}; }

inline Var param(Tape& t, ParamStore& store, std::size_t i) {
    return {&t, t.push(store.values[i], Op::Param, -1, -1, &store,
                       static_cast<std::int32_t>(i))};
}

// Value copy with no backprop edge.
inline Var detach(Var x) { return constant(*x.tape, x.val()); }

inline Var operator+(Var a, Var b) {
    return {a.tape, a.tape->push(a.val() + b.val(), Op::Add, a.idx, b.idx)};
}
inline Var operator-(Var a, Var b) {
    return {a.tape, a.tape->push(a.val() - b.val(), Op::Sub, a.idx, b.idx)};
}
inline Var operator*(Var a, Var b) {
    return {a.tape, a.tape->push(a.val() * b.val(), Op::Mul, a.idx, b.idx)};
}
inline Var operator/(Var a, Var b) {
    return {a.tape, a.tape->push(a.val() / b.val(), Op::Div, a.idx, b.idx)};
}
inline Var operator-(Var a) {
    return {a.tape, a.tape->push(-a.val(), Op::Neg, a.idx)};
}
inline Var operator+(Var a, double b) { return a + constant(*a.tape, b); }
inline Var operator+(double a, Var b) { return constant(*b.tape, a) + b; }
inline Var operator-(Var a, double b) { return a - constant(*a.tape, b); }
inline Var operator-(double a, Var b) { return constant(*b.tape, a) - b; }
inline Var operator*(Var a, double b) { return a * constant(*a.tape, b); }
inline Var operator*(double a, Var b) { return constant(*b.tape, a) * b; }
inline Var operator/(Var a, double b) { return a / constant(*a.tape, b); }
inline Var operator/(double a, Var b) { return constant(*b.tape, a) / b; }

inline Var exp(Var a) {
    return {a.tape, a.tape->push(std::exp(a.val()), Op::Exp, a.idx)};
}
inline Var log(Var a) {
    return {a.tape, a.tape->push(std::log(a.val()), Op::Log, a.idx)};
}
inline Var tanh(Var a) {
    return {a.tape, a.tape->push(std::tanh(a.val()), Op::Tanh, a.idx)};
}
inline Var relu(Var a) {
    return {a.tape, a.tape->push(a.val() > 0.0 ? a.val() : 0.0, Op::Relu, a.idx)};
}
inline Var sqr(Var a) {
    return {a.tape, a.tape->push(a.val() * a.val(), Op::Sqr, a.idx)};
}

// Numerically stable log(sum_i w_i * exp(x_i)); weights are plain doubles.
inline Var log_weighted_sum_exp(std::span<const Var> xs,
                                std::span<const double> ws) {
    if (xs.empty()) throw ShapeError("log_weighted_sum_exp: empty input");
    double m = xs[0].val();
    for (const Var& x : xs) m = std::max(m, x.val());
    Tape& t = *xs[0].tape;
    Var acc = constant(t, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i)
        acc = acc + ws[i] * exp(xs[i] - m);
    return log(acc) + m;
}

inline Var log_mean_exp(std::span<const Var> xs) {
    std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
    return log_weighted_sum_exp(xs, w);
}

// softmax over a logits vector; returns probabilities as Vars.
inline std::vector<Var> softmax(std::span<const Var> logits) {
    if (logits.empty()) throw ShapeError("softmax: empty logits");
    double m = logits[0].val();
    for (const Var& x : logits) m = std::max(m, x.val());
    Tape& t = *logits[0].tape;
    std::vector<Var> es;
    es.reserve(logits.size());
    Var denom = constant(t, 0.0);
    for (const Var& x : logits) {
        Var e = exp(x - m);
        es.push_back(e);
        denom = denom + e;
    }
    std::vector<Var> out;
    out.reserve(logits.size());
    for (const Var& e : es) out.push_back(e / denom);
    return out;
}

inline std::vector<Var> log_softmax(std::span<const Var> logits) {
    if (logits.empty()) throw ShapeError("log_softmax: empty logits");
    double m = logits[0].val();
    for (const Var& x : logits) m = std::max(m, x.val());
    Tape& t = *logits[0].tape;
    Var denom = constant(t, 0.0);
    for (const Var& x : logits) denom = denom + exp(x - m);
    Var lse = log(denom) + m;
    std::vector<Var> out;
    out.reserve(logits.size());
    for (const Var& x : logits) out.push_back(x - lse);
    return out;
}

}  // namespace doc::ad
