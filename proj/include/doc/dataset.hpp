#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doc/environment.hpp"
#include "doc/errors.hpp"
#include "doc/rng.hpp"

namespace doc {

inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

inline std::string env_fingerprint(const Environment& env) {
    return fnv1a_hex(env.config_string());
}

// Sentinel next-state id used for the terminal step of an episode, where
// no transition is observed.
inline constexpr int kNoNextState = -1;

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::string env_fingerprint;
    std::string behavior_meta;

    std::size_t size() const { return trajectories.size(); }
    int horizon() const {
        return trajectories.empty() ? -1 : trajectories.front().horizon();
    }
};

// Empirical joint marginal over (reward, next_state) pairs across all
// timesteps of all trajectories; the contrastive negative distribution.
struct NegativeSampler {
    std::vector<std::pair<double, int>> support;  // (reward, next state)
    std::vector<double> weights;

    std::size_t size() const { return support.size(); }

    int sample(Rng& rng) const { return sample_index(weights, rng); }
};

inline NegativeSampler build_negative_sampler(const Dataset& d) {
    if (d.trajectories.empty())
        throw InvalidParameterError("build_negative_sampler: empty dataset");
    std::map<std::pair<double, int>, double> counts;
    double total = 0.0;
    for (const auto& tau : d.trajectories) {
        const int H = tau.horizon();
        for (int t = 0; t <= H; ++t) {
            int next = (t < H) ? tau.states[t + 1] : kNoNextState;
            counts[{tau.rewards[t], next}] += 1.0;
            total += 1.0;
        }
    }
    NegativeSampler ns;
    for (const auto& [pair, c] : counts) {
        ns.support.push_back(pair);
        ns.weights.push_back(c / total);
    }
    return ns;
}

inline Dataset collect(const Environment& env, const PolicyFn& behavior,
                       std::size_t n, std::uint64_t seed,
                       const std::string& behavior_desc = "") {
    if (n < 1) throw InvalidParameterError("collect: n must be >= 1");
    Dataset d;
    d.env_fingerprint = env_fingerprint(env);
    std::ostringstream meta;
    meta << "behavior=" << (behavior_desc.empty() ? "unnamed" : behavior_desc)
         << ";seed=" << seed << ";n=" << n;
    d.behavior_meta = meta.str();
    d.trajectories.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, i);
        d.trajectories.push_back(sample_episode(env, behavior, rng));
    }
    return d;
}

inline Dataset literal_dataset(std::vector<Trajectory> trajectories) {
    if (trajectories.empty())
        throw InvalidParameterError("literal_dataset: empty trajectory list");
    const int H = trajectories.front().horizon();
    for (const auto& tau : trajectories) {
        if (tau.horizon() != H)
            throw ShapeError("literal_dataset: mixed horizons");
        if (tau.states.size() != tau.actions.size() ||
            tau.states.size() != tau.rewards.size())
            throw ShapeError("literal_dataset: ragged trajectory");
    }
    Dataset d;
    d.trajectories = std::move(trajectories);
    d.behavior_meta = "literal";
    return d;
}

// --- persistence: one JSON record per line --------------------------------

inline void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_dataset: cannot open " + path);
    for (const auto& tau : d.trajectories) {
        nlohmann::json rec;
        rec["states"] = tau.states;
        rec["actions"] = tau.actions;
        rec["rewards"] = tau.rewards;
        out << rec.dump() << "\n";
    }
}

inline void save_dataset_meta(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_dataset_meta: cannot open " + path);
    nlohmann::json meta;
    meta["env_fingerprint"] = d.env_fingerprint;
    meta["behavior_meta"] = d.behavior_meta;
    meta["n"] = d.trajectories.size();
    out << meta.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_dataset: cannot open " + path);
    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("load_dataset: line " + std::to_string(lineno) +
                             ": " + e.what());
        }
        Trajectory tau;
        try {
            tau.states = rec.at("states").get<std::vector<int>>();
            tau.actions = rec.at("actions").get<std::vector<int>>();
            tau.rewards = rec.at("rewards").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("load_dataset: line " + std::to_string(lineno) +
                             ": " + e.what());
        }
        if (tau.states.size() != tau.actions.size() ||
            tau.states.size() != tau.rewards.size())
            throw ParseError("load_dataset: line " + std::to_string(lineno) +
                             ": mismatched list lengths");
        d.trajectories.push_back(std::move(tau));
    }
    if (d.trajectories.empty())
        throw ParseError("load_dataset: empty dataset file " + path);
    const int H = d.trajectories.front().horizon();
    for (const auto& tau : d.trajectories)
        if (tau.horizon() != H)
            throw ParseError("load_dataset: mixed horizons in " + path);
    return d;
}

}  // namespace doc
