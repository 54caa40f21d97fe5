#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "doc/dataset.hpp"
#include "doc/environment.hpp"
#include "doc/inference.hpp"
#include "doc/objectives.hpp"
#include "doc/planner.hpp"
#include "doc/svg_plot.hpp"

namespace doc {

// One train-and-evaluate cell of a sweep grid.
struct RunSpec {
    std::string env_kind = "bandit";  // bandit | toytree | frozenlake
    double p = 0.1;                   // bandit arm skew or lake slip parameter
    double epsilon = 0.0;             // lake behavior mixing
    std::string lake_layout = classic_lake_4x4();
    int lake_horizon = 20;
    double plan_p = 1.0 / 3.0;  // nominal slip used by the scripted planner
    std::size_t episodes = 1000;
    int n_rollouts = 2000;
    int K = 8;
    std::uint64_t seed = 0;
    TrainConfig train;
};

inline Environment make_env(const RunSpec& spec) {
    if (spec.env_kind == "bandit") return bandit_env(spec.p);
    if (spec.env_kind == "toytree") return toy_tree_env();
    if (spec.env_kind == "frozenlake")
        return frozen_lake_env(spec.lake_layout, spec.p, spec.lake_horizon);
    throw InvalidParameterError("make_env: unknown env kind " + spec.env_kind);
}

inline PolicyFn make_behavior(const RunSpec& spec) {
    if (spec.env_kind == "bandit") return bandit_behavior(spec.p);
    if (spec.env_kind == "toytree") return uniform_policy(make_env(spec));
    Environment plan =
        frozen_lake_env(spec.lake_layout, spec.plan_p, spec.lake_horizon);
    return epsilon_mixed_planner(plan, spec.epsilon);
}

inline std::string behavior_desc(const RunSpec& spec) {
    if (spec.env_kind == "bandit") return "bandit(p=" + std::to_string(spec.p) + ")";
    if (spec.env_kind == "toytree") return "uniform";
    return "eps_planner(eps=" + std::to_string(spec.epsilon) + ")";
}

// Hyperparameters that work across the desk-scale grids; callers override
// fields afterwards as needed.
inline TrainConfig default_train_config(const std::string& env_kind,
                                        Method method, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.seed = seed;
    if (env_kind == "frozenlake") {
        // 200 episodes leave the per-cell frequency fits noise-dominated;
        // temper every method's final policy toward its modal action, the
        // tabular stand-in for function-approximator smoothing.
        cfg.policy_temperature = 0.15;
        if (method == Method::Doc || method == Method::Vae) {
            // Two dense clusters beat many fragmented ones at 200 episodes.
            cfg.latent_atoms = 2;
            cfg.steps = 4000;
            cfg.learning_rate = 0.3;
            cfg.batch_size = 0;
        } else {
            cfg.latent_atoms = 8;
            cfg.steps = 1200;
            cfg.learning_rate = 0.2;
            cfg.batch_size = 64;
        }
    } else if (env_kind == "toytree") {
        // The return-100 bin holds ~1% of the mass; convergence needs many
        // full-batch steps.
        cfg.latent_atoms = 4;
        cfg.steps = 8000;
        cfg.learning_rate = 0.3;
        cfg.batch_size = 0;
    } else {
        cfg.latent_atoms = 4;
        cfg.steps = 1500;
        cfg.learning_rate = 0.3;
        cfg.batch_size = 0;
    }
    return cfg;
}

struct RunOutput {
    RunSpec spec;
    EvalReport report;
    std::vector<LossReport> log;
};

inline RunOutput run_one(const RunSpec& spec) {
    Environment env = make_env(spec);
    Dataset data = collect(env, make_behavior(spec), spec.episodes, spec.seed,
                           behavior_desc(spec));
    TrainResult trained = train(data, env, spec.train);
    RunOutput out;
    out.spec = spec;
    out.log = std::move(trained.log);
    out.report =
        evaluate(trained.bundle, env, spec.n_rollouts, spec.K, spec.seed);
    out.report.param_p = spec.p;
    out.report.epsilon = spec.epsilon;
    return out;
}

// Fixed-size worker pool over the spec list; output order matches input.
inline std::vector<RunOutput> run_many(const std::vector<RunSpec>& specs,
                                       int jobs) {
    if (jobs < 1) jobs = 1;
    std::vector<RunOutput> out(specs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                out[i] = run_one(specs[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min<int>(jobs, int(specs.size())); ++j)
        pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// --- canned grids -----------------------------------------------------------

inline std::vector<RunSpec> bandit_sweep_specs(
    const std::vector<std::uint64_t>& seeds,
    const std::vector<Method>& methods = {Method::Doc, Method::Rcsl},
    const std::vector<double>& ps = {0.1, 0.2, 0.3, 0.4}) {
    std::vector<RunSpec> specs;
    for (double p : ps)
        for (Method m : methods)
            for (std::uint64_t seed : seeds) {
                RunSpec spec;
                spec.env_kind = "bandit";
                spec.p = p;
                spec.seed = seed;
                spec.train = default_train_config("bandit", m, seed);
                specs.push_back(spec);
            }
    return specs;
}

inline std::vector<RunSpec> toytree_sweep_specs(
    const std::vector<std::uint64_t>& seeds,
    const std::vector<Method>& methods = {Method::Doc, Method::Rcsl}) {
    std::vector<RunSpec> specs;
    for (Method m : methods)
        for (std::uint64_t seed : seeds) {
            RunSpec spec;
            spec.env_kind = "toytree";
            spec.p = 0.0;
            spec.episodes = 10000;
            spec.seed = seed;
            spec.train = default_train_config("toytree", m, seed);
            specs.push_back(spec);
        }
    return specs;
}

inline std::vector<RunSpec> frozenlake_sweep_specs(
    const std::vector<std::uint64_t>& seeds,
    const std::vector<Method>& methods = {Method::Doc, Method::Rcsl},
    const std::vector<double>& epsilons = {0.3, 0.5, 0.7}) {
    std::vector<RunSpec> specs;
    for (double eps : epsilons)
        for (Method m : methods)
            for (std::uint64_t seed : seeds) {
                RunSpec spec;
                spec.env_kind = "frozenlake";
                spec.p = 1.0 / 3.0;
                spec.epsilon = eps;
                spec.lake_horizon = 20;
                spec.episodes = 200;
                spec.n_rollouts = 1000;
                spec.seed = seed;
                spec.train = default_train_config("frozenlake", m, seed);
                specs.push_back(spec);
            }
    return specs;
}

// --- artifact writers -------------------------------------------------------

inline void write_results_csv(const std::vector<RunOutput>& runs,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_results_csv: cannot open " + path);
    write_eval_csv_header(out);
    for (const auto& run : runs) write_eval_csv_row(out, run.report);
}

inline void write_run_logs(const std::vector<RunOutput>& runs,
                           const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& run : runs) {
        std::string name = run.spec.env_kind + "_" + run.report.method +
                           "_p" + std::to_string(run.spec.p) + "_eps" +
                           std::to_string(run.spec.epsilon) + "_s" +
                           std::to_string(run.spec.seed) + ".csv";
        std::ofstream out(std::filesystem::path(dir) / name);
        if (!out) throw IoError("write_run_logs: cannot open " + name);
        write_training_log_csv(run.log, out);
    }
}

// Mean achieved return versus the x-axis of the sweep, one series per
// method, averaged over seeds.
inline void write_sweep_plot(const std::vector<RunOutput>& runs,
                             const std::string& path, const std::string& title,
                             bool x_is_epsilon = false) {
    std::map<std::string, std::map<double, std::pair<double, int>>> agg;
    for (const auto& run : runs) {
        double x = x_is_epsilon ? run.spec.epsilon : run.spec.p;
        auto& cell = agg[run.report.method][x];
        cell.first += run.report.mean_return;
        cell.second += 1;
    }
    SvgPlot plot(title, x_is_epsilon ? "epsilon" : "p", "mean return");
    for (const auto& [method, points] : agg) {
        PlotSeries series;
        series.label = method;
        for (const auto& [x, cell] : points) {
            series.x.push_back(x);
            series.y.push_back(cell.first / cell.second);
        }
        plot.add_series(std::move(series));
    }
    plot.save(path);
}

}  // namespace doc
