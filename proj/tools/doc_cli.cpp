#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "doc/checkpoint.hpp"
#include "doc/inference.hpp"
#include "doc/objectives.hpp"
#include "doc/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"env",
         {{"kind", "bandit"},
          {"p", 0.1},
          {"epsilon", 0.7},
          {"layout", doc::classic_lake_4x4()},
          {"horizon", 20},
          {"plan_p", 1.0 / 3.0}}},
        {"data", {{"episodes", 1000}, {"seed", 0}, {"path", "dataset.jsonl"}}},
        {"train",
         {{"method", "doc"},
          {"beta", 1.0},
          {"beta_warmup", 0},
          {"learning_rate", 0.3},
          {"steps", 1500},
          {"batch_size", 0},
          {"latent_atoms", 4},
          {"negatives", 16},
          {"window", 20},
          {"percentile", 10.0},
          {"policy_temperature", 1.0},
          {"seed", 0},
          {"checkpoint", "checkpoint.bin"}}},
        {"eval", {{"n_rollouts", 2000}, {"K", 8}, {"seeds", {0, 1, 2, 3, 4}}}},
        {"reproduce", {{"figure", "bandit"}}},
    };
}

void apply_override(json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw doc::InvalidParameterError("--set expects key=value, got " + kv);
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    json* node = &cfg;
    std::istringstream is(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(is, part, '.')) parts.push_back(part);
    if (parts.empty())
        throw doc::InvalidParameterError("--set: empty key in " + kv);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    json parsed = json::parse(value, nullptr, false);
    (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

json load_config(const std::string& path, const std::vector<std::string>& sets) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw doc::IoError("cannot open config " + path);
        json user;
        try {
            in >> user;
        } catch (const json::exception& e) {
            throw doc::ParseError("config " + path + ": " + e.what());
        }
        cfg.merge_patch(user);
    }
    for (const auto& kv : sets) apply_override(cfg, kv);
    return cfg;
}

void echo_config(const json& cfg, const fs::path& out) {
    fs::create_directories(out);
    std::ofstream f(out / "config.json");
    if (!f) throw doc::IoError("cannot write effective config");
    f << cfg.dump(2) << "\n";
}

doc::RunSpec spec_from_config(const json& cfg) {
    doc::RunSpec spec;
    const auto& e = cfg.at("env");
    spec.env_kind = e.at("kind").get<std::string>();
    spec.p = e.at("p").get<double>();
    spec.epsilon = e.at("epsilon").get<double>();
    spec.lake_layout = e.at("layout").get<std::string>();
    spec.lake_horizon = e.at("horizon").get<int>();
    spec.plan_p = e.at("plan_p").get<double>();
    spec.episodes = cfg.at("data").at("episodes").get<std::size_t>();
    spec.seed = cfg.at("data").at("seed").get<std::uint64_t>();
    spec.n_rollouts = cfg.at("eval").at("n_rollouts").get<int>();
    spec.K = cfg.at("eval").at("K").get<int>();

    const auto& t = cfg.at("train");
    spec.train.method = doc::parse_method(t.at("method").get<std::string>());
    spec.train.beta = t.at("beta").get<double>();
    spec.train.beta_warmup = t.at("beta_warmup").get<long>();
    spec.train.learning_rate = t.at("learning_rate").get<double>();
    spec.train.steps = t.at("steps").get<int>();
    spec.train.batch_size = t.at("batch_size").get<int>();
    spec.train.latent_atoms = t.at("latent_atoms").get<int>();
    spec.train.negatives = t.at("negatives").get<int>();
    spec.train.window = t.at("window").get<int>();
    spec.train.percentile = t.at("percentile").get<double>();
    spec.train.policy_temperature = t.at("policy_temperature").get<double>();
    spec.train.seed = t.at("seed").get<std::uint64_t>();
    return spec;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list, const json& cfg) {
    std::vector<std::uint64_t> seeds;
    if (!list.empty()) {
        std::istringstream is(list);
        std::string tok;
        while (std::getline(is, tok, ','))
            if (!tok.empty()) seeds.push_back(std::stoull(tok));
    } else {
        for (const auto& s : cfg.at("eval").at("seeds"))
            seeds.push_back(s.get<std::uint64_t>());
    }
    if (seeds.empty()) throw doc::InvalidParameterError("empty seed list");
    return seeds;
}

int cmd_gen_data(const json& cfg, const fs::path& out) {
    doc::RunSpec spec = spec_from_config(cfg);
    doc::Environment env = doc::make_env(spec);
    doc::Dataset data = doc::collect(env, doc::make_behavior(spec),
                                     spec.episodes, spec.seed,
                                     doc::behavior_desc(spec));
    fs::path path = out / cfg.at("data").at("path").get<std::string>();
    doc::save_dataset(data, path.string());
    doc::save_dataset_meta(data, path.string() + ".meta");
    std::cout << "wrote " << path.string() << " (" << data.size()
              << " episodes)\n";
    return 0;
}

int cmd_train(const json& cfg, const fs::path& out) {
    doc::RunSpec spec = spec_from_config(cfg);
    doc::Environment env = doc::make_env(spec);
    fs::path data_path = out / cfg.at("data").at("path").get<std::string>();
    doc::Dataset data = doc::load_dataset(data_path.string());
    doc::TrainResult result = doc::train(data, env, spec.train);
    fs::path ckpt = out / cfg.at("train").at("checkpoint").get<std::string>();
    doc::save_checkpoint(result.bundle, ckpt.string());
    std::ofstream log(out / "train_log.csv");
    if (!log) throw doc::IoError("cannot write train_log.csv");
    doc::write_training_log_csv(result.log, log);
    std::cout << "wrote " << ckpt.string() << " and train_log.csv\n";
    return 0;
}

int cmd_eval(const json& cfg, const fs::path& out,
             const std::vector<std::uint64_t>& seeds) {
    doc::RunSpec spec = spec_from_config(cfg);
    doc::Environment env = doc::make_env(spec);
    fs::path ckpt = out / cfg.at("train").at("checkpoint").get<std::string>();
    doc::TabularBundle bundle = doc::load_checkpoint(ckpt.string());
    std::ofstream csv(out / "results.csv");
    if (!csv) throw doc::IoError("cannot write results.csv");
    doc::write_eval_csv_header(csv);
    std::vector<double> means;
    doc::EvalReport last;
    for (std::uint64_t seed : seeds) {
        doc::EvalReport rep =
            doc::evaluate(bundle, env, spec.n_rollouts, spec.K, seed);
        rep.param_p = spec.p;
        rep.epsilon = spec.epsilon;
        doc::write_eval_csv_row(csv, rep);
        means.push_back(rep.mean_return);
        last = rep;
    }
    // Aggregate row: mean return across seeds with its spread in ci95.
    double mean = std::accumulate(means.begin(), means.end(), 0.0) /
                  double(means.size());
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    if (means.size() > 1) var /= double(means.size() - 1);
    last.method += "-aggregate";
    last.seed = 0;
    last.mean_return = mean;
    last.ci95 = means.size() > 1
                    ? 1.96 * std::sqrt(var / double(means.size()))
                    : 0.0;
    last.exact_value.reset();
    last.gap.reset();
    doc::write_eval_csv_row(csv, last);
    std::cout << "wrote results.csv (" << seeds.size() << " seeds + aggregate)\n";
    return 0;
}

int cmd_reproduce(const json& cfg, const fs::path& out, std::string figure,
                  const std::vector<std::uint64_t>& seeds, int jobs) {
    if (figure.empty())
        figure = cfg.at("reproduce").at("figure").get<std::string>();
    fs::create_directories(out);

    if (figure == "counterexample") {
        doc::CounterexampleReport rep = doc::counterexample_check();
        std::ofstream csv(out / "counterexample.csv");
        if (!csv) throw doc::IoError("cannot write counterexample.csv");
        csv << "quantity,value,expected\n";
        csv << "pi(a0|s0 z0)," << rep.policy_s0_z0[0] << ",0.5\n";
        csv << "pi(a1|s0 z0)," << rep.policy_s0_z0[1] << ",0.5\n";
        csv << "pi(a0|s1 z0)," << rep.policy_s1_z0[0] << ",0.5\n";
        csv << "pi(a1|s1 z0)," << rep.policy_s1_z0[1] << ",0.5\n";
        csv << "prob_tau2_rollout," << rep.prob_tau2_env << ",0.25\n";
        csv << "prob_tau2_data_z0," << rep.prob_tau2_data_z0 << ",0\n";
        csv << "value_gap_z0," << rep.value_gap_z0 << ",0\n";
        csv << "pass," << (rep.pass ? 1 : 0) << ",1\n";
        std::cout << "counterexample " << (rep.pass ? "pass" : "FAIL") << "\n";
        return rep.pass ? 0 : 1;
    }

    std::vector<doc::RunSpec> specs;
    if (figure == "bandit") {
        specs = doc::bandit_sweep_specs(
            seeds, {doc::Method::Doc, doc::Method::Rcsl, doc::Method::PctBc,
                    doc::Method::Vae},
            {0.1, 0.2, 0.3, 0.4, 0.5});
    } else if (figure == "toytree") {
        specs = doc::toytree_sweep_specs(seeds);
    } else if (figure == "frozenlake") {
        specs = doc::frozenlake_sweep_specs(seeds);
    } else {
        throw doc::InvalidParameterError("unknown figure: " + figure);
    }
    auto runs = doc::run_many(specs, jobs);
    doc::write_results_csv(runs, (out / (figure + ".csv")).string());
    doc::write_run_logs(runs, (out / "logs").string());
    if (figure == "bandit") {
        // Reference rows: the Bayes-optimal arm value 1 - p.
        std::ofstream csv(out / (figure + ".csv"), std::ios::app);
        for (double p : {0.1, 0.2, 0.3, 0.4, 0.5}) {
            doc::EvalReport ref;
            ref.method = "reference";
            ref.env_name = "bandit";
            ref.param_p = p;
            ref.v_selected = 1.0 - p;
            ref.mean_return = 1.0 - p;
            doc::write_eval_csv_row(csv, ref);
        }
        // Append the reference line to the figure as well.
        std::map<double, std::pair<double, int>> agg;
        doc::SvgPlot plot("bandit sweep", "p", "mean return");
        std::map<std::string, std::map<double, std::pair<double, int>>> series;
        for (const auto& run : runs) {
            auto& cell = series[run.report.method][run.spec.p];
            cell.first += run.report.mean_return;
            cell.second += 1;
        }
        for (const auto& [method, points] : series) {
            doc::PlotSeries s;
            s.label = method;
            for (const auto& [x, cell] : points) {
                s.x.push_back(x);
                s.y.push_back(cell.first / cell.second);
            }
            plot.add_series(std::move(s));
        }
        doc::PlotSeries ref;
        ref.label = "1-p";
        for (double p : {0.1, 0.2, 0.3, 0.4, 0.5}) {
            ref.x.push_back(p);
            ref.y.push_back(1.0 - p);
        }
        plot.add_series(std::move(ref));
        plot.save((out / (figure + ".svg")).string());
    } else {
        doc::write_sweep_plot(runs, (out / (figure + ".svg")).string(), figure,
                              figure == "frozenlake");
    }
    std::cout << "wrote " << (out / (figure + ".csv")).string() << " and "
              << (out / (figure + ".svg")).string() << "\n";
    return 0;
}

int cmd_check(const fs::path& out) {
    int failures = 0;
    auto report = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "pass" : "FAIL") << "  " << name << "\n";
        if (!ok) ++failures;
    };

    doc::CounterexampleReport ce = doc::counterexample_check();
    report("counterexample exact assertions", ce.pass);

    // Quick consistency slice on the bandit.
    {
        doc::Environment env = doc::bandit_env(0.2);
        doc::Dataset d = doc::collect(env, doc::bandit_behavior(0.2), 400, 1,
                                      "bandit");
        doc::TrainConfig cfg;
        cfg.method = doc::Method::Doc;
        cfg.latent_atoms = 2;
        cfg.steps = 1500;
        cfg.learning_rate = 0.3;
        cfg.seed = 1;
        auto result = doc::train(d, env, cfg);
        double worst = 0.0;
        for (int z : doc::supported_latents(result.bundle, d, 0.05))
            worst = std::max(worst,
                             doc::consistency_gap(result.bundle, env, z));
        report("bandit consistency gap <= 0.05", worst <= 0.05);
    }

    // Trajectory-probability normalization on every built-in environment.
    {
        bool ok = true;
        for (const doc::Environment& env :
             {doc::bandit_env(0.25), doc::toy_tree_env(),
              doc::counterexample_env(),
              doc::frozen_lake_env("SF\nFG", 0.4, 4)}) {
            double total = 0.0;
            for (const auto& wt : doc::enumerate_trajectories(env))
                total += wt.env_prob *
                         doc::policy_factor(wt.trajectory,
                                            doc::uniform_policy(env));
            ok = ok && std::abs(total - 1.0) <= 1e-9;
        }
        report("trajectory normalization 1 +/- 1e-9", ok);
    }

    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream f(out / "check.txt");
        f << (failures == 0 ? "pass" : "fail") << "\n";
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dichotomy-of-control experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir = "out", seed_list, figure;
    std::vector<std::string> sets;
    bool deterministic = false;
    int jobs = 1;
    app.add_option("--config", config_path, "config file (JSON)");
    app.add_option("--set", sets, "override config key (dotted.path=value)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seeds", seed_list, "comma-separated seed list");
    app.add_flag("--deterministic", deterministic,
                 "suppress timestamps in artifacts");
    app.add_option("--jobs", jobs, "worker count for sweeps");

    auto* gen = app.add_subcommand("gen-data", "generate an offline dataset");
    auto* train = app.add_subcommand("train", "train on a generated dataset");
    auto* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
    auto* repro = app.add_subcommand("reproduce", "run a full figure sweep");
    repro->add_option("figure", figure,
                      "bandit | toytree | frozenlake | counterexample");
    auto* check = app.add_subcommand(
        "check", "run the counterexample and consistency suites");

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = load_config(config_path, sets);
        if (!deterministic) {
            // Provenance stamp; omitted under --deterministic so that
            // reruns are byte-identical.
            cfg["generated_at"] = std::to_string(std::time(nullptr));
        }
        fs::path out(out_dir);
        echo_config(cfg, out);
        std::vector<std::uint64_t> seeds = parse_seeds(seed_list, cfg);
        if (gen->parsed()) return cmd_gen_data(cfg, out);
        if (train->parsed()) return cmd_train(cfg, out);
        if (eval->parsed()) return cmd_eval(cfg, out, seeds);
        if (repro->parsed()) return cmd_reproduce(cfg, out, figure, seeds, jobs);
        if (check->parsed()) return cmd_check(out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
