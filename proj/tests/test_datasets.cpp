#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "doc/dataset.hpp"
#include "doc/planner.hpp"

using namespace doc;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("collect is deterministic and episodes are independent per index") {
    Environment env = bandit_env(0.3);
    Dataset a = collect(env, bandit_behavior(0.3), 50, 42, "bandit");
    Dataset b = collect(env, bandit_behavior(0.3), 50, 42, "bandit");
    CHECK(a.trajectories == b.trajectories);
    CHECK(a.env_fingerprint == env_fingerprint(env));
    CHECK(a.behavior_meta == "behavior=bandit;seed=42;n=50");

    // A prefix collection reproduces the first episodes of a longer one.
    Dataset c = collect(env, bandit_behavior(0.3), 10, 42, "bandit");
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(c.trajectories[i] == a.trajectories[i]);

    Dataset d = collect(env, bandit_behavior(0.3), 50, 43, "bandit");
    CHECK(a.trajectories != d.trajectories);
}

TEST_CASE("bandit behavior picks the good arm with probability p") {
    Environment env = bandit_env(0.2);
    Dataset d = collect(env, bandit_behavior(0.2), 10000, 5, "bandit");
    double arm1 = 0.0;
    for (const auto& tau : d.trajectories) arm1 += tau.actions[0];
    CHECK(arm1 / d.size() == doctest::Approx(0.8).epsilon(0.03));
}

TEST_CASE("dataset round-trips through jsonl") {
    Environment env = toy_tree_env();
    Dataset d = collect(env, uniform_policy(env), 30, 7, "uniform");
    auto path = temp_file("doc_test_roundtrip.jsonl");
    save_dataset(d, path.string());
    save_dataset_meta(d, path.string() + ".meta");
    Dataset loaded = load_dataset(path.string());
    CHECK(loaded.trajectories == d.trajectories);

    std::ifstream meta(path.string() + ".meta");
    nlohmann::json j;
    meta >> j;
    CHECK(j.at("env_fingerprint").get<std::string>() == d.env_fingerprint);
    CHECK(j.at("n").get<std::size_t>() == d.size());
    fs::remove(path);
    fs::remove(path.string() + ".meta");
}

TEST_CASE("load_dataset rejects malformed input with line numbers") {
    auto path = temp_file("doc_test_bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"states":[0],"actions":[0],"rewards":[1.0]})" << "\n";
        out << "{not json}\n";
    }
    try {
        load_dataset(path.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("load_dataset rejects mismatched lengths and mixed horizons") {
    auto path = temp_file("doc_test_shape.jsonl");
    {
        std::ofstream out(path);
        out << R"({"states":[0,1],"actions":[0],"rewards":[1.0,0.0]})" << "\n";
    }
    CHECK_THROWS_AS(load_dataset(path.string()), ParseError);
    {
        std::ofstream out(path);
        out << R"({"states":[0],"actions":[0],"rewards":[1.0]})" << "\n";
        out << R"({"states":[0,1],"actions":[0,0],"rewards":[1.0,0.0]})" << "\n";
    }
    CHECK_THROWS_AS(load_dataset(path.string()), ParseError);
    {
        std::ofstream out(path);
    }
    CHECK_THROWS_AS(load_dataset(path.string()), ParseError);
    fs::remove(path);
    CHECK_THROWS_AS(load_dataset("/nonexistent/dir/data.jsonl"), IoError);
}

TEST_CASE("env fingerprint separates environments and parameters") {
    CHECK(env_fingerprint(bandit_env(0.3)) == env_fingerprint(bandit_env(0.3)));
    CHECK(env_fingerprint(bandit_env(0.3)) != env_fingerprint(bandit_env(0.2)));
    CHECK(env_fingerprint(bandit_env(0.3)) !=
          env_fingerprint(toy_tree_env()));
    CHECK(env_fingerprint(frozen_lake_env(classic_lake_4x4(), 0.5, 8)) !=
          env_fingerprint(frozen_lake_env(classic_lake_4x4(), 0.5, 9)));
}

TEST_CASE("negative sampler matches the empirical (r, s') marginal") {
    // Hand-built dataset: two 2-step episodes over 4 step tuples.
    Trajectory t1{{0, 1}, {0, 0}, {1.0, 0.0}};
    Trajectory t2{{0, 2}, {1, 0}, {1.0, 0.0}};
    Dataset d = literal_dataset({t1, t2});
    NegativeSampler ns = build_negative_sampler(d);
    // Pairs: (1,1) x1, (1,2) x1, (0,-1) x2 out of 4 steps.
    REQUIRE(ns.size() == 3);
    std::map<std::pair<double, int>, double> got;
    for (std::size_t i = 0; i < ns.size(); ++i) got[ns.support[i]] = ns.weights[i];
    CHECK(got[{1.0, 1}] == doctest::Approx(0.25));
    CHECK(got[{1.0, 2}] == doctest::Approx(0.25));
    CHECK(got[{0.0, kNoNextState}] == doctest::Approx(0.5));

    // Sampled frequencies converge to the weights.
    Rng rng = make_rng(9, 0);
    std::vector<double> freq(ns.size(), 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) freq[ns.sample(rng)] += 1.0 / n;
    for (std::size_t i = 0; i < ns.size(); ++i)
        CHECK(freq[i] == doctest::Approx(ns.weights[i]).epsilon(0.05));
}

TEST_CASE("literal_dataset validates shapes") {
    CHECK_THROWS_AS(literal_dataset({}), InvalidParameterError);
    Trajectory bad{{0, 1}, {0}, {1.0, 0.0}};
    CHECK_THROWS_AS(literal_dataset({bad}), ShapeError);
    Trajectory t1{{0}, {0}, {1.0}};
    Trajectory t2{{0, 1}, {0, 0}, {1.0, 0.0}};
    CHECK_THROWS_AS(literal_dataset({t1, t2}), ShapeError);
}

TEST_CASE("epsilon-mixed lake behavior reaches the goal sometimes") {
    Environment env = frozen_lake_env(classic_lake_4x4(), 1.0 / 3.0, 20);
    Environment plan = frozen_lake_env(classic_lake_4x4(), 1.0 / 3.0, 20);
    Dataset d = collect(env, epsilon_mixed_planner(plan, 0.5), 500, 13, "eps0.5");
    double mean = 0.0;
    for (const auto& tau : d.trajectories) mean += tau.ret();
    mean /= d.size();
    CHECK(mean > 0.05);
    CHECK(mean < 1.0);
    for (const auto& tau : d.trajectories) {
        CHECK(tau.horizon() == 20);
        CHECK((tau.ret() == 0.0 || tau.ret() == 1.0));
    }
}
