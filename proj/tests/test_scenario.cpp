#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "zvlab/scenario.hpp"

using namespace zvlab;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v)
        if (s.find(needle) != std::string::npos) return true;
    return false;
}

json minimal() {
    return json::parse(R"({"name": "t", "seed": 3, "operations": [{"op": "simulate", "paths": 200, "steps": 16}]})");
}

RunReport run_json(const json& j, RunOptions opt = {}) {
    const auto v = validate(j.dump());
    EXPECT_TRUE(v.ok()) << (v.violations.empty() ? "" : v.violations.front());
    return run(*v.scenario, opt);
}

} // namespace

TEST(Validation, MinimalScenarioIsValid) {
    const auto v = validate(minimal().dump());
    ASSERT_TRUE(v.ok());
    EXPECT_EQ(v.scenario->ops.size(), 1u);
    EXPECT_EQ(v.scenario->ops[0].id, "simulate");
    EXPECT_EQ(v.scenario->ops[0].seed, 3u);
}

TEST(Validation, ReportsEveryViolation) {
    const auto v = validate(R"({"name": "bad", "operations": [
        {"op": "norm", "q": 0.5},
        {"op": "simulate", "paths": 100000, "steps": 100000},
        {"op": "krylov", "colour": "red"},
        {"op": "frobnicate"},
        {"op": "contraction", "y1": [0.1, 0.1], "y2": [0.1, 0.1]}
    ]})");
    EXPECT_FALSE(v.ok());
    EXPECT_TRUE(mentions(v.violations, "q must exceed 1"));
    EXPECT_TRUE(mentions(v.violations, "max_path_steps"));
    EXPECT_TRUE(mentions(v.violations, "colour"));
    EXPECT_TRUE(mentions(v.violations, "unknown op 'frobnicate'"));
    EXPECT_TRUE(mentions(v.violations, "y1 != y2"));
    EXPECT_GE(v.violations.size(), 5u);
}

TEST(Validation, StructuralErrors) {
    EXPECT_TRUE(mentions(validate("{not json").violations, "not valid JSON"));
    EXPECT_TRUE(mentions(validate(R"({"name": "x", "operations": []})").violations, "non-empty"));
    EXPECT_TRUE(mentions(validate(R"({"operations": [{"op": "norm"}]})").violations, "'name' is required"));
    EXPECT_TRUE(mentions(validate(R"({"name": "x", "operations": [{"op": "norm"}, {"op": "norm"}]})").violations,
                         "duplicate id"));
    EXPECT_TRUE(mentions(validate(R"({"name": "x", "budget": {"max_lattice_cells": 1000},
                                     "operations": [{"op": "pde-solve"}]})").violations,
                         "max_lattice_cells"));
    EXPECT_TRUE(mentions(validate(R"({"name": "x", "operations": [{"op": "tightness", "steps": 16, "deltas": [0.1]}]})")
                             .violations,
                         "delta"));
    EXPECT_TRUE(mentions(validate(R"({"name": "x", "operations": [{"op": "norm", "expect": {"value": {"tol": 1}}}]})")
                             .violations,
                         "min, max or equals"));
}

TEST(Validation, HashIgnoresLayoutOnly) {
    const std::string a = R"({"name": "h", "operations": [{"op": "norm", "p": 3}], "seed": 4})";
    const std::string b = "{ \"seed\":4,\n  \"operations\":[ {\"p\":3, \"op\":\"norm\"} ],\"name\":\"h\" }";
    const std::string c = R"({"name": "h", "operations": [{"op": "norm", "p": 4}], "seed": 4})";
    EXPECT_EQ(validate(a).scenario->hash, validate(b).scenario->hash);
    EXPECT_NE(validate(a).scenario->hash, validate(c).scenario->hash);
    EXPECT_EQ(validate(a).scenario->hash.rfind("fnv1a64:", 0), 0u);
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Run, ReproducibleAcrossRunsAndWorkers) {
    json j = minimal();
    j["operations"].push_back({{"op", "bel"}, {"paths", 500}, {"steps", 16}});
    const json first = strip_runtime(run_json(j).json);
    const json again = strip_runtime(run_json(j).json);
    RunOptions two;
    two.workers = 2;
    const json parallel = strip_runtime(run_json(j, two).json);
    EXPECT_EQ(first, again);
    EXPECT_EQ(first, parallel);
    EXPECT_FALSE(first.contains("runtime"));
    EXPECT_FALSE(first["operations"][0].contains("runtime"));
}

TEST(Run, EveryOperationOnce) {
    const json j = json::parse(R"({"name": "all", "seed": 5, "operations": [
        {"op": "norm", "grid": {"nx": 16}},
        {"op": "pde-solve", "grid": {"nx": 16, "nt": 16}},
        {"op": "maxreg", "grid": {"nx": 16, "nt": 16}},
        {"op": "lambda-sweep", "lambdas": [1, 4], "grid": {"nx": 16, "nt": 16}},
        {"op": "duality", "ladder": [8, 16]},
        {"op": "zvonkin", "drift": "smooth", "grid": {"nx": 16, "nt": 32}},
        {"op": "conjugacy", "drift": "smooth", "grid": {"nx": 16, "nt": 32}, "paths": 200, "steps": 32},
        {"op": "simulate", "paths": 100, "steps": 16},
        {"op": "krylov", "paths": 100, "steps": 16, "grid": {"nx": 16}},
        {"op": "khasminskii", "paths": 100, "steps": 16, "grid": {"nx": 16}},
        {"op": "bel", "paths": 200, "steps": 16},
        {"op": "flow", "levels": [2], "p_list": [2], "paths": 100, "steps": 16},
        {"op": "contraction", "paths": 100, "steps": 16},
        {"op": "tightness", "paths": 100, "steps": 16, "deltas": [0.125, 0.25]},
        {"op": "weak-agree", "paths": 100, "steps": 16, "grid": {"nx": 16}}
    ]})");
    const RunReport rep = run_json(j);
    std::set<std::string> seen;
    for (const auto& row : rep.json["operations"]) {
        EXPECT_NE(row["status"], "error") << row["op"] << ": " << row.value("error", "");
        EXPECT_FALSE(row["metrics"].empty()) << row["op"];
        EXPECT_TRUE(seen.insert(row["op"].get<std::string>()).second);
    }
    EXPECT_EQ(seen.size(), operation_names().size() - 1);
    EXPECT_EQ(rep.json["schema"], "report v1");
}

TEST(Run, FailuresAndErrorsAreReportedPerRow) {
    const json j = json::parse(R"({"name": "mixed", "operations": [
        {"id": "missing", "op": "norm", "function": "file", "file": "/nonexistent/f.gridfn"},
        {"id": "strict", "op": "simulate", "paths": 100, "steps": 8, "expect": {"mean_x1": {"min": 100}}},
        {"id": "fine", "op": "simulate", "paths": 100, "steps": 8, "expect": {"mean_x1": {"max": 100}}}
    ]})");
    const RunReport rep = run_json(j);
    const auto& ops = rep.json["operations"];
    ASSERT_EQ(ops.size(), 3u);
    EXPECT_EQ(ops[0]["status"], "error");
    EXPECT_TRUE(ops[0].contains("error"));
    EXPECT_EQ(ops[1]["status"], "fail");
    EXPECT_FALSE(ops[1]["bands"][0]["pass"].get<bool>());
    EXPECT_EQ(ops[2]["status"], "pass");
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(exit_code(rep), 1);
}

TEST(Run, LambdaSweepTableOnDisk) {
    const auto dir = std::filesystem::temp_directory_path() / "zvlab-test-sweep";
    std::filesystem::remove_all(dir);
    RunOptions opt;
    opt.out = dir.string();
    const json j = json::parse(R"({"name": "sweep", "operations": [
        {"id": "sw", "op": "lambda-sweep", "lambdas": [1, 4, 16, 64], "grid": {"nx": 16, "nt": 16}}]})");
    const RunReport rep = run_json(j, opt);
    ASSERT_TRUE(std::filesystem::exists(dir / "sw.csv"));
    ASSERT_TRUE(std::filesystem::exists(dir / "report.json"));
    std::istringstream csv(slurp(dir / "sw.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "source,lambda,quantity");
    std::set<std::string> lambdas;
    while (std::getline(csv, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1);
        lambdas.insert(line.substr(a + 1, b - a - 1));
    }
    EXPECT_EQ(lambdas, (std::set<std::string>{"1", "4", "16", "64"}));
    EXPECT_EQ(json::parse(slurp(dir / "report.json"))["config_hash"], rep.json["config_hash"]);
    std::filesystem::remove_all(dir);
}

TEST(Scenarios, ShippedFilesValidate) {
    int n = 0;
    for (const auto& e : std::filesystem::directory_iterator(std::filesystem::path(ZVLAB_SOURCE_DIR) / "scenarios")) {
        if (e.path().extension() != ".json") continue;
        const auto v = validate(slurp(e.path()));
        EXPECT_TRUE(v.ok()) << e.path() << ": " << (v.violations.empty() ? "" : v.violations.front());
        ++n;
    }
    EXPECT_GE(n, 4);
}

TEST(Scenarios, BelScenarioPasses) {
    const auto v = validate(slurp(std::filesystem::path(ZVLAB_SOURCE_DIR) / "scenarios" / "family-a-bel.json"));
    ASSERT_TRUE(v.ok());
    const RunReport rep = run(*v.scenario);
    EXPECT_TRUE(rep.pass) << rep.json["operations"].dump();
}
