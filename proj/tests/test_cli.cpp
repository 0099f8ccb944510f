#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace {

struct Result {
    int code = -1;
    std::string out;
};

// Runs the CLI with stderr discarded and returns its exit status and stdout.
Result lab(const std::string& args) {
    const std::string cmd = std::string("\"") + ZVLAB_CLI + "\" " + args + " 2>/dev/null";
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string scenario(const std::string& name) { return std::string(ZVLAB_SOURCE_DIR) + "/scenarios/" + name; }

std::string write_temp(const std::string& name, const std::string& text) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p.string();
}

} // namespace

TEST(Cli, ListFamiliesJson) {
    const Result r = lab("list-families --json");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j.size(), 5u);
    EXPECT_EQ(j[3]["dim"], 3);
}

TEST(Cli, ValidateExitCodes) {
    EXPECT_EQ(lab("validate " + scenario("minimal-simulate.json")).code, 0);
    const auto bad = write_temp("zvlab-bad.json", R"({"name": "b", "operations": [{"op": "norm", "q": 0.5}]})");
    EXPECT_EQ(lab("validate " + bad).code, 2);
    EXPECT_EQ(lab("run " + bad).code, 2);
    EXPECT_EQ(lab("validate /nonexistent.json").code, 2);
    EXPECT_EQ(lab("simulate --no-such-flag").code, 2);
    EXPECT_EQ(lab("norm --q 0.5").code, 2);
}

TEST(Cli, RunPassAndFail) {
    const auto out = (std::filesystem::temp_directory_path() / "zvlab-cli-run").string();
    const Result ok = lab("run " + scenario("minimal-simulate.json") + " --out " + out + " --quiet");
    EXPECT_EQ(ok.code, 0);
    EXPECT_NE(ok.out.find("1/1 operations passed"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(out + "/report.json"));
    const auto failing = write_temp("zvlab-fail.json", R"({"name": "f", "operations": [
        {"op": "simulate", "paths": 100, "steps": 8, "expect": {"mean_x1": {"min": 50}}}]})");
    EXPECT_EQ(lab("run " + failing + " --quiet").code, 1);
    std::filesystem::remove_all(out);
}

TEST(Cli, SingleOperationPrintsReport) {
    const Result r = lab("khasminskii --function constant --constant 0.5 --gamma 2 --paths 50 --steps 8 --nx 16 --quiet");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["schema"], "report v1");
    EXPECT_NEAR(j["operations"][0]["metrics"]["value"].get<double>(), std::exp(1.0), 1e-12);
    const Result seeded = lab("simulate --paths 20 --steps 4 --seed 9 --quiet");
    ASSERT_EQ(seeded.code, 0);
    EXPECT_EQ(nlohmann::json::parse(seeded.out)["seed"], 9);
}
