// SPDX-License-Identifier: Apache-2.0
// Runs the installed command-line binary end to end.
#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#ifndef CAPFORGE_CLI_PATH
#error "CAPFORGE_CLI_PATH must point at the capforge binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Dir {
    fs::path path;
    Dir() {
        path = fs::temp_directory_path() / ("capforge-cli-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~Dir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

// Exit status of `env capforge args`, stderr discarded.
int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(CAPFORGE_CLI_PATH) + "' " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string capture(const std::string& args) {
    const std::string cmd = "'" + std::string(CAPFORGE_CLI_PATH) + "' " + args + " 2>&1";
    std::string out;
    if (FILE* p = popen(cmd.c_str(), "r")) {
        char buf[4096];
        std::size_t n;
        while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
        pclose(p);
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<json> jsonl(const fs::path& p) {
    std::vector<json> out;
    std::istringstream in(slurp(p));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

void pipeline(const Dir& d, const std::string& tag, const std::string& extra = "") {
    const std::string data = d / "data";
    REQUIRE(run("detect --data " + data + " --out " + (d / (tag + "-report.json")) + " --t 3 --seed 7" + extra) == 0);
    REQUIRE(run("pseudolabel --data " + data + " --report " + (d / (tag + "-report.json")) + " --out " + (d / (tag + "-pl.json")) +
                " --descriptions " + data + "/descriptions.json --seed 7" + extra) == 0);
    REQUIRE(run("train --data " + data + " --pl " + (d / (tag + "-pl.json")) + " --out " + (d / (tag + "-model")) + " --seed 7" + extra) == 0);
    REQUIRE(run("eval --data " + data + " --model " + (d / (tag + "-model")) + " --pl " + (d / (tag + "-pl.json")) + " --out " +
                (d / (tag + "-eval")) + " --seed 7" + extra) == 0);
}

}  // namespace

TEST_CASE("help documents the flags") {
    const std::string h = capture("train --help");
    for (const char* f : {"--data", "--pl", "--out", "--epochs", "--lr", "--margin-scale", "--tau", "--seed", "--config", "--set"})
        CHECK(h.find(f) != std::string::npos);
    CHECK(capture("synth --help").find("--confusion-pairs") != std::string::npos);
}

TEST_CASE("full pipeline twice gives identical artifacts") {
    Dir d;
    REQUIRE(run("synth --out " + (d / "data") + " --n-mismatch 2 --confusion-pairs 2 --seed 7") == 0);
    pipeline(d, "a", " --set epochs=10");
    pipeline(d, "b", " --set epochs=10");
    CHECK(slurp(d.path / "a-model" / "metrics.jsonl") == slurp(d.path / "b-model" / "metrics.jsonl"));
    CHECK(slurp(d.path / "a-eval" / "eval.json") == slurp(d.path / "b-eval" / "eval.json"));
    CHECK(slurp(d.path / "a-model" / "trunk_img.f32") == slurp(d.path / "b-model" / "trunk_img.f32"));

    const auto log = jsonl(d.path / "a-model" / "metrics.jsonl");
    REQUIRE(log.size() == 12);
    CHECK(log[0]["config"]["epochs"] == "10");
    CHECK(log[0]["config"]["seed"] == "7");
    const json ev = json::parse(slurp(d.path / "a-eval" / "eval.json"));
    CHECK(ev["config"]["seed"] == "7");
    CHECK(json::parse(slurp(d.path / "a-report.json"))["config"]["t"] == "3");
    CHECK(json::parse(slurp(d.path / "a-pl.json")).contains("config"));
    CHECK(json::parse(slurp(d.path / "a-model" / "model.json"))["config"]["epochs"] == "10");
}

TEST_CASE("auto threshold on a 45-class dataset") {
    Dir d;
    REQUIRE(run("synth --out " + (d / "data") + " --classes 45 --per-class 6 --test-per-class 0 --dim 64 --min-angle 45") == 0);
    REQUIRE(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --t auto") == 0);
    CHECK(json::parse(slurp(d.path / "r.json"))["t"] == 5);
}

TEST_CASE("zero epochs emit zero-shot metrics") {
    Dir d;
    REQUIRE(run("synth --out " + (d / "data") + " --n-mismatch 2 --seed 3") == 0);
    REQUIRE(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --t 3") == 0);
    REQUIRE(run("pseudolabel --data " + (d / "data") + " --report " + (d / "r.json") + " --out " + (d / "pl.json") +
                " --descriptions " + (d / "data") + "/descriptions.json") == 0);
    REQUIRE(run("train --paradigm ul --epochs 0 --data " + (d / "data") + " --pl " + (d / "pl.json") + " --out " + (d / "m")) == 0);
    const auto log = jsonl(d.path / "m" / "metrics.jsonl");
    REQUIRE(log.size() == 2);
    CHECK(log[1]["epoch"] == 0);
    CHECK(log[1].contains("test_accuracy"));
}

TEST_CASE("precedence: file < environment < flag") {
    Dir d;
    REQUIRE(run("synth --out " + (d / "data") + " --n-mismatch 2 --seed 3") == 0);
    REQUIRE(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --t 3") == 0);
    REQUIRE(run("pseudolabel --data " + (d / "data") + " --report " + (d / "r.json") + " --out " + (d / "pl.json") +
                " --descriptions " + (d / "data") + "/descriptions.json") == 0);
    std::ofstream(d.path / "c.toml") << "epochs = 1\nlr = 0.02\n";
    const std::string base = "train --config " + (d / "c.toml") + " --data " + (d / "data") + " --pl " + (d / "pl.json");
    REQUIRE(run(base + " --out " + (d / "m1")) == 0);
    REQUIRE(run(base + " --out " + (d / "m2"), "CAPFORGE_EPOCHS=2") == 0);
    REQUIRE(run(base + " --out " + (d / "m3") + " --epochs 3", "CAPFORGE_EPOCHS=2") == 0);
    CHECK(jsonl(d.path / "m1" / "metrics.jsonl").size() == 3);
    CHECK(jsonl(d.path / "m2" / "metrics.jsonl").size() == 4);
    const auto l3 = jsonl(d.path / "m3" / "metrics.jsonl");
    CHECK(l3.size() == 5);
    CHECK(l3[0]["config"]["lr"] == "0.02");
}

TEST_CASE("exit codes") {
    Dir d;
    CHECK(run("") == 1);
    CHECK(run("detect --bogus-flag") == 1);
    CHECK(run("detect --data " + (d / "missing") + " --out " + (d / "r.json")) == 1);
    REQUIRE(run("synth --out " + (d / "data")) == 0);
    CHECK(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --paradigm trzsl") == 1);
    CHECK(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --set nope=1") == 1);
    CHECK(run("detect --data " + (d / "data") + " --out " + (d / "r.json") + " --t 11") == 1);
    REQUIRE(run("synth --out " + (d / "tz") + " --paradigm trzsl") == 0);
    CHECK(run("detect --data " + (d / "tz") + " --out " + (d / "r.json") + " --paradigm trzsl --t 2") == 0);
    CHECK(run("--version") == 0);
}
