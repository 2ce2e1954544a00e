#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "evoqa/evolution.hpp"
#include "evoqa/graph_io.hpp"

using namespace evoqa;
namespace fs = std::filesystem;

namespace {

struct Output {
    int code = 0;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

const fs::path& work() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "evoqa_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Output run(const std::string& args) {
    const fs::path err = work() / "stderr.txt";
    const std::string cmd = "cd '" + work().string() + "' && '" EVOQA_CLI "' " + args + " 2>'" + err.string() + "'";
    Output o;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    std::array<char, 4096> buf{};
    while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) o.out.append(buf.data(), n);
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.err = slurp(err);
    return o;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string last_line(const std::string& s) {
    std::string t = s;
    while (!t.empty() && t.back() == '\n') t.pop_back();
    return t.substr(t.rfind('\n') == std::string::npos ? 0 : t.rfind('\n') + 1);
}

}  // namespace

TEST_CASE("search writes history and summary; replay agrees") {
    write(work() / "c.json", R"({"max_trials": 80, "workers": 1, "estimator_enabled": false, "seed": 3})");
    const Output o = run("search --config c.json --backend oracle --out run/ --quiet");
    REQUIRE(o.code == 0);
    REQUIRE(fs::exists(work() / "run/history.jsonl"));
    const auto summary = nlohmann::json::parse(slurp(work() / "run/summary.json"));
    CHECK(summary["trials"] == 80);
    CHECK(load_history(work() / "run/history.jsonl").size() == 80);

    const Output r = run("replay run/history.jsonl --audit");
    REQUIRE(r.code == 0);
    const auto rj = nlohmann::json::parse(r.out);
    CHECK(rj["best_trial_id"] == summary["best_trial_id"]);
    CHECK(rj["best_fitness"] == summary["best_fitness"]);
    CHECK(rj["audit_problems"].empty());
}

TEST_CASE("encode header") {
    const Output o = run("encode --graph '" EVOQA_SOURCE_DIR "/fixtures/seeds/bidaf.json' --out t.bin");
    REQUIRE(o.code == 0);
    const auto j = nlohmann::json::parse(o.out);
    CHECK(j["n"] == 50);
    CHECK(j["k"] == 13);
    CHECK(fs::file_size(work() / "t.bin") == 12 + 50 * 50 * 13);
}

TEST_CASE("predict from a search checkpoint") {
    write(work() / "e.json",
          R"({"max_trials": 40, "population_size": 8, "workers": 1, "n_max": 12, "estimator_update_frequency": 10,
              "estimator": {"n": 12, "channels": 4, "stages": 1, "blocks_per_stage": 1}, "estimator_fit": {"steps": 5}})");
    REQUIRE(run("search --config e.json --mutation-burst 5 --out est_run --quiet").code == 0);
    REQUIRE(fs::exists(work() / "est_run/estimator.bin"));
    const auto best = load_history(work() / "est_run/history.jsonl").front();
    std::ofstream(work() / "small.json") << graph_to_json(best.graph).dump();
    const Output q = run("predict --estimator est_run/estimator.bin --graph small.json");
    REQUIRE(q.code == 0);
    const double v = nlohmann::json::parse(q.out)["prediction"].get<double>();
    CHECK(v > 0.0);
    CHECK(v < 1.0);
}

TEST_CASE("toy backend writes a training curve") {
    write(work() / "t.json", R"({"backend": "toy_qa", "max_trials": 4, "population_size": 3, "workers": 1,
        "estimator_enabled": false,
        "toy": {"data": {"n_examples": 20, "n_dev": 10}, "dims": {"hidden_d": 4, "embed_d": 4}, "train": {"epochs": 2}}})");
    const Output o = run("search --config t.json --out toy_run --quiet");
    REQUIRE(o.code == 0);
    const std::string csv = slurp(work() / "toy_run/training_curve.csv");
    CHECK(csv.rfind("trial_id,epoch,loss,dev_em\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 2);
}

TEST_CASE("errors are one JSON line naming the problem") {
    const Output a = run("search --bogus --out x");
    CHECK(a.code != 0);
    const auto ja = nlohmann::json::parse(last_line(a.err));
    CHECK(ja["error"] == "usage");
    CHECK(ja["message"].get<std::string>().find("--bogus") != std::string::npos);

    const Output b = run("replay missing.jsonl");
    CHECK(b.code != 0);
    CHECK(nlohmann::json::parse(last_line(b.err))["message"].get<std::string>().find("missing.jsonl") != std::string::npos);

    write(work() / "bad.json", R"({"max_trial": 3})");
    const Output c = run("search --config bad.json --out bad_run");
    CHECK(c.code != 0);
    const auto jc = nlohmann::json::parse(last_line(c.err));
    CHECK(jc["error"] == "schema");
    CHECK(jc["message"].get<std::string>().find("max_trial") != std::string::npos);

    CHECK(run("--help").code == 0);
    CHECK(run("ablate-estimator --help").out.find("--repeats") != std::string::npos);
}

TEST_CASE("ablate-init writes report and stable CSVs") {
    const Output o = run("ablate-init --repeats 2 --trials 40 --out abl");
    REQUIRE(o.code == 0);
    const auto brief = nlohmann::json::parse(o.out);
    CHECK(brief.contains("seeded_init"));
    const std::string csv = slurp(work() / "abl/random_init_convergence.csv");
    CHECK(csv.rfind("trials,best_fitness_median,q25,q75\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
    REQUIRE(run("ablate-init --repeats 2 --trials 40 --out abl").code == 0);
    CHECK(slurp(work() / "abl/random_init_convergence.csv") == csv);
}
