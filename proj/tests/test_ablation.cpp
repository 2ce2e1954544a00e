#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "evoqa/ablation.hpp"
#include "evoqa/errors.hpp"

using namespace evoqa;
namespace fs = std::filesystem;

namespace {

AblationConfig small(int trials = 60) {
    AblationConfig c;
    c.repeats = 3;
    c.base.max_trials = trials;
    c.base.seed = 11;
    c.base.estimator_fit.steps = 10;
    return c;
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("evoqa_ablation_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<TrialRecord> synthetic_history(const std::vector<double>& fitness) {
    std::vector<TrialRecord> h;
    for (std::size_t i = 0; i < fitness.size(); ++i) {
        TrialRecord r;
        r.trial_id = static_cast<int>(i);
        r.graph = minimal_graph();
        r.graph_hash = hash(r.graph);
        r.fitness = fitness[i];
        r.chosen_by = ChosenBy::Random;
        h.push_back(r);
    }
    return h;
}

// Known-model skeletons among the initial members.
int seed_models_present(const std::vector<TrialRecord>& h) {
    int n = 0;
    for (const auto& s : seed_models(20)) {
        n += std::any_of(h.begin(), h.end(), [&](const TrialRecord& t) { return t.chosen_by == ChosenBy::Seed && t.graph_hash == hash(s.graph); });
    }
    return n;
}

}  // namespace

TEST_CASE("arm statistics by hand") {
    const auto a = synthetic_history({0.1, 0.5, 0.3, 0.9});
    const auto b = synthetic_history({0.2, 0.2, 0.4, 0.4});
    const auto c = synthetic_history({0.6, 0.1, 0.1, 0.1});
    const ArmSummary s = summarize_arm("x", {a, b, c}, {1, 2, 3}, 0.5, 4);
    REQUIRE(s.runs.size() == 3);
    CHECK(s.runs[0].trials_to_threshold == 2);
    CHECK(s.runs[1].trials_to_threshold == 5);  // never reached: budget + 1
    CHECK_FALSE(s.runs[1].reached);
    CHECK(s.runs[2].trials_to_threshold == 1);
    CHECK(s.reached == 2);
    CHECK(s.trials_to_threshold_median == 2.0);
    CHECK(s.final_median == 0.6);
    // finals sorted 0.4 0.6 0.9; type 7 at 0.25 -> 0.4 + 0.5 * 0.2
    CHECK(s.final_q25 == doctest::Approx(0.5));
    CHECK(s.final_q75 == doctest::Approx(0.75));
    // running bests at trial 2: 0.5, 0.2, 0.6
    CHECK(s.best_median[1] == 0.5);
    CHECK(s.best_q25[1] == doctest::Approx(0.35));
    CHECK(s.best_q75[1] == doctest::Approx(0.55));
    const std::string csv = convergence_csv(s);
    CHECK(csv.rfind("trials,best_fitness_median,q25,q75\n1,0.200000,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("init ablation: budgets, pairing and replay equality") {
    AblationConfig c = small();
    c.out_dir = scratch("init");
    const AblationReport report = ablate_init(c);
    REQUIRE(report.arms.size() == 2);
    CHECK(report.arms[0].name == "seeded_init");
    CHECK(report.arms[1].name == "random_init");
    CHECK(report.threshold == doctest::Approx(0.95 * brute_force_optimum(OracleSpec{}).fitness));
    for (int a = 0; a < 2; ++a) {
        REQUIRE(report.arms[a].runs.size() == 3);
        for (int r = 0; r < 3; ++r) {
            CHECK(report.arms[a].runs[r].trials == 60);
            CHECK(report.arms[a].runs[r].seed == report.arms[0].runs[r].seed);
            const auto h = load_history(c.out_dir / report.arms[a].name / ("repeat_" + std::to_string(r) + ".jsonl"));
            CHECK(h.size() == 60);
            CHECK(seed_models_present(h) == (a == 0 ? 3 : 0));
        }
    }
    const AblationReport again = recompute_report(c.out_dir);
    CHECK(report_to_json(again) == report_to_json(report));
    for (const ArmSummary& arm : again.arms) CHECK(convergence_csv(arm) == slurp(c.out_dir / (arm.name + "_convergence.csv")));

    // Rewriting from the same directory is byte-identical.
    const std::string before = slurp(c.out_dir / "random_init_convergence.csv");
    write_report(again, c.out_dir);
    CHECK(slurp(c.out_dir / "random_init_convergence.csv") == before);
    fs::remove_all(c.out_dir);
}

TEST_CASE("estimator ablation uses random init in both arms") {
    AblationConfig c = small(50);
    c.repeats = 2;
    c.base.population_size = 8;
    c.base.estimator_update_frequency = 10;
    c.out_dir = scratch("est");
    const AblationReport report = ablate_estimator(c);
    CHECK(report.arms[0].name == "estimator_on");
    for (int a = 0; a < 2; ++a) {
        for (int r = 0; r < 2; ++r) {
            const auto h = load_history(c.out_dir / report.arms[a].name / ("repeat_" + std::to_string(r) + ".jsonl"));
            CHECK(h.size() == 50);
            int by_estimator = 0;
            for (const auto& t : h) by_estimator += t.chosen_by == ChosenBy::Estimator;
            CHECK(seed_models_present(h) == 0);
            CHECK((by_estimator > 0) == (a == 0));
        }
    }
    fs::remove_all(c.out_dir);
}

TEST_CASE("parallel repeats give the same report") {
    AblationConfig c = small(40);
    const AblationReport serial = ablate_init(c);
    c.parallel_repeats = true;
    const AblationReport parallel = ablate_init(c);
    CHECK(report_to_json(serial) == report_to_json(parallel));
}

TEST_CASE("ablation config validation") {
    AblationConfig c = small();
    c.repeats = 1;
    CHECK_THROWS_AS(validate_ablation(c), ConfigError);
    c = small();
    c.base.backend = Backend::ToyQa;
    CHECK_THROWS_AS(validate_ablation(c), ConfigError);
    c = small();
    c.threshold_fraction = 1.5;
    CHECK_THROWS_AS(validate_ablation(c), ConfigError);
    CHECK_THROWS_AS(recompute_report(scratch("missing")), IoError);
    CHECK_THROWS_AS(report_from_json({{"kind", "other"}}), SchemaError);
}

TEST_CASE("ablation config JSON") {
    AblationConfig c;
    c.repeats = 7;
    c.threshold_fraction = 0.9;
    c.base.max_trials = 123;
    const AblationConfig back = ablation_config_from_json(ablation_config_to_json(c));
    CHECK(ablation_config_to_json(back) == ablation_config_to_json(c));
    const AblationConfig partial = ablation_config_from_json({{"experiment", {{"max_trials", 50}}}});
    CHECK(partial.base.max_trials == 50);
    CHECK(partial.base.n_max == 20);
    CHECK(partial.base.workers == 1);
    CHECK(partial.repeats == 20);
    CHECK_THROWS_AS(ablation_config_from_json({{"repeat", 3}}), SchemaError);
    CHECK_THROWS_AS(ablation_config_from_json({{"experiment", {{"max_trial", 3}}}}), SchemaError);
}
