#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "evoqa/errors.hpp"
#include "evoqa/evolution.hpp"
#include "test_support.hpp"

using namespace evoqa;

namespace {

ExperimentConfig small_config(std::uint64_t seed = 7) {
    ExperimentConfig c;
    c.population_size = 8;
    c.n_max = 20;
    c.workers = 1;
    c.max_trials = 100;
    c.estimator_enabled = false;
    c.seeded_init = true;
    c.seed = seed;
    c.estimator.n = 20;
    c.estimator.channels = 4;
    c.estimator.stages = 1;
    c.estimator.blocks_per_stage = 1;
    c.estimator_fit.steps = 10;
    c.estimator_fit.batch_size = 8;
    return c;
}

class ConstantEvaluator : public Evaluator {
public:
    explicit ConstantEvaluator(double v) : v_(v) {}
    Evaluation evaluate(const ModelGraph&) const override { return {v_, {}}; }
    std::string description() const override { return "constant"; }

private:
    double v_;
};

// Fails on every graph with a concat node.
class FlakyEvaluator : public Evaluator {
public:
    Evaluation evaluate(const ModelGraph& g) const override {
        if (g.count(LayerKind::Concat) > 0) throw std::runtime_error("simulated training crash");
        return {oracle_evaluate(OracleSpec{}, g), {}};
    }
    std::string description() const override { return "flaky"; }
};

std::vector<ModelGraph> seed_graphs(int n_max) {
    std::vector<ModelGraph> out;
    for (const auto& s : seed_models(n_max)) out.push_back(s.graph);
    return out;
}

bool same_history(const std::vector<TrialRecord>& a, const std::vector<TrialRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same_trial(a[i], b[i])) return false;
    return true;
}

std::filesystem::path scratch_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("seeded initialization keeps every seed and fills the rest by bursts") {
    ExperimentConfig c = small_config();
    c.population_size = 32;
    OracleEvaluator ev;
    RandomSource rng(1);
    std::vector<TrialRecord> history;
    const auto seeds = seed_graphs(c.n_max);
    Population pop = initialize_population(c, seeds, rng, ev, history);
    REQUIRE(pop.members.size() == 32);
    REQUIRE(history.size() == 32);
    for (std::size_t i = 0; i < seeds.size(); ++i) CHECK(history[i].graph == seeds[i]);
    int mutated = 0;
    for (const TrialRecord& r : history) {
        CHECK(r.chosen_by == ChosenBy::Seed);
        CHECK_FALSE(r.parent_id);
        CHECK_FALSE(r.action);
        CHECK(is_searchable(r.graph));
        CHECK(r.graph.size() <= c.n_max);
        CHECK(r.fitness == oracle_evaluate(OracleSpec{}, r.graph));
        if (r.trial_id >= 3) ++mutated;
    }
    CHECK(mutated == 29);
}

TEST_CASE("population of three is exactly the seeds") {
    ExperimentConfig c = small_config();
    c.population_size = 3;
    RandomSource rng(2);
    const auto graphs = initial_graphs(c, seed_graphs(c.n_max), rng);
    CHECK(graphs == seed_graphs(c.n_max));
    c.population_size = 2;
    CHECK_THROWS_AS(initial_graphs(c, seed_graphs(c.n_max), rng), ConfigError);
}

TEST_CASE("random initialization is reproducible") {
    ExperimentConfig c = small_config();
    c.seeded_init = false;
    c.population_size = 8;
    RandomSource a(3), b(3);
    const auto ga = initial_graphs(c, {}, a);
    const auto gb = initial_graphs(c, {}, b);
    CHECK(ga == gb);
    CHECK(ga.size() == 8);
    for (const auto& g : ga) CHECK(is_searchable(g));
}

TEST_CASE("tournament deletes the worse member and mutates the better") {
    ExperimentConfig c = small_config();
    Population pop;
    pop.capacity = 2;
    pop.members = {{0, seed_graphs(c.n_max)[0], 0.9}, {1, seed_graphs(c.n_max)[1], 0.1}};
    std::vector<TrialRecord> history(2);
    history[0].trial_id = 0;
    history[1].trial_id = 1;
    ConstantEvaluator ev(0.5);
    for (std::uint64_t s = 0; s < 10; ++s) {
        Population p = pop;
        std::vector<TrialRecord> h = history;
        RandomSource rng(s);
        TrialRecord r = tournament_step(p, h, nullptr, c, rng, ev);
        CHECK(r.parent_id == 0);
        CHECK(r.trial_id == 2);
        CHECK(r.chosen_by == ChosenBy::Random);
        CHECK(p.members.size() == 2);
        CHECK(p.contains(0));
        CHECK_FALSE(p.contains(1));
        CHECK(canonicalize(apply(*r.action, pop.members[0].graph)) == canonicalize(r.graph));
    }
}

TEST_CASE("fitness ties delete the newer member") {
    Population pop;
    pop.capacity = 2;
    pop.members = {{4, minimal_graph(), 0.5}, {9, minimal_graph(), 0.5}};
    for (std::uint64_t s = 0; s < 20; ++s) {
        RandomSource rng(s);
        Pairing p = sample_pair(pop, rng);
        CHECK(p.survivor.trial_id == 4);
        CHECK(p.loser_id == 9);
    }
}

TEST_CASE("sampled pairs are distinct and uniform") {
    Population pop;
    pop.capacity = 4;
    for (int i = 0; i < 4; ++i) pop.members.push_back({i, minimal_graph(), 0.1 * i});
    std::map<int, int> losers;
    RandomSource rng(5);
    const int n = 12000;
    for (int i = 0; i < n; ++i) {
        Pairing p = sample_pair(pop, rng);
        CHECK(p.survivor.trial_id != p.loser_id);
        ++losers[p.loser_id];
    }
    // Member k loses to every higher-fitness member: P(lose) = (3 - k) / 6.
    for (int k = 0; k < 4; ++k) CHECK(losers[k] / static_cast<double>(n) == doctest::Approx((3 - k) / 6.0).epsilon(0.05));
}

TEST_CASE("estimator-off searches never consult the estimator") {
    ExperimentConfig c = small_config();
    c.seeded_init = false;
    SearchResult r = run_search(c, OracleEvaluator{});
    for (const TrialRecord& t : r.history)
        if (t.trial_id >= c.population_size) CHECK(t.chosen_by == ChosenBy::Random);
    CHECK(r.estimator_refits == 0);
}

TEST_CASE("estimator always wins once the schedule saturates") {
    ExperimentConfig c = small_config();
    c.estimator_enabled = true;
    c.epoch_max = 1;
    c.max_trials = 30;
    SearchResult r = run_search(c, OracleEvaluator{});
    for (const TrialRecord& t : r.history) {
        if (t.trial_id < c.population_size) continue;
        CHECK(t.chosen_by == ChosenBy::Estimator);
        CHECK(t.action->tag != MutationTag::Identity);
    }
    CHECK(r.estimator_refits == 30 / c.estimator_update_frequency);
    CHECK(audit_history(r.history).ok());
}

TEST_CASE("estimator candidate pool") {
    RandomSource rng(8);
    const ModelGraph parent = seed_graphs(50)[1];
    const auto all = enumerate_candidates(parent);
    const auto pool = estimator_candidates(parent, 1000, rng);
    CHECK(pool.size() == all.size() - 1);
    const auto capped = estimator_candidates(parent, 5, rng);
    REQUIRE(capped.size() == 5);
    for (const auto& m : capped) {
        CHECK(m.action.tag != MutationTag::Identity);
        CHECK(m.graph == apply(m.action, parent));
    }
}

TEST_CASE("search of only the initial population") {
    ExperimentConfig c = small_config();
    c.max_trials = c.population_size;
    SearchResult r = run_search(c, OracleEvaluator{});
    REQUIRE(r.history.size() == static_cast<std::size_t>(c.population_size));
    double best = 0.0;
    for (const auto& t : r.history) best = std::max(best, t.fitness);
    CHECK(r.best.fitness == best);
}

TEST_CASE("single-worker searches are reproducible") {
    ExperimentConfig c = small_config(7);
    SearchResult a = run_search(c, OracleEvaluator{});
    SearchResult b = run_search(c, OracleEvaluator{});
    CHECK(same_history(a.history, b.history));
    c.seed = 8;
    SearchResult d = run_search(c, OracleEvaluator{});
    CHECK_FALSE(same_history(a.history, d.history));

    c = small_config(7);
    c.estimator_enabled = true;
    c.max_trials = 40;
    SearchResult e1 = run_search(c, OracleEvaluator{});
    SearchResult e2 = run_search(c, OracleEvaluator{});
    CHECK(same_history(e1.history, e2.history));
}

TEST_CASE("running best is non-decreasing and ends at the reported best") {
    SearchResult r = run_search(small_config(), OracleEvaluator{});
    ReplayResult rp = replay(r.history);
    for (std::size_t i = 1; i < rp.running_best.size(); ++i) CHECK(rp.running_best[i] >= rp.running_best[i - 1]);
    CHECK(rp.best_trial_id == r.best.trial_id);
    CHECK(rp.running_best.back() == r.best.fitness);
}

TEST_CASE("engine invariants hold at every step") {
    for (int workers : {1, 8}) {
        CAPTURE(workers);
        ExperimentConfig c = small_config(11);
        c.workers = workers;
        c.max_trials = 120;
        c.estimator_enabled = workers == 8;
        std::atomic<int> bad_sizes{0};
        SearchObserver obs;
        obs.on_trial = [&](const TrialRecord&, const Population& p) {
            if (p.members.size() != static_cast<std::size_t>(c.population_size)) ++bad_sizes;
        };
        SearchResult r = run_search(c, OracleEvaluator{}, obs);
        CHECK(bad_sizes == 0);
        REQUIRE(r.history.size() == 120);
        for (int i = 0; i < 120; ++i) CHECK(r.history[i].trial_id == i);
        AuditReport audit = audit_history(r.history);
        CHECK_MESSAGE(audit.ok(), (audit.ok() ? "" : audit.problems.front()));
    }
}

TEST_CASE("audit catches a forged lineage") {
    SearchResult r = run_search(small_config(), OracleEvaluator{});
    auto forged = r.history;
    auto it = std::find_if(forged.begin(), forged.end(),
                           [](const TrialRecord& t) { return t.action && t.action->tag != MutationTag::Identity; });
    REQUIRE(it != forged.end());
    it->graph = minimal_graph(20);
    it->graph_hash = hash(it->graph);
    CHECK_FALSE(audit_history(forged).ok());
    forged = r.history;
    forged.pop_back();
    forged.erase(forged.begin() + 10);
    CHECK_FALSE(audit_history(forged).ok());
}

TEST_CASE("failed evaluations score zero and the search continues") {
    ExperimentConfig c = small_config(5);
    std::vector<std::string> logged;
    SearchObserver obs;
    obs.log = [&](const std::string& s) { logged.push_back(s); };
    SearchResult r = run_search(c, FlakyEvaluator{}, obs);
    CHECK(r.history.size() == 100);
    int failed = 0;
    for (const auto& t : r.history) {
        if (t.graph.count(LayerKind::Concat) > 0) {
            ++failed;
            CHECK(t.fitness == 0.0);
            REQUIRE(t.error);
            CHECK(t.error->find("simulated") != std::string::npos);
        } else {
            CHECK_FALSE(t.error);
        }
    }
    CHECK(failed > 0);
    CHECK(logged.size() == static_cast<std::size_t>(failed));
}

TEST_CASE("history file round trip and crash recovery") {
    const auto dir = scratch_dir("evoqa_test_history");
    ExperimentConfig c = small_config();
    c.max_trials = 10;
    SearchResult r = run_search(c, OracleEvaluator{});
    {
        HistoryWriter w(dir / "h.jsonl");
        for (const auto& t : r.history) w.append(t);
    }
    std::vector<std::string> warnings;
    auto back = load_history(dir / "h.jsonl", &warnings);
    CHECK(warnings.empty());
    REQUIRE(back.size() == 10);
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(same_trial(back[i], r.history[i]));
        CHECK(back[i].wall_time == r.history[i].wall_time);
    }
    CHECK(replay(back).best_trial_id == r.best.trial_id);

    const auto size = std::filesystem::file_size(dir / "h.jsonl");
    std::filesystem::resize_file(dir / "h.jsonl", size - 40);
    back = load_history(dir / "h.jsonl", &warnings);
    CHECK(back.size() == 9);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("truncated") != std::string::npos);

    std::string text = read_text_file(dir / "h.jsonl");
    const auto third = text.find('\n', text.find('\n') + 1);
    text.insert(third + 1, "{not json}\n");
    {
        std::ofstream out(dir / "bad.jsonl");
        out << text;
    }
    try {
        load_history(dir / "bad.jsonl");
        FAIL("corrupt line accepted");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(load_history(dir / "missing.jsonl"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("trial records use the documented field names") {
    SearchResult r = run_search(small_config(), OracleEvaluator{});
    const nlohmann::json j = trial_to_json(r.history.back());
    std::set<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.insert(k);
    CHECK(keys == std::set<std::string>{"trial_id", "parent_id", "action", "chosen_by", "graph", "graph_hash", "fitness", "wall_time"});
    CHECK(trial_to_json(r.history.front())["parent_id"].is_null());
    nlohmann::json extra = j;
    extra["surprise"] = 1;
    CHECK_THROWS_AS(trial_from_json(extra), SchemaError);
    nlohmann::json missing = j;
    missing.erase("fitness");
    CHECK_THROWS_AS(trial_from_json(missing), SchemaError);
}

TEST_CASE("experiment config JSON") {
    ExperimentConfig c = small_config();
    c.backend = Backend::ToyQa;
    c.oracle.bias = -1.25;
    c.toy.train.epochs = 3;
    ExperimentConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));

    ExperimentConfig defaults = config_from_json(nlohmann::json::object());
    CHECK(defaults.population_size == 32);
    CHECK(defaults.n_max == 50);
    CHECK(defaults.workers == 8);
    CHECK(defaults.max_trials == 500);
    CHECK(defaults.epoch_max == 100);
    CHECK(defaults.estimator_update_frequency == 25);
    CHECK(defaults.mutation_burst == 20);
    CHECK(defaults.candidate_cap == 64);

    CHECK_THROWS_AS(config_from_json({{"populaton_size", 4}}), SchemaError);
    CHECK_THROWS_AS(config_from_json({{"workers", "eight"}}), SchemaError);
    CHECK_THROWS_AS(config_from_json({{"estimator", {{"depth", 3}}}}), SchemaError);
    CHECK_THROWS_AS(config_from_json({{"workers", 0}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"max_trials", 4}, {"workers", 8}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"max_trials", 10}, {"population_size", 20}, {"workers", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"backend", "gpu"}}), SchemaError);
    ExperimentConfig small_est = small_config();
    small_est.estimator_enabled = true;
    small_est.estimator.n = 10;
    CHECK_THROWS_AS(validate_config(small_est), ConfigError);
}

TEST_CASE("toy QA backend trains the compiled graph") {
    ToyQaConfig t;
    t.data.n_examples = 40;
    t.data.n_dev = 20;
    t.train.epochs = 2;
    ToyQaEvaluator ev(t);
    Evaluation e = ev.evaluate(seed_graphs(50)[0]);
    CHECK(e.fitness >= 0.0);
    CHECK(e.fitness <= 1.0);
    REQUIRE(e.curve.size() == 2);
    CHECK(e.curve.back().dev_em == e.fitness);
    CHECK(ev.evaluate(seed_graphs(50)[0]).fitness == e.fitness);
}
