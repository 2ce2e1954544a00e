#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "evoqa/errors.hpp"
#include "evoqa/mutation.hpp"
#include "evoqa/oracle.hpp"
#include "test_support.hpp"

using namespace evoqa;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Longest chain of LSTM/attention nodes, by plain DFS over all paths.
int dfs_depth(const ModelGraph& g, NodeId id) {
    const bool counts = g.kind(id) == LayerKind::Lstm || g.kind(id) == LayerKind::Attention;
    int best = 0;
    for (const Edge& e : g.edges()) {
        if (e.src == id) best = std::max(best, dfs_depth(g, e.dst));
    }
    return best + (counts ? 1 : 0);
}

int brute_depth(const ModelGraph& g) {
    int d = 0;
    for (const auto& [id, kind] : g.nodes()) d = std::max(d, dfs_depth(g, id));
    return d;
}

}  // namespace

TEST_CASE("minimal graph scores sigmoid of the bias") {
    const OracleSpec spec;
    const GraphFeatures f = graph_features(minimal_graph());
    CHECK(f == GraphFeatures{});
    CHECK(oracle_evaluate(spec, minimal_graph()) == doctest::Approx(1.0 / (1.0 + std::exp(3.0))).epsilon(1e-15));
}

TEST_CASE("features match hand counts and a path-walking depth") {
    const auto seeds = seed_models();
    for (const auto& s : seeds) {
        const GraphFeatures f = graph_features(s.graph);
        CHECK(f.depth == brute_depth(s.graph));
        int adj = 0;
        for (const Edge& e : s.graph.edges()) {
            adj += e.kind == EdgeKind::Data && s.graph.kind(e.src) == LayerKind::Lstm && s.graph.kind(e.dst) == LayerKind::Attention;
        }
        CHECK(f.attention_after_rnn == adj);
    }
    RandomSource rng(5);
    for (int i = 0; i < 200; ++i) {
        const ModelGraph g = multiple_mutate(seeds[i % 3].graph, 10, rng);
        CHECK(graph_features(g).depth == brute_depth(g));
    }
}

TEST_CASE("score is the capped weighted sum") {
    OracleSpec spec;
    const auto seeds = seed_models();
    for (const auto& s : seeds) {
        const GraphFeatures f = graph_features(s.graph);
        const double expect = -3.0 + 0.5 * std::min(f.lstm, 2) + 0.8 * std::min(f.attention, 1) + 0.05 * std::min(f.concat, 1) +
                              0.4 * std::min(f.skip, 1) + 0.9 * std::min(f.attention_after_rnn, 2) - 0.3 * f.depth;
        CHECK(oracle_score(spec, s.graph) == doctest::Approx(expect).epsilon(1e-14));
        CHECK(oracle_evaluate(spec, s.graph) == doctest::Approx(sigmoid(expect)).epsilon(1e-14));
    }
}

TEST_CASE("attention insertion below saturation never lowers fitness") {
    const OracleSpec spec;
    std::vector<ModelGraph> bases;
    for (const auto& s : seed_models()) bases.push_back(s.graph);
    bases.push_back(minimal_graph());
    for (ModelGraph& g : enumerate_searchable_graphs(6)) bases.push_back(std::move(g));

    int below = 0;
    int successors = 0;
    for (const ModelGraph& g : bases) {
        const bool saturated = graph_features(g).attention >= spec.attention.cap;
        const double before = oracle_evaluate(spec, g);
        for (const MutationAction& a : enumerate_candidates(g)) {
            if (a.tag != MutationTag::InsertAttentionLayer) continue;
            ++successors;
            if (saturated) continue;
            ++below;
            CHECK(oracle_evaluate(spec, apply(a, g)) >= before);
        }
    }
    MESSAGE("insertions checked below saturation: " << below << " of " << successors);
    CHECK(below > 0);
}

TEST_CASE("six-node optimum by exhaustive enumeration") {
    const OracleSpec spec;
    const OracleOptimum opt = brute_force_optimum(spec, 6);
    const auto all = enumerate_searchable_graphs(6);
    REQUIRE(opt.graphs_searched == all.size());
    double best = 0.0;
    for (const ModelGraph& g : all) best = std::max(best, oracle_evaluate(spec, g));
    CHECK(opt.fitness == best);
    CHECK(oracle_evaluate(spec, opt.graph) == opt.fitness);
    CHECK(opt.graph.size() <= 6);
    // Interior optimum: better than every seed and than the minimal graph.
    for (const auto& s : seed_models()) CHECK(oracle_evaluate(spec, s.graph) < opt.fitness);
    CHECK(oracle_evaluate(spec, minimal_graph()) < opt.fitness);
    MESSAGE("optimum " << opt.fitness << " over " << opt.graphs_searched << " graphs");
}

TEST_CASE("fitness is in (0,1) and pure") {
    const OracleSpec spec;
    RandomSource rng(1);
    const ModelGraph g = multiple_mutate(seed_models()[0].graph, 20, rng);
    std::set<double> values;
    for (int i = 0; i < 10000; ++i) values.insert(oracle_evaluate(spec, g));
    CHECK(values.size() == 1);
    CHECK(*values.begin() > 0.0);
    CHECK(*values.begin() < 1.0);
}

TEST_CASE("noise is fixed per graph and seed") {
    OracleSpec spec;
    spec.noise_stddev = 0.5;
    spec.noise_seed = 3;
    RandomSource rng(2);
    const ModelGraph g = seed_models()[1].graph;
    const double a = oracle_evaluate(spec, g);
    CHECK(oracle_evaluate(spec, testing::random_relabel(g, rng)) == a);
    spec.noise_seed = 4;
    CHECK(oracle_evaluate(spec, g) != a);
}

TEST_CASE("oracle settings JSON round trip and strictness") {
    OracleSpec spec;
    spec.bias = -1.25;
    spec.skip = {0.7, 3};
    spec.noise_stddev = 0.1;
    spec.noise_seed = 99;
    const OracleSpec back = oracle_spec_from_json(oracle_spec_to_json(spec));
    CHECK(oracle_spec_to_json(back) == oracle_spec_to_json(spec));
    CHECK(oracle_spec_from_json(nlohmann::json::object()).bias == -3.0);
    CHECK_THROWS_AS(oracle_spec_from_json({{"biass", 1.0}}), SchemaError);
    CHECK_THROWS_AS(oracle_spec_from_json({{"lstm", {{"weight", 1.0}, {"cap", -1}}}}), SchemaError);
    CHECK_THROWS_AS(oracle_spec_from_json({{"noise_stddev", -0.5}}), SchemaError);
}
