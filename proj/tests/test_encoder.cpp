#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "evoqa/encoder.hpp"
#include "evoqa/graph.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace evoqa;

namespace {

using Counts = std::array<int, kRelationKinds>;

Counts tensor_counts(const RelationTensor& t) {
    Counts c{};
    for (int x = 0; x < t.n(); ++x)
        for (int y = 0; y < t.n(); ++y) ++c[static_cast<int>(t.at(x, y))];
    return c;
}

// Counts derived from the edge list alone.
Counts edge_walk_counts(const ModelGraph& g, int n) {
    Counts c{};
    auto add = [&](RelationKind k) { ++c[static_cast<int>(k)]; };
    for (const Edge& e : g.edges()) {
        if (e.kind == EdgeKind::Skip) {
            add(RelationKind::SkipTo);
            add(RelationKind::SkipFrom);
            continue;
        }
        switch (g.kind(e.dst)) {
            case LayerKind::Lstm: add(RelationKind::InputOfLstm); add(RelationKind::OutputOfLstm); break;
            case LayerKind::Attention: add(RelationKind::InputOfAttention); add(RelationKind::OutputOfAttention); break;
            case LayerKind::Concat: add(RelationKind::InputOfConcat); add(RelationKind::OutputOfConcat); break;
            case LayerKind::Output: add(RelationKind::InputOfOutputLayer); add(RelationKind::OutputOfInputLayer); break;
            default: FAIL("edge into an input layer");
        }
    }
    const int used = g.size();
    c[static_cast<int>(RelationKind::Self)] = used;
    c[static_cast<int>(RelationKind::Padding)] = n * n - used * used;
    int related = 0;
    for (int k = 0; k < kRelationKinds; ++k) related += c[k];
    c[static_cast<int>(RelationKind::NoConnection)] = n * n - related;
    return c;
}

void check_round_trip(const ModelGraph& g, int n) {
    CHECK(oracles::tensor_invariants_hold(encode(g, n)));
    CHECK(oracles::round_trip_holds(g, n));
}

}  // namespace

TEST_CASE("minimal graph encoding") {
    RelationTensor t = encode(minimal_graph(), 50);
    CHECK(t.n() == 50);
    CHECK(t.n_used() == 3);
    Counts c = tensor_counts(t);
    CHECK(c[static_cast<int>(RelationKind::Self)] == 3);
    CHECK(c[static_cast<int>(RelationKind::InputOfOutputLayer)] == 2);
    CHECK(c[static_cast<int>(RelationKind::OutputOfInputLayer)] == 2);
    CHECK(c[static_cast<int>(RelationKind::NoConnection)] == 2);
    CHECK(c[static_cast<int>(RelationKind::Padding)] == 50 * 50 - 9);
    CHECK(t.at(0, 2) == RelationKind::InputOfOutputLayer);
    CHECK(t.at(2, 0) == RelationKind::OutputOfInputLayer);
    CHECK(t.at(0, 1) == RelationKind::NoConnection);
    CHECK(t.at(3, 3) == RelationKind::Padding);
}

TEST_CASE("encoding follows canonical order") {
    RandomSource rng(8);
    for (int i = 0; i < 200; ++i) {
        ModelGraph g = evoqa::testing::random_graph(rng);
        ModelGraph shuffled = evoqa::testing::random_relabel(g, rng);
        CHECK(encode(g) == encode(canonicalize(g)));
        CHECK(encode(shuffled) == encode(g));
    }
}

TEST_CASE("relation counts match an edge walk") {
    ModelGraph six = evoqa::testing::five_node_fixture();
    NodeId l = six.add_node(LayerKind::Lstm);
    six.remove_edge(1, 4);
    six.add_edge(1, l);
    six.add_edge(l, 4);
    REQUIRE(six.size() == 6);
    CHECK(tensor_counts(encode(six, 50)) == edge_walk_counts(six, 50));
    for (const auto& s : seed_models()) CHECK(tensor_counts(encode(s.graph)) == edge_walk_counts(s.graph, 50));
    RandomSource rng(4);
    for (int i = 0; i < 100; ++i) {
        ModelGraph g = evoqa::testing::random_graph(rng);
        CHECK(tensor_counts(encode(g)) == edge_walk_counts(g, g.n_max()));
    }
}

TEST_CASE("round trip on the seeds") {
    for (const auto& s : seed_models()) check_round_trip(s.graph, 50);
}

TEST_CASE("round trip on every graph with at most five nodes") {
    auto all = enumerate_searchable_graphs(5);
    CHECK(all.size() > 10);
    for (const ModelGraph& g : all) check_round_trip(g, 50);
    for (const ModelGraph& g : all) check_round_trip(g, 5);
}

TEST_CASE("round trip on 1,000 random mutated graphs") {
    RandomSource rng(77);
    for (int i = 0; i < 1000; ++i) check_round_trip(evoqa::testing::random_graph(rng, 20), 50);
}

TEST_CASE("graphs larger than the tensor are rejected") {
    ModelGraph g = seed_models()[1].graph;
    CHECK_THROWS_AS(encode(g, g.size() - 1), EncodingError);
    CHECK_NOTHROW(encode(g, g.size()));
}

TEST_CASE("mirror violations name the offending cell") {
    RelationTensor t = encode(minimal_graph(), 4);
    // Replace the graph with an inconsistent one: 1 feeds an LSTM at 2 but
    // the mirror cell says nothing.
    t.set(1, 2, RelationKind::InputOfLstm);
    t.set(2, 1, RelationKind::NoConnection);
    try {
        decode(t);
        FAIL("decode accepted an inconsistent tensor");
    } catch (const EncodingError& e) {
        CHECK(std::string(e.what()).find("(2,1)") != std::string::npos);
    }
}

TEST_CASE("padding and diagonal violations") {
    RelationTensor t = encode(minimal_graph(), 4);
    t.set(3, 0, RelationKind::NoConnection);
    CHECK_THROWS_AS(decode(t), EncodingError);
    RelationTensor d = encode(minimal_graph(), 4);
    d.set(1, 1, RelationKind::NoConnection);
    CHECK_THROWS_AS(decode(d), EncodingError);
}

TEST_CASE("binary tensor format") {
    ModelGraph g = seed_models()[0].graph;
    RelationTensor t = encode(g);
    std::vector<std::uint8_t> bytes = serialize_tensor(t);
    REQUIRE(bytes.size() == 12 + 50 * 50 * 13);
    auto le32 = [&](std::size_t at) {
        return static_cast<std::int32_t>(bytes[at] | bytes[at + 1] << 8 | bytes[at + 2] << 16 | bytes[at + 3] << 24);
    };
    CHECK(le32(0) == 50);
    CHECK(le32(4) == g.size());
    CHECK(le32(8) == 13);
    std::vector<std::uint8_t> payload(bytes.begin() + 12, bytes.end());
    CHECK(payload == t.one_hot());
    // Row-major (x, y, k): cell (0, 2) of BiDAF-like holds INPUT_OF_LSTM.
    CHECK(t.at(0, 2) == RelationKind::InputOfLstm);
    CHECK(payload[(0 * 50 + 2) * 13 + static_cast<int>(RelationKind::InputOfLstm)] == 1);

    auto path = std::filesystem::temp_directory_path() / "evoqa_tensor_test.bin";
    write_tensor(t, path);
    CHECK(read_tensor(path) == t);
    std::filesystem::remove(path);
}

TEST_CASE("one-hot bytes are validated on load") {
    RelationTensor t = encode(minimal_graph(), 3);
    std::vector<std::uint8_t> bytes = t.one_hot();
    CHECK(RelationTensor::from_one_hot(3, 3, 13, bytes) == t);
    bytes[5] ^= 1;
    CHECK_THROWS_AS(RelationTensor::from_one_hot(3, 3, 13, bytes), EncodingError);
}

TEST_CASE("channels-first view") {
    RelationTensor t = encode(minimal_graph(), 3);
    std::vector<double> cf = t.channels_first();
    REQUIRE(cf.size() == 13 * 9);
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y)
            for (int k = 0; k < 13; ++k)
                CHECK(cf[(k * 3 + x) * 3 + y] == (static_cast<int>(t.at(x, y)) == k ? 1.0 : 0.0));
}
