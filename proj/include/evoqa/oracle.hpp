#pragma once

#include <cstdint>

#include <json.hpp>

#include "evoqa/graph.hpp"

namespace evoqa {

/// Structural counts the synthetic fitness is built from.
struct GraphFeatures {
    int lstm = 0;
    int attention = 0;
    int concat = 0;
    int skip = 0;
    /// DATA edges from an LSTM into an attention layer.
    int attention_after_rnn = 0;
    /// LSTM and attention layers on the longest input-to-output path;
    /// concat is a join and does not add depth.
    int depth = 0;

    bool operator==(const GraphFeatures&) const = default;
};

GraphFeatures graph_features(const ModelGraph& graph);

struct FeatureTerm {
    double weight = 0.0;
    /// Counts above this contribute nothing more.
    int cap = 0;
};

/// fitness = sigmoid(bias + sum_f weight_f * min(count_f, cap_f)
///                   - depth_penalty * depth + noise)
struct OracleSpec {
    double bias = -3.0;
    FeatureTerm lstm{0.5, 2};
    FeatureTerm attention{0.8, 1};
    FeatureTerm concat{0.05, 1};
    FeatureTerm skip{0.4, 1};
    FeatureTerm attention_after_rnn{0.9, 2};
    double depth_penalty = 0.3;
    /// Per-graph Gaussian offset on the score, fixed by (graph hash, seed).
    double noise_stddev = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Pre-sigmoid score.
double oracle_score(const OracleSpec& spec, const ModelGraph& graph);
double oracle_evaluate(const OracleSpec& spec, const ModelGraph& graph);

struct OracleOptimum {
    ModelGraph graph;
    double fitness = 0.0;
    std::size_t graphs_searched = 0;
};

/// Exhaustive maximum over every searchable graph with at most max_nodes
/// nodes. Ties go to the first graph in canonical-hash order.
OracleOptimum brute_force_optimum(const OracleSpec& spec, int max_nodes = 6);

nlohmann::json oracle_spec_to_json(const OracleSpec& spec);
/// Missing fields keep their defaults; unknown fields are rejected.
OracleSpec oracle_spec_from_json(const nlohmann::json& doc);

}  // namespace evoqa
