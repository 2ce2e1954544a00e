#include "evoqa/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "evoqa/errors.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

namespace {

bool sequential(LayerKind k) { return k == LayerKind::Lstm || k == LayerKind::Attention; }

double term(const FeatureTerm& t, int count) { return t.weight * std::min(count, t.cap); }

nlohmann::json term_json(const FeatureTerm& t) { return {{"weight", t.weight}, {"cap", t.cap}}; }

FeatureTerm term_from_json(const nlohmann::json& doc, const std::string& name, FeatureTerm t) {
    if (!doc.is_object()) throw SchemaError("oracle." + name + ": expected an object");
    for (const auto& [key, value] : doc.items()) {
        if (key == "weight") {
            if (!value.is_number()) throw SchemaError("oracle." + name + ".weight: expected a number");
            t.weight = value.get<double>();
        } else if (key == "cap") {
            if (!value.is_number_integer() || value.get<int>() < 0) throw SchemaError("oracle." + name + ".cap: expected a non-negative integer");
            t.cap = value.get<int>();
        } else {
            throw SchemaError("oracle." + name + ": unknown field " + key);
        }
    }
    return t;
}

}  // namespace

GraphFeatures graph_features(const ModelGraph& graph) {
    GraphFeatures f;
    f.lstm = graph.count(LayerKind::Lstm);
    f.attention = graph.count(LayerKind::Attention);
    f.concat = graph.count(LayerKind::Concat);
    f.skip = graph.count(EdgeKind::Skip);
    for (const Edge& e : graph.edges()) {
        if (e.kind == EdgeKind::Data && graph.kind(e.src) == LayerKind::Lstm && graph.kind(e.dst) == LayerKind::Attention) {
            ++f.attention_after_rnn;
        }
    }
    auto order = topological_order(graph);
    if (!order) throw GraphError("oracle: graph has a cycle");
    std::map<NodeId, int> depth;
    for (NodeId id : *order) {
        int d = 0;
        for (EdgeKind k : {EdgeKind::Data, EdgeKind::Skip}) {
            for (NodeId p : graph.predecessors(id, k)) d = std::max(d, depth[p]);
        }
        depth[id] = d + (sequential(graph.kind(id)) ? 1 : 0);
        f.depth = std::max(f.depth, depth[id]);
    }
    return f;
}

double oracle_score(const OracleSpec& spec, const ModelGraph& graph) {
    const GraphFeatures f = graph_features(graph);
    double s = spec.bias + term(spec.lstm, f.lstm) + term(spec.attention, f.attention) + term(spec.concat, f.concat) +
               term(spec.skip, f.skip) + term(spec.attention_after_rnn, f.attention_after_rnn) - spec.depth_penalty * f.depth;
    if (spec.noise_stddev > 0.0) {
        RandomSource rng(RandomSource::split(hash(graph) ^ RandomSource::split(spec.noise_seed)));
        s += spec.noise_stddev * rng.normal();
    }
    return s;
}

double oracle_evaluate(const OracleSpec& spec, const ModelGraph& graph) {
    const double s = oracle_score(spec, graph);
    return 1.0 / (1.0 + std::exp(-s));
}

OracleOptimum brute_force_optimum(const OracleSpec& spec, int max_nodes) {
    OracleOptimum best;
    best.fitness = -1.0;
    for (const ModelGraph& g : enumerate_searchable_graphs(max_nodes)) {
        ++best.graphs_searched;
        const double f = oracle_evaluate(spec, g);
        if (f > best.fitness) {
            best.fitness = f;
            best.graph = g;
        }
    }
    return best;
}

nlohmann::json oracle_spec_to_json(const OracleSpec& spec) {
    return {{"bias", spec.bias},
            {"lstm", term_json(spec.lstm)},
            {"attention", term_json(spec.attention)},
            {"concat", term_json(spec.concat)},
            {"skip", term_json(spec.skip)},
            {"attention_after_rnn", term_json(spec.attention_after_rnn)},
            {"depth_penalty", spec.depth_penalty},
            {"noise_stddev", spec.noise_stddev},
            {"noise_seed", spec.noise_seed}};
}

OracleSpec oracle_spec_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("oracle: expected an object");
    OracleSpec s;
    const std::map<std::string, FeatureTerm*> terms = {{"lstm", &s.lstm},
                                                         {"attention", &s.attention},
                                                         {"concat", &s.concat},
                                                         {"skip", &s.skip},
                                                         {"attention_after_rnn", &s.attention_after_rnn}};
    for (const auto& [key, value] : doc.items()) {
        if (auto it = terms.find(key); it != terms.end()) {
            *it->second = term_from_json(value, key, *it->second);
        } else if (key == "bias" || key == "depth_penalty" || key == "noise_stddev") {
            if (!value.is_number()) throw SchemaError("oracle." + key + ": expected a number");
            const double v = value.get<double>();
            if (key == "bias") s.bias = v;
            if (key == "depth_penalty") s.depth_penalty = v;
            if (key == "noise_stddev") {
                if (v < 0.0) throw SchemaError("oracle.noise_stddev: must be non-negative");
                s.noise_stddev = v;
            }
        } else if (key == "noise_seed") {
            if (!value.is_number_unsigned()) throw SchemaError("oracle.noise_seed: expected a non-negative integer");
            s.noise_seed = value.get<std::uint64_t>();
        } else {
            throw SchemaError("oracle: unknown field " + key);
        }
    }
    return s;
}

}  // namespace evoqa
