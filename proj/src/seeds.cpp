#include <functional>

#include "evoqa/graph.hpp"
#include "evoqa/graph_io.hpp"
#include "seed_fixtures.inc"

namespace evoqa {

std::vector<NamedGraph> seed_models(int n_max) {
    std::vector<NamedGraph> seeds;
    for (const auto& [name, text] : kSeedFixtures) {
        ModelGraph g = graph_from_json(nlohmann::json::parse(text));
        g.set_n_max(n_max);
        if (auto report = validate(g); !report.ok()) {
            throw GraphError("seed '" + std::string(name) + "' does not fit: " + report.summary());
        }
        seeds.push_back(NamedGraph{std::string(name), std::move(g)});
    }
    return seeds;
}

std::vector<ModelGraph> enumerate_searchable_graphs(int max_nodes, int n_max) {
    // Every DAG admits a numbering with inputs first, output last and the
    // internal nodes topologically ordered, so choosing each internal
    // node's predecessors among lower indices covers all structures.
    std::map<GraphHash, ModelGraph> found;
    constexpr LayerKind kInternal[] = {LayerKind::Lstm, LayerKind::Attention, LayerKind::Concat};

    auto record = [&](const ModelGraph& g) {
        if (!is_searchable(g)) return;
        ModelGraph c = canonicalize(g);
        GraphHash h = hash_canonical(c);
        auto [it, inserted] = found.emplace(h, c);
        if (!inserted && !(it->second == c)) throw GraphError("hash collision during graph enumeration");
    };

    auto add_skips = [&](ModelGraph g) {
        std::vector<Edge> eligible;
        for (const auto& [a, ka] : g.nodes()) {
            for (const auto& [b, kb] : g.nodes()) {
                if (a == b || kb == LayerKind::Output || kb == LayerKind::InputDoc || kb == LayerKind::InputQ) continue;
                if (g.has_edge(a, b, EdgeKind::Data)) continue;
                ModelGraph probe = g;
                probe.add_edge(a, b, EdgeKind::Skip);
                if (is_searchable(probe)) eligible.push_back(Edge{a, b, EdgeKind::Skip});
            }
        }
        // Skip legality depends only on data paths, so any subset of the
        // individually legal skips is legal.
        const std::size_t subsets = std::size_t{1} << eligible.size();
        for (std::size_t mask = 0; mask < subsets; ++mask) {
            ModelGraph h = g;
            for (std::size_t i = 0; i < eligible.size(); ++i) {
                if (mask & (std::size_t{1} << i)) h.add_edge(eligible[i].src, eligible[i].dst, EdgeKind::Skip);
            }
            record(h);
        }
    };

    std::function<void(ModelGraph&, int, int)> grow = [&](ModelGraph& g, int next, int internal_total) {
        if (next == 2 + internal_total) {
            NodeId out = next;
            for (NodeId a = 0; a < out; ++a) {
                for (NodeId b = a + 1; b < out; ++b) {
                    ModelGraph h = g;
                    h.add_node(out, LayerKind::Output);
                    h.add_edge(a, out);
                    h.add_edge(b, out);
                    if (validate(h).ok()) add_skips(std::move(h));
                }
            }
            return;
        }
        for (LayerKind kind : kInternal) {
            const int below = next;
            const std::size_t subsets = std::size_t{1} << below;
            for (std::size_t mask = 1; mask < subsets; ++mask) {
                int bits = __builtin_popcountll(mask);
                bool arity_ok = (kind == LayerKind::Lstm && bits == 1) || (kind == LayerKind::Attention && bits == 2) ||
                                (kind == LayerKind::Concat && bits >= 2);
                if (!arity_ok) continue;
                g.add_node(next, kind);
                for (int p = 0; p < below; ++p) {
                    if (mask & (std::size_t{1} << p)) g.add_edge(p, next);
                }
                grow(g, next + 1, internal_total);
                g.remove_node(next);
            }
        }
    };

    for (int internal = 0; internal + 3 <= max_nodes; ++internal) {
        ModelGraph g(n_max);
        g.add_node(0, LayerKind::InputDoc);
        g.add_node(1, LayerKind::InputQ);
        grow(g, 2, internal);
    }

    std::vector<ModelGraph> out;
    out.reserve(found.size());
    for (auto& [h, g] : found) out.push_back(std::move(g));
    return out;
}

}  // namespace evoqa
