#include "evoqa/mutation.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

#include "evoqa/errors.hpp"

namespace evoqa {

namespace {

constexpr std::string_view kTagNames[] = {
    "IDENTITY",   "INSERT_RNN_LAYER", "REMOVE_RNN_LAYER", "INSERT_ATTENTION_LAYER", "REMOVE_ATTENTION_LAYER",
    "ADD_SKIP",   "REMOVE_SKIP",      "CONCAT_TWO_INPUT",
};

// Dense reachability and adjacency over one graph, indexed by position in
// ascending node id order.
struct Reachability {
    std::vector<NodeId> ids;
    std::vector<LayerKind> kinds;
    std::vector<Stream> streams;
    std::vector<char> reach;   // DATA path of length >= 1
    std::vector<char> reach2;  // DATA path of length >= 2
    std::vector<char> linked;  // any direct edge, DATA or SKIP
    int n = 0;

    explicit Reachability(const ModelGraph& g) {
        const std::map<NodeId, Stream> by_id = infer_streams(g);
        for (const auto& [id, kind] : g.nodes()) {
            ids.push_back(id);
            kinds.push_back(kind);
            streams.push_back(by_id.at(id));
        }
        n = static_cast<int>(ids.size());
        reach.assign(static_cast<std::size_t>(n) * n, 0);
        reach2.assign(static_cast<std::size_t>(n) * n, 0);
        linked.assign(static_cast<std::size_t>(n) * n, 0);
        std::vector<std::vector<int>> succ(n);
        for (const Edge& e : g.edges()) {
            int a = index(e.src), b = index(e.dst);
            linked[cell(a, b)] = 1;
            if (e.kind == EdgeKind::Data) succ[a].push_back(b);
        }
        std::vector<NodeId> order = *topological_order(g);
        for (int i = n - 1; i >= 0; --i) {
            int u = index(order[i]);
            for (int v : succ[u]) {
                reach[cell(u, v)] = 1;
                for (int k = 0; k < n; ++k) {
                    if (reach[cell(v, k)]) {
                        reach[cell(u, k)] = 1;
                        reach2[cell(u, k)] = 1;
                    }
                }
            }
        }
    }

    std::size_t cell(int a, int b) const { return static_cast<std::size_t>(a) * n + b; }
    int index(NodeId id) const { return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin()); }
};

bool is_terminal(LayerKind k) {
    return k == LayerKind::InputDoc || k == LayerKind::InputQ || k == LayerKind::Output;
}

MutationAction edge_action(MutationTag tag, const Edge& e, NodeId other = -1) {
    MutationAction a;
    a.tag = tag;
    a.src = e.src;
    a.dst = e.dst;
    a.other = other;
    return a;
}

void require(bool cond, const MutationAction& action, const char* why) {
    if (!cond) throw MutationError(describe(action) + ": " + why);
}

}  // namespace

std::string_view to_string(MutationTag tag) { return kTagNames[static_cast<int>(tag)]; }

MutationTag mutation_tag_from_string(std::string_view name) {
    for (int i = 0; i < kMutationTagCount; ++i) {
        if (kTagNames[i] == name) return static_cast<MutationTag>(i);
    }
    throw SchemaError("unknown mutation tag '" + std::string(name) + "'");
}

std::string describe(const MutationAction& a) {
    std::ostringstream os;
    os << to_string(a.tag);
    if (a.src >= 0) os << " edge " << a.src << "->" << a.dst;
    if (a.node >= 0) os << " node " << a.node;
    if (a.other >= 0) os << " other " << a.other;
    return os.str();
}

nlohmann::json action_to_json(const MutationAction& a) {
    nlohmann::json j{{"tag", std::string(to_string(a.tag))}};
    if (a.src >= 0) j["src"] = a.src;
    if (a.dst >= 0) j["dst"] = a.dst;
    if (a.node >= 0) j["node"] = a.node;
    if (a.other >= 0) j["other"] = a.other;
    return j;
}

MutationAction action_from_json(const nlohmann::json& j) {
    try {
        MutationAction a;
        a.tag = mutation_tag_from_string(j.at("tag").get<std::string>());
        a.src = j.value("src", -1);
        a.dst = j.value("dst", -1);
        a.node = j.value("node", -1);
        a.other = j.value("other", -1);
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("mutation action: ") + e.what());
    }
}

ModelGraph apply_unchecked(const MutationAction& a, const ModelGraph& graph) {
    ModelGraph g = graph;
    switch (a.tag) {
        case MutationTag::Identity:
            require(a.src < 0 && a.dst < 0 && a.node < 0 && a.other < 0, a, "identity takes no placement");
            break;
        case MutationTag::InsertRnnLayer: {
            require(a.node < 0 && a.other < 0, a, "unexpected placement fields");
            require(g.has_edge(a.src, a.dst, EdgeKind::Data), a, "no such data edge");
            NodeId lstm = g.add_node(LayerKind::Lstm);
            g.remove_edge(a.src, a.dst);
            g.add_edge(a.src, lstm);
            g.add_edge(lstm, a.dst);
            break;
        }
        case MutationTag::InsertAttentionLayer:
        case MutationTag::ConcatTwoInput: {
            require(a.node < 0, a, "unexpected placement fields");
            require(g.has_edge(a.src, a.dst, EdgeKind::Data), a, "no such data edge");
            require(g.has_node(a.other) && a.other != a.src, a, "second input must be another node");
            LayerKind kind = a.tag == MutationTag::ConcatTwoInput ? LayerKind::Concat : LayerKind::Attention;
            NodeId fresh = g.add_node(kind);
            g.remove_edge(a.src, a.dst);
            g.add_edge(a.src, fresh);
            g.add_edge(a.other, fresh);
            g.add_edge(fresh, a.dst);
            break;
        }
        case MutationTag::RemoveRnnLayer:
        case MutationTag::RemoveAttentionLayer: {
            require(a.src < 0 && a.dst < 0, a, "unexpected placement fields");
            require(g.has_node(a.node), a, "no such node");
            const bool rnn = a.tag == MutationTag::RemoveRnnLayer;
            require(g.kind(a.node) == (rnn ? LayerKind::Lstm : LayerKind::Attention), a, "node has the wrong kind");
            std::vector<NodeId> preds = g.predecessors(a.node, EdgeKind::Data);
            NodeId keep = -1;
            if (rnn) {
                require(a.other < 0, a, "unexpected placement fields");
                require(preds.size() == 1, a, "LSTM must have one input");
                keep = preds[0];
            } else {
                require(std::find(preds.begin(), preds.end(), a.other) != preds.end(), a, "kept input is not an input");
                keep = a.other;
            }
            std::vector<NodeId> succs = g.successors(a.node, EdgeKind::Data);
            g.remove_node(a.node);
            for (NodeId s : succs) {
                require(!g.has_edge(keep, s, EdgeKind::Data), a, "reconnection duplicates an edge");
                g.add_edge(keep, s);
            }
            break;
        }
        case MutationTag::AddSkip:
            require(a.node < 0 && a.other < 0, a, "unexpected placement fields");
            require(g.has_node(a.src) && g.has_node(a.dst), a, "no such node");
            require(!g.has_edge(a.src, a.dst, EdgeKind::Skip), a, "skip already present");
            g.add_edge(a.src, a.dst, EdgeKind::Skip);
            break;
        case MutationTag::RemoveSkip:
            require(a.node < 0 && a.other < 0, a, "unexpected placement fields");
            require(g.has_edge(a.src, a.dst, EdgeKind::Skip), a, "no such skip edge");
            g.remove_edge(a.src, a.dst, EdgeKind::Skip);
            break;
    }
    return g;
}

ModelGraph apply(const MutationAction& action, const ModelGraph& graph) {
    ModelGraph result;
    try {
        result = apply_unchecked(action, graph);
    } catch (const GraphError& e) {
        throw MutationError(describe(action) + ": " + e.what());
    }
    require(is_searchable(result), action, "result is not a legal graph");
    return result;
}

std::vector<MutationAction> enumerate_candidates(const ModelGraph& graph) {
    if (!is_searchable(graph)) throw MutationError("cannot mutate an illegal graph: " + validate(graph).summary());

    const Reachability reach(graph);
    const int n = reach.n;
    const bool can_grow = graph.size() < graph.n_max();

    std::vector<Edge> data_edges, skip_edges;
    for (const Edge& e : graph.edges()) (e.kind == EdgeKind::Data ? data_edges : skip_edges).push_back(e);

    std::vector<MutationAction> out;
    out.push_back(MutationAction{});

    if (can_grow) {
        for (const Edge& e : data_edges) out.push_back(edge_action(MutationTag::InsertRnnLayer, e));
    }

    for (const auto& [id, kind] : graph.nodes()) {
        if (kind != LayerKind::Lstm) continue;
        NodeId p = graph.predecessors(id, EdgeKind::Data).front();
        bool ok = true;
        for (NodeId s : graph.successors(id, EdgeKind::Data)) {
            if (graph.has_edge(p, s, EdgeKind::Data) || graph.has_edge(p, s, EdgeKind::Skip)) ok = false;
        }
        if (ok) {
            MutationAction a;
            a.tag = MutationTag::RemoveRnnLayer;
            a.node = id;
            out.push_back(a);
        }
    }

    // A second input is admissible when it cannot create a cycle and is not
    // the output layer. Attention that switches a question-stream edge to the
    // document stream changes everything downstream, so that case is checked
    // on one materialized result per edge: the new node is document-stream
    // whichever document-stream node it also reads, and the extra path only
    // adds connectivity.
    auto second_input_ok = [&](int u, int v, int w) {
        if (w == u || w == v) return false;
        if (reach.kinds[w] == LayerKind::Output) return false;
        return !reach.reach[reach.cell(v, w)];
    };

    if (can_grow) {
        for (const Edge& e : data_edges) {
            const int u = reach.index(e.src), v = reach.index(e.dst);
            std::optional<bool> switch_ok;
            for (int w = 0; w < n; ++w) {
                if (!second_input_ok(u, v, w)) continue;
                MutationAction a = edge_action(MutationTag::InsertAttentionLayer, e, reach.ids[w]);
                Stream su = reach.streams[u];
                if (su != reach.streams[w] && su != Stream::Doc) {
                    if (!switch_ok) switch_ok = is_searchable(apply_unchecked(a, graph));
                    if (!*switch_ok) continue;
                }
                out.push_back(a);
            }
        }
    }

    // Removing an attention layer can strand its dropped input and break
    // skip paths, both global properties; placements are few, so each is
    // checked on the result.
    for (const auto& [id, kind] : graph.nodes()) {
        if (kind != LayerKind::Attention) continue;
        for (NodeId keep : graph.predecessors(id, EdgeKind::Data)) {
            MutationAction a;
            a.tag = MutationTag::RemoveAttentionLayer;
            a.node = id;
            a.other = keep;
            bool cheap_reject = false;
            for (NodeId s : graph.successors(id, EdgeKind::Data)) {
                if (graph.has_edge(keep, s, EdgeKind::Data)) cheap_reject = true;
            }
            // The dropped input dangles unless it feeds something else.
            for (NodeId drop : graph.predecessors(id, EdgeKind::Data)) {
                if (drop != keep && graph.successors(drop, EdgeKind::Data).size() < 2) cheap_reject = true;
            }
            if (!cheap_reject && is_searchable(apply_unchecked(a, graph))) out.push_back(a);
        }
    }

    for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
            if (u == v || is_terminal(reach.kinds[v])) continue;
            const std::size_t c = reach.cell(u, v);
            if (reach.linked[c] || !reach.reach2[c]) continue;
            if (reach.streams[u] != reach.streams[v]) continue;
            MutationAction a;
            a.tag = MutationTag::AddSkip;
            a.src = reach.ids[u];
            a.dst = reach.ids[v];
            out.push_back(a);
        }
    }

    for (const Edge& e : skip_edges) out.push_back(edge_action(MutationTag::RemoveSkip, e));

    if (can_grow) {
        for (const Edge& e : data_edges) {
            const int u = reach.index(e.src), v = reach.index(e.dst);
            for (int w = 0; w < n; ++w) {
                if (!second_input_ok(u, v, w)) continue;
                if (reach.streams[w] != reach.streams[u]) continue;
                out.push_back(edge_action(MutationTag::ConcatTwoInput, e, reach.ids[w]));
            }
        }
    }
    return out;
}

MutationResult random_mutate(const ModelGraph& graph, RandomSource& rng) {
    std::array<std::vector<MutationAction>, kMutationTagCount> by_tag;
    for (MutationAction& a : enumerate_candidates(graph)) by_tag[static_cast<int>(a.tag)].push_back(a);
    std::vector<int> legal;
    for (int t = 0; t < kMutationTagCount; ++t) {
        if (!by_tag[t].empty()) legal.push_back(t);
    }
    const auto& pool = by_tag[legal[rng.uniform_index(legal.size())]];
    const MutationAction& action = pool[rng.uniform_index(pool.size())];
    return MutationResult{action, apply(action, graph)};
}

ModelGraph multiple_mutate(const ModelGraph& graph, int burst, RandomSource& rng) {
    if (burst < 1) throw MutationError("mutation burst must be at least 1");
    ModelGraph g = graph;
    for (int i = 0; i < burst; ++i) g = random_mutate(g, rng).graph;
    return g;
}

}  // namespace evoqa
