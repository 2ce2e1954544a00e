#include "evoqa/graph.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <limits>
#include <tuple>
#include <queue>
#include <span>
#include <sstream>

namespace evoqa {

namespace {

constexpr std::string_view kLayerNames[] = {"INPUT_DOC", "INPUT_Q", "LSTM", "ATTENTION", "CONCAT", "OUTPUT"};
constexpr std::string_view kEdgeNames[] = {"DATA", "SKIP"};

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t combine(std::uint64_t seed, std::uint64_t value) { return mix64(seed ^ mix64(value)); }

bool is_input(LayerKind kind) { return kind == LayerKind::InputDoc || kind == LayerKind::InputQ; }

std::string node_label(NodeId id, LayerKind kind) {
    std::ostringstream os;
    os << to_string(kind) << " node " << id;
    return os.str();
}

// Index-based adjacency built once per query. Indices follow ascending
// node id; neighbour lists follow edge-set order.
// Flat neighbour lists (CSR) for one of the four edge directions.
struct Adjacency {
    std::vector<int> offset;
    std::vector<int> flat;

    std::span<const int> operator[](int v) const {
        return {flat.data() + offset[v], static_cast<std::size_t>(offset[v + 1] - offset[v])};
    }
};

struct DenseView {
    std::vector<NodeId> ids;
    std::vector<LayerKind> kinds;
    Adjacency data_in, data_out, skip_in, skip_out;

    explicit DenseView(const ModelGraph& g) {
        const std::size_t n = g.nodes().size();
        ids.reserve(n);
        kinds.reserve(n);
        for (const auto& [id, kind] : g.nodes()) {
            ids.push_back(id);
            kinds.push_back(kind);
        }
        std::vector<std::pair<int, int>> ends;
        ends.reserve(g.edges().size());
        for (const Edge& e : g.edges()) {
            int a = index(e.src), b = index(e.dst);
            if (a < 0 || b < 0) throw GraphError("edge references a missing node");
            ends.emplace_back(a, b);
        }
        Adjacency* lists[] = {&data_out, &data_in, &skip_out, &skip_in};
        for (Adjacency* l : lists) l->offset.assign(n + 2, 0);
        std::size_t i = 0;
        for (const Edge& e : g.edges()) {
            const int skip = e.kind == EdgeKind::Skip ? 2 : 0;
            ++lists[skip]->offset[ends[i].first + 2];
            ++lists[skip + 1]->offset[ends[i].second + 2];
            ++i;
        }
        for (Adjacency* l : lists) {
            for (std::size_t v = 2; v < n + 2; ++v) l->offset[v] += l->offset[v - 1];
            l->flat.resize(l->offset[n + 1]);
        }
        // offset[v + 1] serves as the write cursor for v and ends as v's end.
        i = 0;
        for (const Edge& e : g.edges()) {
            const int skip = e.kind == EdgeKind::Skip ? 2 : 0;
            auto [a, b] = ends[i++];
            lists[skip]->flat[lists[skip]->offset[a + 1]++] = b;
            lists[skip + 1]->flat[lists[skip + 1]->offset[b + 1]++] = a;
        }
        for (Adjacency* l : lists) l->offset.pop_back();
    }

    int size() const { return static_cast<int>(ids.size()); }

    int index(NodeId id) const {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        return it != ids.end() && *it == id ? static_cast<int>(it - ids.begin()) : -1;
    }

    // Kahn order over all edges, smallest id first among ready nodes.
    std::optional<std::vector<int>> order() const {
        std::vector<int> indegree(size(), 0);
        for (int v = 0; v < size(); ++v) indegree[v] = static_cast<int>(data_in[v].size() + skip_in[v].size());
        std::priority_queue<int, std::vector<int>, std::greater<>> ready;
        for (int v = 0; v < size(); ++v) {
            if (indegree[v] == 0) ready.push(v);
        }
        std::vector<int> out;
        out.reserve(size());
        while (!ready.empty()) {
            int cur = ready.top();
            ready.pop();
            out.push_back(cur);
            for (int next : data_out[cur]) {
                if (--indegree[next] == 0) ready.push(next);
            }
            for (int next : skip_out[cur]) {
                if (--indegree[next] == 0) ready.push(next);
            }
        }
        if (static_cast<int>(out.size()) != size()) return std::nullopt;
        return out;
    }

    std::vector<Stream> streams(const std::vector<int>& order) const {
        std::vector<Stream> s(size(), Stream::Mixed);
        for (int v : order) {
            const auto preds = data_in[v];
            switch (kinds[v]) {
                case LayerKind::InputDoc: s[v] = Stream::Doc; break;
                case LayerKind::InputQ: s[v] = Stream::Question; break;
                case LayerKind::Output: s[v] = Stream::Mixed; break;
                case LayerKind::Lstm:
                    if (preds.size() == 1) s[v] = s[preds[0]];
                    break;
                case LayerKind::Attention:
                    // Output length follows the primary input: document
                    // before question before mixed.
                    if (preds.size() == 2) s[v] = std::min(s[preds[0]], s[preds[1]]);
                    break;
                case LayerKind::Concat:
                    if (!preds.empty()) {
                        s[v] = s[preds[0]];
                        for (int p : preds) {
                            if (s[p] != s[v]) s[v] = Stream::Mixed;
                        }
                    }
                    break;
            }
        }
        return s;
    }
};

std::vector<Violation> stream_violations(const DenseView& view, const std::vector<Stream>& streams) {
    std::vector<Violation> out;
    for (int v = 0; v < view.size(); ++v) {
        if (view.kinds[v] == LayerKind::Output) continue;
        if (streams[v] == Stream::Mixed) {
            out.push_back(Violation{"stream unification", node_label(view.ids[v], view.kinds[v]) + " mixes document and question lengths"});
        }
    }
    for (int v = 0; v < view.size(); ++v) {
        for (int w : view.skip_out[v]) {
            if (streams[v] != streams[w]) {
                out.push_back(Violation{"stream unification", "skip " + std::to_string(view.ids[v]) + "->" +
                                                                  std::to_string(view.ids[w]) + " joins sequences of different length"});
            }
        }
    }
    return out;
}

ValidationReport validate(const ModelGraph& graph, std::vector<Violation>* stream_issues);

}  // namespace

std::string_view to_string(LayerKind kind) { return kLayerNames[static_cast<int>(kind)]; }
std::string_view to_string(EdgeKind kind) { return kEdgeNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_string(std::string_view name) {
    for (int i = 0; i < 6; ++i) {
        if (kLayerNames[i] == name) return static_cast<LayerKind>(i);
    }
    throw GraphError("unknown layer kind '" + std::string(name) + "'");
}

EdgeKind edge_kind_from_string(std::string_view name) {
    for (int i = 0; i < 2; ++i) {
        if (kEdgeNames[i] == name) return static_cast<EdgeKind>(i);
    }
    throw GraphError("unknown edge kind '" + std::string(name) + "'");
}

ModelGraph::ModelGraph(std::map<NodeId, LayerKind> nodes, std::set<Edge> edges, int n_max)
    : nodes_(std::move(nodes)), edges_(edges.begin(), edges.end()), n_max_(n_max) {
    for (const auto& [id, kind] : nodes_) {
        if (id < 0) throw GraphError("negative node id " + std::to_string(id));
    }
}

LayerKind ModelGraph::kind(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw GraphError("no node with id " + std::to_string(id));
    return it->second;
}

std::vector<NodeId> ModelGraph::predecessors(NodeId id, EdgeKind kind) const {
    std::vector<NodeId> out;
    for (const Edge& e : edges_) {
        if (e.dst == id && e.kind == kind) out.push_back(e.src);
    }
    return out;
}

std::vector<NodeId> ModelGraph::successors(NodeId id, EdgeKind kind) const {
    std::vector<NodeId> out;
    auto it = std::lower_bound(edges_.begin(), edges_.end(), Edge{id, std::numeric_limits<NodeId>::min(), EdgeKind::Data});
    for (; it != edges_.end() && it->src == id; ++it) {
        if (it->kind == kind) out.push_back(it->dst);
    }
    return out;
}

std::optional<NodeId> ModelGraph::find_unique(LayerKind kind) const {
    std::optional<NodeId> found;
    for (const auto& [id, k] : nodes_) {
        if (k != kind) continue;
        if (found) return std::nullopt;
        found = id;
    }
    return found;
}

int ModelGraph::count(LayerKind kind) const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [&](const auto& n) { return n.second == kind; }));
}

int ModelGraph::count(EdgeKind kind) const {
    return static_cast<int>(std::count_if(edges_.begin(), edges_.end(), [&](const Edge& e) { return e.kind == kind; }));
}

NodeId ModelGraph::add_node(LayerKind kind) {
    NodeId id = next_id();
    nodes_.emplace(id, kind);
    return id;
}

void ModelGraph::add_node(NodeId id, LayerKind kind) {
    if (id < 0) throw GraphError("negative node id " + std::to_string(id));
    if (!nodes_.emplace(id, kind).second) throw GraphError("duplicate node id " + std::to_string(id));
}

void ModelGraph::remove_node(NodeId id) {
    if (nodes_.erase(id) == 0) throw GraphError("no node with id " + std::to_string(id));
    std::erase_if(edges_, [id](const Edge& e) { return e.src == id || e.dst == id; });
}

void ModelGraph::add_edge(NodeId src, NodeId dst, EdgeKind kind) {
    const Edge e{src, dst, kind};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
    if (it == edges_.end() || *it != e) {
        edges_.insert(it, e);
    } else {
        throw GraphError("duplicate edge " + std::to_string(src) + "->" + std::to_string(dst));
    }
}

void ModelGraph::remove_edge(NodeId src, NodeId dst, EdgeKind kind) {
    const Edge e{src, dst, kind};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
    if (it == edges_.end() || *it != e) throw GraphError("no edge " + std::to_string(src) + "->" + std::to_string(dst));
    edges_.erase(it);
}

bool ValidationReport::has(std::string_view rule) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule == rule; });
}

std::string ValidationReport::summary() const {
    std::string out;
    for (const Violation& v : violations) {
        if (!out.empty()) out += "; ";
        out += v.rule + ": " + v.detail;
    }
    return out;
}

std::optional<std::vector<NodeId>> topological_order(const ModelGraph& graph) {
    for (const Edge& e : graph.edges()) {
        if (!graph.has_node(e.src) || !graph.has_node(e.dst)) return std::nullopt;
    }
    DenseView view(graph);
    auto order = view.order();
    if (!order) return std::nullopt;
    std::vector<NodeId> out;
    out.reserve(order->size());
    for (int v : *order) out.push_back(view.ids[v]);
    return out;
}

std::map<NodeId, Stream> infer_streams(const ModelGraph& graph) {
    DenseView view(graph);
    auto order = view.order();
    if (!order) throw GraphError("stream inference needs an acyclic graph");
    std::vector<Stream> s = view.streams(*order);
    std::map<NodeId, Stream> out;
    for (int v = 0; v < view.size(); ++v) out.emplace_hint(out.end(), view.ids[v], s[v]);
    return out;
}

namespace {

ValidationReport validate(const ModelGraph& graph, std::vector<Violation>* stream_issues) {
    ValidationReport report;
    auto fail = [&](std::string rule, std::string detail) {
        report.violations.push_back(Violation{std::move(rule), std::move(detail)});
    };

    if (graph.size() > graph.n_max()) {
        fail("node budget", std::to_string(graph.size()) + " nodes exceed n_max=" + std::to_string(graph.n_max()));
    }

    std::vector<NodeId> ids;
    ids.reserve(graph.nodes().size());
    std::array<int, 6> kind_count{};
    for (const auto& [id, kind] : graph.nodes()) {
        ids.push_back(id);
        ++kind_count[static_cast<int>(kind)];
    }
    auto present = [&](NodeId id) { return std::binary_search(ids.begin(), ids.end(), id); };
    bool endpoints_ok = true;
    for (const Edge& e : graph.edges()) {
        if (!present(e.src) || !present(e.dst)) {
            fail("edge endpoint", "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " references a missing node");
            endpoints_ok = false;
        }
    }

    for (LayerKind kind : {LayerKind::InputDoc, LayerKind::InputQ, LayerKind::Output}) {
        int n = kind_count[static_cast<int>(kind)];
        if (n != 1) fail("terminal count", std::string(to_string(kind)) + " occurs " + std::to_string(n) + " times");
    }
    if (!endpoints_ok) return report;

    const DenseView view(graph);
    const int n = view.size();
    int output = -1;
    for (int v = 0; v < n; ++v) {
        const NodeId id = view.ids[v];
        const LayerKind kind = view.kinds[v];
        const int data_in = static_cast<int>(view.data_in[v].size());
        const int skip_in = static_cast<int>(view.skip_in[v].size());
        switch (kind) {
            case LayerKind::InputDoc:
            case LayerKind::InputQ:
                if (data_in + skip_in != 0) fail("input arity", node_label(id, kind) + " has in-edges");
                break;
            case LayerKind::Lstm:
                if (data_in != 1) fail("LSTM arity", node_label(id, kind) + " has " + std::to_string(data_in) + " data inputs");
                break;
            case LayerKind::Attention:
                if (data_in != 2) fail("ATTENTION arity", node_label(id, kind) + " has " + std::to_string(data_in) + " data inputs");
                break;
            case LayerKind::Concat:
                if (data_in < 2) fail("CONCAT arity", node_label(id, kind) + " has " + std::to_string(data_in) + " data inputs");
                break;
            case LayerKind::Output:
                output = output == -1 ? v : -2;
                if (data_in != 2) fail("OUTPUT arity", node_label(id, kind) + " has " + std::to_string(data_in) + " data inputs");
                if (!view.data_out[v].empty() || !view.skip_out[v].empty()) {
                    fail("output fan-out", node_label(id, kind) + " has out-edges");
                }
                break;
        }
    }

    auto order = view.order();
    if (!order) {
        fail("cycle", "graph is not acyclic");
        return report;
    }

    // Forward reachability from the inputs and backward reachability from
    // the output, both along DATA edges.
    std::vector<char> from_inputs(n, 0), to_output(n, 0);
    for (int v : *order) {
        if (is_input(view.kinds[v])) from_inputs[v] = 1;
        if (from_inputs[v]) {
            for (int w : view.data_out[v]) from_inputs[w] = 1;
        }
    }
    if (output >= 0) {
        to_output[output] = 1;
        for (auto it = order->rbegin(); it != order->rend(); ++it) {
            if (!to_output[*it]) continue;
            for (int p : view.data_in[*it]) to_output[p] = 1;
        }
    }
    for (int v = 0; v < n; ++v) {
        if (!from_inputs[v]) fail("unreachable", node_label(view.ids[v], view.kinds[v]) + " is not reachable from an input");
        if (!to_output[v]) fail("dangling", node_label(view.ids[v], view.kinds[v]) + " does not reach the output");
    }

    bool any_skip = false;
    for (int v = 0; v < n; ++v) any_skip = any_skip || !view.skip_out[v].empty();
    if (any_skip) {
        // Data descendants of every node as bit rows, filled in reverse
        // topological order.
        const std::size_t words = (static_cast<std::size_t>(n) + 63) / 64;
        std::vector<std::uint64_t> below(static_cast<std::size_t>(n) * words, 0);
        for (auto it = order->rbegin(); it != order->rend(); ++it) {
            std::uint64_t* row = &below[static_cast<std::size_t>(*it) * words];
            for (int w : view.data_out[*it]) {
                row[w / 64] |= std::uint64_t{1} << (w % 64);
                const std::uint64_t* sub = &below[static_cast<std::size_t>(w) * words];
                for (std::size_t k = 0; k < words; ++k) row[k] |= sub[k];
            }
        }
        for (int a = 0; a < n; ++a) {
            for (int b : view.skip_out[a]) {
                auto label = [&] { return "skip " + std::to_string(view.ids[a]) + "->" + std::to_string(view.ids[b]); };
                LayerKind dst_kind = view.kinds[b];
                if (dst_kind == LayerKind::Output || is_input(dst_kind)) fail("skip target", label() + " ends at a terminal node");
                auto outs = view.data_out[a];
                if (std::find(outs.begin(), outs.end(), b) != outs.end()) fail("skip parallel", label() + " duplicates a data edge");
                if (!(below[static_cast<std::size_t>(a) * words + b / 64] >> (b % 64) & 1)) {
                    fail("skip path", label() + " has no data path to bypass");
                }
            }
        }
    }

    std::vector<Stream> streams = view.streams(*order);
    if (output >= 0) {
        const auto feeds = view.data_in[output];
        if (feeds.size() == 2) {
            Stream a = streams[feeds[0]];
            Stream b = streams[feeds[1]];
            bool ok = (a == Stream::Doc && b == Stream::Question) || (a == Stream::Question && b == Stream::Doc);
            if (!ok) fail("output feeds", "output layer needs one document-stream and one question-stream feed");
        }
    }
    if (stream_issues) *stream_issues = stream_violations(view, streams);
    return report;
}

}  // namespace

ValidationReport validate(const ModelGraph& graph) { return validate(graph, nullptr); }

std::vector<Violation> stream_violations(const ModelGraph& graph) {
    DenseView view(graph);
    auto order = view.order();
    if (!order) throw GraphError("stream inference needs an acyclic graph");
    return stream_violations(view, view.streams(*order));
}

bool is_searchable(const ModelGraph& graph) {
    std::vector<Violation> issues;
    return validate(graph, &issues).ok() && issues.empty();
}

namespace {

// Weisfeiler-Lehman style colour refinement over both edge directions.
std::map<NodeId, std::uint64_t> refine_colours(const ModelGraph& g) {
    std::map<NodeId, std::uint64_t> colour;
    for (const auto& [id, kind] : g.nodes()) colour[id] = mix64(static_cast<std::uint64_t>(kind) + 1);
    for (int round = 0; round < g.size(); ++round) {
        std::map<NodeId, std::uint64_t> next;
        for (const auto& [id, kind] : g.nodes()) {
            std::vector<std::uint64_t> in, out;
            for (const Edge& e : g.edges()) {
                if (e.dst == id) in.push_back(combine(colour[e.src], static_cast<std::uint64_t>(e.kind)));
                if (e.src == id) out.push_back(combine(colour[e.dst], static_cast<std::uint64_t>(e.kind) + 7));
            }
            std::sort(in.begin(), in.end());
            std::sort(out.begin(), out.end());
            std::uint64_t h = combine(colour[id], 0x51);
            for (auto v : in) h = combine(h, v);
            h = combine(h, 0xa7);
            for (auto v : out) h = combine(h, v);
            next[id] = h;
        }
        std::set<std::uint64_t> before, after;
        for (auto& [id, c] : colour) before.insert(c);
        for (auto& [id, c] : next) after.insert(c);
        colour = std::move(next);
        if (after.size() == before.size()) break;
    }
    return colour;
}

struct CanonicalSearch {
    const ModelGraph& g;
    std::map<NodeId, std::uint64_t> colour;
    std::map<NodeId, std::vector<Edge>> in_edges;
    std::map<NodeId, std::vector<Edge>> out_edges;
    std::vector<NodeId> best_order;
    std::vector<int> best_key;
    long budget = 4096;

    explicit CanonicalSearch(const ModelGraph& graph) : g(graph), colour(refine_colours(graph)) {
        for (const Edge& e : g.edges()) {
            in_edges[e.dst].push_back(e);
            out_edges[e.src].push_back(e);
        }
    }

    std::vector<int> serialize(const std::vector<NodeId>& order) const {
        std::map<NodeId, int> index;
        for (int i = 0; i < static_cast<int>(order.size()); ++i) index[order[i]] = i;
        std::vector<int> key;
        key.push_back(static_cast<int>(order.size()));
        for (NodeId id : order) key.push_back(static_cast<int>(g.kind(id)));
        std::vector<std::array<int, 3>> edges;
        for (const Edge& e : g.edges()) edges.push_back({index.at(e.src), index.at(e.dst), static_cast<int>(e.kind)});
        std::sort(edges.begin(), edges.end());
        for (const auto& e : edges) key.insert(key.end(), e.begin(), e.end());
        return key;
    }

    // Twins share kind and identical neighbourhoods; swapping them is an
    // automorphism, so either choice yields the same canonical form.
    bool twins(NodeId a, NodeId b) const {
        auto neighbourhood = [&](NodeId id) {
            std::vector<std::pair<int, NodeId>> in, out;
            if (auto it = in_edges.find(id); it != in_edges.end())
                for (const Edge& e : it->second) in.emplace_back(static_cast<int>(e.kind), e.src);
            if (auto it = out_edges.find(id); it != out_edges.end())
                for (const Edge& e : it->second) out.emplace_back(static_cast<int>(e.kind), e.dst);
            std::sort(in.begin(), in.end());
            std::sort(out.begin(), out.end());
            return std::make_pair(in, out);
        };
        return g.kind(a) == g.kind(b) && neighbourhood(a) == neighbourhood(b);
    }

    void run(std::vector<NodeId>& order, std::map<NodeId, int>& index, std::map<NodeId, int>& indegree) {
        while (order.size() < g.nodes().size()) {
            using Key = std::tuple<int, std::vector<std::pair<int, int>>, std::uint64_t>;
            std::vector<std::pair<Key, NodeId>> ready;
            for (const auto& [id, deg] : indegree) {
                if (deg != 0 || index.count(id)) continue;
                std::vector<std::pair<int, int>> preds;
                if (auto it = in_edges.find(id); it != in_edges.end())
                    for (const Edge& e : it->second) preds.emplace_back(index.at(e.src), static_cast<int>(e.kind));
                std::sort(preds.begin(), preds.end());
                ready.emplace_back(Key{static_cast<int>(g.kind(id)), std::move(preds), colour.at(id)}, id);
            }
            std::sort(ready.begin(), ready.end());
            std::vector<NodeId> tied;
            for (const auto& [key, id] : ready) {
                if (key == ready.front().first) tied.push_back(id);
            }
            // Collapse twin classes; only structurally distinct choices branch.
            std::vector<NodeId> choices;
            for (NodeId id : tied) {
                bool covered = std::any_of(choices.begin(), choices.end(), [&](NodeId c) { return twins(c, id); });
                if (!covered) choices.push_back(id);
            }
            if (choices.size() > 1 && budget > 0) {
                for (NodeId pick : choices) {
                    --budget;
                    auto order_b = order;
                    auto index_b = index;
                    auto indegree_b = indegree;
                    take(pick, order_b, index_b, indegree_b);
                    run(order_b, index_b, indegree_b);
                }
                return;
            }
            take(choices.front(), order, index, indegree);
        }
        std::vector<int> key = serialize(order);
        if (best_order.empty() || key < best_key) {
            best_key = std::move(key);
            best_order = order;
        }
    }

    void take(NodeId id, std::vector<NodeId>& order, std::map<NodeId, int>& index, std::map<NodeId, int>& indegree) {
        index[id] = static_cast<int>(order.size());
        order.push_back(id);
        if (auto it = out_edges.find(id); it != out_edges.end())
            for (const Edge& e : it->second) --indegree[e.dst];
    }
};

}  // namespace

ModelGraph canonicalize(const ModelGraph& graph) {
    if (auto report = validate(graph); !report.ok()) {
        throw GraphError("cannot canonicalize an invalid graph: " + report.summary());
    }
    CanonicalSearch search(graph);
    std::map<NodeId, int> indegree;
    for (const auto& [id, kind] : graph.nodes()) indegree[id] = 0;
    for (const Edge& e : graph.edges()) ++indegree[e.dst];
    std::vector<NodeId> order;
    std::map<NodeId, int> index;
    search.run(order, index, indegree);

    std::map<NodeId, int> relabel;
    for (int i = 0; i < static_cast<int>(search.best_order.size()); ++i) relabel[search.best_order[i]] = i;
    std::map<NodeId, LayerKind> nodes;
    for (const auto& [id, kind] : graph.nodes()) nodes[relabel.at(id)] = kind;
    std::set<Edge> edges;
    for (const Edge& e : graph.edges()) edges.insert(Edge{relabel.at(e.src), relabel.at(e.dst), e.kind});
    return ModelGraph(std::move(nodes), std::move(edges), graph.n_max());
}

GraphHash hash_canonical(const ModelGraph& canonical) {
    // FNV-1a over a fixed-width serialization; n_max is deliberately excluded.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            h ^= (v >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    feed(static_cast<std::uint32_t>(canonical.size()));
    for (const auto& [id, kind] : canonical.nodes()) {
        feed(static_cast<std::uint32_t>(id));
        feed(static_cast<std::uint32_t>(kind));
    }
    feed(0xffffffffU);
    for (const Edge& e : canonical.edges()) {
        feed(static_cast<std::uint32_t>(e.src));
        feed(static_cast<std::uint32_t>(e.dst));
        feed(static_cast<std::uint32_t>(e.kind));
    }
    return mix64(h);
}

GraphHash hash(const ModelGraph& graph) { return hash_canonical(canonicalize(graph)); }

ModelGraph minimal_graph(int n_max) {
    ModelGraph g(n_max);
    NodeId doc = g.add_node(LayerKind::InputDoc);
    NodeId q = g.add_node(LayerKind::InputQ);
    NodeId out = g.add_node(LayerKind::Output);
    g.add_edge(doc, out);
    g.add_edge(q, out);
    return g;
}

}  // namespace evoqa
