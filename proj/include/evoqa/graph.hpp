#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace evoqa {

// Tag order is significant: it drives canonical tie-breaking.
enum class LayerKind : std::uint8_t { InputDoc, InputQ, Lstm, Attention, Concat, Output };
enum class EdgeKind : std::uint8_t { Data, Skip };

// Sequence stream a node's output belongs to. Mixed marks a concat or
// skip across document and question lengths (structurally legal, not
// compilable).
enum class Stream : std::uint8_t { Doc, Question, Mixed };

using NodeId = int;

std::string_view to_string(LayerKind kind);
std::string_view to_string(EdgeKind kind);
LayerKind layer_kind_from_string(std::string_view name);
EdgeKind edge_kind_from_string(std::string_view name);

inline constexpr int kDefaultMaxNodes = 50;

struct Edge {
    NodeId src = 0;
    NodeId dst = 0;
    EdgeKind kind = EdgeKind::Data;

    auto operator<=>(const Edge&) const = default;
};

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Typed DAG describing one architecture. Node ids are stable across
/// mutation; canonicalize() renumbers them densely.
class ModelGraph {
public:
    ModelGraph() = default;
    explicit ModelGraph(int n_max) : n_max_(n_max) {}
    ModelGraph(std::map<NodeId, LayerKind> nodes, std::set<Edge> edges, int n_max = kDefaultMaxNodes);

    const std::map<NodeId, LayerKind>& nodes() const { return nodes_; }
    /// Sorted by (src, dst, kind), no duplicates.
    const std::vector<Edge>& edges() const { return edges_; }
    int n_max() const { return n_max_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    bool has_node(NodeId id) const { return nodes_.count(id) != 0; }
    LayerKind kind(NodeId id) const;
    bool has_edge(NodeId src, NodeId dst, EdgeKind kind) const {
        return std::binary_search(edges_.begin(), edges_.end(), Edge{src, dst, kind});
    }

    std::vector<NodeId> predecessors(NodeId id, EdgeKind kind) const;
    std::vector<NodeId> successors(NodeId id, EdgeKind kind) const;
    std::optional<NodeId> find_unique(LayerKind kind) const;
    NodeId next_id() const { return nodes_.empty() ? 0 : nodes_.rbegin()->first + 1; }
    int count(LayerKind kind) const;
    int count(EdgeKind kind) const;

    NodeId add_node(LayerKind kind);
    void add_node(NodeId id, LayerKind kind);
    /// Drops the node and every incident edge.
    void remove_node(NodeId id);
    void add_edge(NodeId src, NodeId dst, EdgeKind kind = EdgeKind::Data);
    void remove_edge(NodeId src, NodeId dst, EdgeKind kind = EdgeKind::Data);
    void set_n_max(int n_max) { n_max_ = n_max; }

    bool operator==(const ModelGraph&) const = default;

private:
    std::map<NodeId, LayerKind> nodes_;
    std::vector<Edge> edges_;
    int n_max_ = kDefaultMaxNodes;
};

struct Violation {
    std::string rule;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool has(std::string_view rule) const;
    std::string summary() const;
};

/// Checks every structural invariant and reports all failures.
ValidationReport validate(const ModelGraph& graph);

/// Shape-unification problems that validate() tolerates but a compiled
/// network cannot: concat or skip across streams of different length.
std::vector<Violation> stream_violations(const ModelGraph& graph);

/// Validity plus stream consistency; the closure domain of mutation.
bool is_searchable(const ModelGraph& graph);

/// Kahn order over all edges; nullopt when a cycle exists.
std::optional<std::vector<NodeId>> topological_order(const ModelGraph& graph);

/// Output stream of every node. Attention follows its primary input, the
/// document-stream one when its inputs disagree. Requires an acyclic graph.
std::map<NodeId, Stream> infer_streams(const ModelGraph& graph);

/// Renumbers nodes 0..n-1 in a relabeling-invariant topological order.
ModelGraph canonicalize(const ModelGraph& graph);

using GraphHash = std::uint64_t;
GraphHash hash(const ModelGraph& graph);
/// Hash of a graph already in canonical form (skips re-canonicalization).
GraphHash hash_canonical(const ModelGraph& canonical);

/// Smallest legal graph: both inputs wired straight into the output layer.
ModelGraph minimal_graph(int n_max = kDefaultMaxNodes);

struct NamedGraph {
    std::string name;
    ModelGraph graph;
};

/// BiDAF-like, R-Net-like and FusionNet-like skeletons from the checked-in
/// fixtures.
std::vector<NamedGraph> seed_models(int n_max = kDefaultMaxNodes);

/// Every searchable graph with at most max_nodes nodes, one per canonical
/// form, in canonical-hash order.
std::vector<ModelGraph> enumerate_searchable_graphs(int max_nodes, int n_max = kDefaultMaxNodes);

}  // namespace evoqa
