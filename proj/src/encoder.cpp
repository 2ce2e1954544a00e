#include "evoqa/encoder.hpp"

#include <fstream>
#include <sstream>

#include "evoqa/errors.hpp"

namespace evoqa {

namespace {

constexpr std::string_view kRelationNames[] = {
    "NO_CONNECTION",       "SELF",          "PADDING",
    "INPUT_OF_LSTM",       "OUTPUT_OF_LSTM", "INPUT_OF_ATTENTION",
    "OUTPUT_OF_ATTENTION", "INPUT_OF_CONCAT", "OUTPUT_OF_CONCAT",
    "SKIP_TO",             "SKIP_FROM",     "INPUT_OF_OUTPUTLAYER",
    "OUTPUT_OF_INPUTLAYER",
};

// Relation pair (forward cell, mirror cell) for a DATA edge into `dst_kind`.
std::pair<RelationKind, RelationKind> data_relations(LayerKind dst_kind) {
    switch (dst_kind) {
        case LayerKind::Lstm: return {RelationKind::InputOfLstm, RelationKind::OutputOfLstm};
        case LayerKind::Attention: return {RelationKind::InputOfAttention, RelationKind::OutputOfAttention};
        case LayerKind::Concat: return {RelationKind::InputOfConcat, RelationKind::OutputOfConcat};
        case LayerKind::Output: return {RelationKind::InputOfOutputLayer, RelationKind::OutputOfInputLayer};
        default: break;
    }
    throw EncodingError("input layers have no incoming relations");
}

// Mirror of a forward relation, or nullopt for kinds that are not forward.
std::optional<RelationKind> mirror_of(RelationKind r) {
    switch (r) {
        case RelationKind::InputOfLstm: return RelationKind::OutputOfLstm;
        case RelationKind::InputOfAttention: return RelationKind::OutputOfAttention;
        case RelationKind::InputOfConcat: return RelationKind::OutputOfConcat;
        case RelationKind::InputOfOutputLayer: return RelationKind::OutputOfInputLayer;
        case RelationKind::SkipTo: return RelationKind::SkipFrom;
        default: return std::nullopt;
    }
}

std::optional<RelationKind> forward_of(RelationKind r) {
    for (RelationKind f : {RelationKind::InputOfLstm, RelationKind::InputOfAttention, RelationKind::InputOfConcat,
                           RelationKind::InputOfOutputLayer, RelationKind::SkipTo}) {
        if (mirror_of(f) == r) return f;
    }
    return std::nullopt;
}

std::string cell(int x, int y) { return "(" + std::to_string(x) + "," + std::to_string(y) + ")"; }

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    auto u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xff));
}

std::int32_t get_i32(const std::vector<std::uint8_t>& in, std::size_t pos) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    return static_cast<std::int32_t>(u);
}

}  // namespace

std::string_view to_string(RelationKind kind) { return kRelationNames[static_cast<int>(kind)]; }

RelationTensor::RelationTensor(int n, int n_used) : n_(n), n_used_(n_used) {
    if (n <= 0 || n_used < 0 || n_used > n) throw EncodingError("bad tensor geometry n=" + std::to_string(n) + " n_used=" + std::to_string(n_used));
    cells_.assign(static_cast<std::size_t>(n) * n, RelationKind::Padding);
    for (int x = 0; x < n_used; ++x) {
        for (int y = 0; y < n_used; ++y) set(x, y, x == y ? RelationKind::Self : RelationKind::NoConnection);
    }
}

RelationTensor RelationTensor::from_one_hot(int n, int n_used, int k, const std::vector<std::uint8_t>& bytes) {
    if (k != kRelationKinds) throw EncodingError("relation vocabulary size " + std::to_string(k) + " != 13");
    RelationTensor t(n, n_used);
    if (bytes.size() != static_cast<std::size_t>(n) * n * k) throw EncodingError("one-hot payload has the wrong size");
    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) {
            int hot = -1;
            for (int c = 0; c < k; ++c) {
                std::uint8_t v = bytes[(static_cast<std::size_t>(x) * n + y) * k + c];
                if (v > 1 || (v == 1 && hot >= 0)) throw EncodingError("cell " + cell(x, y) + " is not one-hot");
                if (v == 1) hot = c;
            }
            if (hot < 0) throw EncodingError("cell " + cell(x, y) + " is not one-hot");
            t.set(x, y, static_cast<RelationKind>(hot));
        }
    }
    return t;
}

std::vector<std::uint8_t> RelationTensor::one_hot() const {
    std::vector<std::uint8_t> out(cells_.size() * kRelationKinds, 0);
    for (std::size_t i = 0; i < cells_.size(); ++i) out[i * kRelationKinds + static_cast<int>(cells_[i])] = 1;
    return out;
}

std::vector<double> RelationTensor::channels_first() const {
    const std::size_t plane = static_cast<std::size_t>(n_) * n_;
    std::vector<double> out(plane * kRelationKinds, 0.0);
    for (std::size_t i = 0; i < plane; ++i) out[static_cast<int>(cells_[i]) * plane + i] = 1.0;
    return out;
}

RelationTensor encode(const ModelGraph& graph) { return encode(graph, graph.n_max()); }

RelationTensor encode(const ModelGraph& graph, int n) {
    if (graph.size() > n) {
        throw EncodingError("graph with " + std::to_string(graph.size()) + " nodes exceeds tensor size " + std::to_string(n));
    }
    ModelGraph c = canonicalize(graph);
    RelationTensor t(n, c.size());
    for (const Edge& e : c.edges()) {
        if (e.kind == EdgeKind::Skip) {
            t.set(e.src, e.dst, RelationKind::SkipTo);
            t.set(e.dst, e.src, RelationKind::SkipFrom);
        } else {
            auto [fwd, back] = data_relations(c.kind(e.dst));
            t.set(e.src, e.dst, fwd);
            t.set(e.dst, e.src, back);
        }
    }
    return t;
}

ModelGraph decode(const RelationTensor& t) {
    const int n = t.n();
    const int used = t.n_used();
    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) {
            RelationKind r = t.at(x, y);
            bool real = x < used && y < used;
            if (!real && r != RelationKind::Padding) throw EncodingError("cell " + cell(x, y) + " must be PADDING");
            if (real && x == y && r != RelationKind::Self) throw EncodingError("cell " + cell(x, y) + " must be SELF");
            if (real && x != y && (r == RelationKind::Self || r == RelationKind::Padding)) {
                throw EncodingError("cell " + cell(x, y) + " holds " + std::string(to_string(r)) + " off the diagonal");
            }
        }
    }
    // Forward relations name their mirror cell first, then any orphaned
    // mirror relation names the forward cell it lacks.
    for (int x = 0; x < used; ++x) {
        for (int y = 0; y < used; ++y) {
            if (auto m = mirror_of(t.at(x, y)); m && t.at(y, x) != *m) {
                throw EncodingError("mirror violation at cell " + cell(y, x) + ": expected " + std::string(to_string(*m)) +
                                    ", found " + std::string(to_string(t.at(y, x))));
            }
        }
    }
    for (int x = 0; x < used; ++x) {
        for (int y = 0; y < used; ++y) {
            RelationKind r = t.at(x, y);
            if (auto f = forward_of(r); f && t.at(y, x) != *f) {
                throw EncodingError("mirror violation at cell " + cell(y, x) + ": expected " + std::string(to_string(*f)) +
                                    ", found " + std::string(to_string(t.at(y, x))));
            }
            if (r == RelationKind::NoConnection && t.at(y, x) != RelationKind::NoConnection) {
                throw EncodingError("mirror violation at cell " + cell(y, x) + ": expected NO_CONNECTION");
            }
        }
    }

    ModelGraph g(n);
    int inputs_seen = 0;
    for (int y = 0; y < used; ++y) {
        std::optional<LayerKind> kind;
        for (int x = 0; x < used; ++x) {
            std::optional<LayerKind> k;
            switch (t.at(x, y)) {
                case RelationKind::InputOfLstm: k = LayerKind::Lstm; break;
                case RelationKind::InputOfAttention: k = LayerKind::Attention; break;
                case RelationKind::InputOfConcat: k = LayerKind::Concat; break;
                case RelationKind::InputOfOutputLayer: k = LayerKind::Output; break;
                default: break;
            }
            if (k && kind && *k != *kind) throw EncodingError("column " + std::to_string(y) + " mixes input relations at cell " + cell(x, y));
            if (k) kind = k;
        }
        if (!kind) {
            // Canonical order places the document input before the question input.
            if (inputs_seen >= 2) throw EncodingError("node " + std::to_string(y) + " has no inputs but both input layers exist");
            kind = inputs_seen++ == 0 ? LayerKind::InputDoc : LayerKind::InputQ;
        }
        g.add_node(y, *kind);
    }
    for (int x = 0; x < used; ++x) {
        for (int y = 0; y < used; ++y) {
            RelationKind r = t.at(x, y);
            if (r == RelationKind::SkipTo) {
                g.add_edge(x, y, EdgeKind::Skip);
            } else if (mirror_of(r)) {
                g.add_edge(x, y, EdgeKind::Data);
            }
        }
    }
    return g;
}

std::vector<std::uint8_t> serialize_tensor(const RelationTensor& t) {
    std::vector<std::uint8_t> out;
    put_i32(out, t.n());
    put_i32(out, t.n_used());
    put_i32(out, t.k());
    std::vector<std::uint8_t> body = t.one_hot();
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

void write_tensor(const RelationTensor& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    std::vector<std::uint8_t> bytes = serialize_tensor(t);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RelationTensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw EncodingError("tensor file shorter than its header");
    int n = get_i32(bytes, 0), used = get_i32(bytes, 4), k = get_i32(bytes, 8);
    if (n <= 0 || k <= 0) throw EncodingError("bad tensor header");
    return RelationTensor::from_one_hot(n, used, k, std::vector<std::uint8_t>(bytes.begin() + 12, bytes.end()));
}

}  // namespace evoqa
