#include "evoqa/graph_io.hpp"

#include <fstream>
#include <sstream>

#include "evoqa/errors.hpp"

namespace evoqa {

nlohmann::json graph_to_json(const ModelGraph& graph) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [id, kind] : graph.nodes()) {
        nodes.push_back({{"id", id}, {"kind", std::string(to_string(kind))}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : graph.edges()) {
        edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", std::string(to_string(e.kind))}});
    }
    return {{"n_max", graph.n_max()}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

ModelGraph graph_from_json(const nlohmann::json& doc) {
    try {
        if (!doc.is_object()) throw SchemaError("graph document must be an object");
        for (const char* field : {"nodes", "edges", "n_max"}) {
            if (!doc.contains(field)) throw SchemaError(std::string("graph document lacks field '") + field + "'");
        }
        int n_max = doc.at("n_max").get<int>();
        if (n_max <= 0) throw SchemaError("n_max must be positive");
        ModelGraph g(n_max);
        for (const auto& node : doc.at("nodes")) {
            g.add_node(node.at("id").get<int>(), layer_kind_from_string(node.at("kind").get<std::string>()));
        }
        for (const auto& edge : doc.at("edges")) {
            g.add_edge(edge.at("src").get<int>(), edge.at("dst").get<int>(),
                       edge_kind_from_string(edge.value("kind", std::string("DATA"))));
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("graph document: ") + e.what());
    } catch (const GraphError& e) {
        throw SchemaError(std::string("graph document: ") + e.what());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelGraph load_graph(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return graph_from_json(doc);
}

void save_graph(const ModelGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << graph_to_json(graph).dump(2) << '\n';
}

}  // namespace evoqa
