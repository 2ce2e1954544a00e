#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "evoqa/graph.hpp"

namespace evoqa {

nlohmann::json graph_to_json(const ModelGraph& graph);
ModelGraph graph_from_json(const nlohmann::json& doc);

ModelGraph load_graph(const std::filesystem::path& path);
void save_graph(const ModelGraph& graph, const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace evoqa
