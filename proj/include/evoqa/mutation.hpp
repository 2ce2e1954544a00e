#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evoqa/graph.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

enum class MutationTag : std::uint8_t {
    Identity,
    InsertRnnLayer,
    RemoveRnnLayer,
    InsertAttentionLayer,
    RemoveAttentionLayer,
    AddSkip,
    RemoveSkip,
    ConcatTwoInput,
};

inline constexpr int kMutationTagCount = 8;

std::string_view to_string(MutationTag tag);
MutationTag mutation_tag_from_string(std::string_view name);

/// One edit of the search space. Unused placement fields stay at -1.
///   INSERT_RNN_LAYER        splice an LSTM into DATA edge src->dst
///   REMOVE_RNN_LAYER        delete LSTM `node`, wire its input to its consumers
///   INSERT_ATTENTION_LAYER  attention over (src, other) replacing src->dst
///   REMOVE_ATTENTION_LAYER  delete attention `node`, keep input `other`
///   ADD_SKIP / REMOVE_SKIP  identity edge src->dst
///   CONCAT_TWO_INPUT        concat of (src, other) replacing src->dst
struct MutationAction {
    MutationTag tag = MutationTag::Identity;
    NodeId src = -1;
    NodeId dst = -1;
    NodeId node = -1;
    NodeId other = -1;

    auto operator<=>(const MutationAction&) const = default;
};

std::string describe(const MutationAction& action);
nlohmann::json action_to_json(const MutationAction& action);
MutationAction action_from_json(const nlohmann::json& doc);

class MutationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every legal placement of every action, each exactly once, ordered by
/// tag and then by node ids. IDENTITY is always present.
std::vector<MutationAction> enumerate_candidates(const ModelGraph& graph);

/// Applies a legal action to a copy of the graph. Throws MutationError when
/// the action does not belong to enumerate_candidates(graph).
ModelGraph apply(const MutationAction& action, const ModelGraph& graph);

/// Structural edit only: no legality check on the result. Throws when the
/// placement does not fit the graph at all (missing node or edge).
ModelGraph apply_unchecked(const MutationAction& action, const ModelGraph& graph);

struct MutationResult {
    MutationAction action;
    ModelGraph graph;
};

/// Uniform over tags with at least one legal placement, then uniform over
/// that tag's placements.
MutationResult random_mutate(const ModelGraph& graph, RandomSource& rng);

/// `burst` successive random mutations.
ModelGraph multiple_mutate(const ModelGraph& graph, int burst, RandomSource& rng);

inline constexpr int kDefaultMutationBurst = 20;

}  // namespace evoqa
