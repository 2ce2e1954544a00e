#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance runner.

#include <optional>
#include <set>
#include <vector>

#include "evoqa/encoder.hpp"
#include "evoqa/graph.hpp"
#include "evoqa/mutation.hpp"

namespace evoqa::oracles {

inline bool is_edge_tag(MutationTag t) {
    return t == MutationTag::InsertRnnLayer || t == MutationTag::InsertAttentionLayer || t == MutationTag::AddSkip ||
           t == MutationTag::RemoveSkip || t == MutationTag::ConcatTwoInput;
}

/// Every parameterization of every tag, applied structurally and kept when
/// the result is legal and inside the budget.
inline std::set<MutationAction> brute_force_candidates(const ModelGraph& g) {
    std::vector<NodeId> ids{-1};
    for (const auto& [id, kind] : g.nodes()) ids.push_back(id);
    std::set<MutationAction> legal;
    auto consider = [&](const MutationAction& a) {
        ModelGraph r;
        try {
            r = apply_unchecked(a, g);
        } catch (const MutationError&) {
            return;
        } catch (const GraphError&) {
            return;
        }
        if (r.size() <= g.n_max() && is_searchable(r)) legal.insert(a);
    };
    for (int t = 0; t < kMutationTagCount; ++t) {
        MutationTag tag = static_cast<MutationTag>(t);
        if (tag == MutationTag::Identity) {
            consider(MutationAction{});
            continue;
        }
        for (NodeId x : ids) {
            for (NodeId y : ids) {
                for (NodeId w : ids) {
                    MutationAction a;
                    a.tag = tag;
                    a.other = w;
                    if (is_edge_tag(tag)) {
                        if (y < 0) continue;
                        a.src = x;
                        a.dst = y;
                    } else {
                        if (y >= 0) continue;
                        a.node = x;
                    }
                    consider(a);
                }
            }
        }
    }
    return legal;
}

inline bool candidates_match_brute_force(const ModelGraph& g) {
    const std::vector<MutationAction> listed = enumerate_candidates(g);
    const std::set<MutationAction> unique(listed.begin(), listed.end());
    return unique.size() == listed.size() && unique == brute_force_candidates(g);
}

inline std::optional<RelationKind> mirror(RelationKind k) {
    switch (k) {
        case RelationKind::InputOfLstm: return RelationKind::OutputOfLstm;
        case RelationKind::OutputOfLstm: return RelationKind::InputOfLstm;
        case RelationKind::InputOfAttention: return RelationKind::OutputOfAttention;
        case RelationKind::OutputOfAttention: return RelationKind::InputOfAttention;
        case RelationKind::InputOfConcat: return RelationKind::OutputOfConcat;
        case RelationKind::OutputOfConcat: return RelationKind::InputOfConcat;
        case RelationKind::InputOfOutputLayer: return RelationKind::OutputOfInputLayer;
        case RelationKind::OutputOfInputLayer: return RelationKind::InputOfOutputLayer;
        case RelationKind::SkipTo: return RelationKind::SkipFrom;
        case RelationKind::SkipFrom: return RelationKind::SkipTo;
        case RelationKind::NoConnection: return RelationKind::NoConnection;
        default: return std::nullopt;
    }
}

/// One-hot cells, padding outside the used block, SELF on its diagonal and
/// mirrored relations everywhere else.
inline bool tensor_invariants_hold(const RelationTensor& t) {
    const std::vector<std::uint8_t> bytes = t.one_hot();
    const int n = t.n();
    if (bytes.size() != static_cast<std::size_t>(n) * n * kRelationKinds) return false;
    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) {
            int sum = 0;
            for (int k = 0; k < kRelationKinds; ++k) sum += bytes[(static_cast<std::size_t>(x) * n + y) * kRelationKinds + k];
            if (sum != 1) return false;
            const bool real = x < t.n_used() && y < t.n_used();
            const RelationKind r = t.at(x, y);
            if (!real) {
                if (r != RelationKind::Padding) return false;
            } else if (x == y) {
                if (r != RelationKind::Self) return false;
            } else {
                const auto m = mirror(r);
                if (!m || t.at(y, x) != *m) return false;
            }
        }
    }
    return true;
}

inline bool round_trip_holds(const ModelGraph& g, int n) {
    const RelationTensor t = encode(g, n);
    if (!tensor_invariants_hold(t)) return false;
    ModelGraph back = decode(t);
    back.set_n_max(g.n_max());
    return canonicalize(back) == canonicalize(g);
}

}  // namespace evoqa::oracles
