#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "evoqa/graph.hpp"

namespace evoqa {

enum class RelationKind : std::uint8_t {
    NoConnection,
    Self,
    Padding,
    InputOfLstm,
    OutputOfLstm,
    InputOfAttention,
    OutputOfAttention,
    InputOfConcat,
    OutputOfConcat,
    SkipTo,
    SkipFrom,
    InputOfOutputLayer,
    OutputOfInputLayer,
};

inline constexpr int kRelationKinds = 13;

std::string_view to_string(RelationKind kind);

class EncodingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// N x N grid of relation kinds; cell (x, y) is the relation of node x to
/// node y. Viewed as a one-hot N x N x K array.
class RelationTensor {
public:
    RelationTensor(int n, int n_used);

    /// Builds from a row-major (x, y, k) one-hot byte array; rejects cells
    /// that are not exactly one-hot.
    static RelationTensor from_one_hot(int n, int n_used, int k, const std::vector<std::uint8_t>& bytes);

    int n() const { return n_; }
    int n_used() const { return n_used_; }
    int k() const { return kRelationKinds; }

    RelationKind at(int x, int y) const { return cells_[static_cast<std::size_t>(x) * n_ + y]; }
    void set(int x, int y, RelationKind kind) { cells_[static_cast<std::size_t>(x) * n_ + y] = kind; }

    std::vector<std::uint8_t> one_hot() const;
    /// Channel-major (k, x, y) float layout for the estimator.
    std::vector<double> channels_first() const;

    bool operator==(const RelationTensor&) const = default;

private:
    int n_;
    int n_used_;
    std::vector<RelationKind> cells_;
};

/// Encodes in canonical node order. n defaults to the graph's n_max.
RelationTensor encode(const ModelGraph& graph);
RelationTensor encode(const ModelGraph& graph, int n);

/// Inverse of encode, up to canonical relabeling.
ModelGraph decode(const RelationTensor& tensor);

/// Header: n, n_used, k as little-endian int32; then one-hot bytes.
void write_tensor(const RelationTensor& tensor, const std::filesystem::path& path);
RelationTensor read_tensor(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_tensor(const RelationTensor& tensor);

}  // namespace evoqa
