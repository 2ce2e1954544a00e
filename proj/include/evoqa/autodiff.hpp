#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evoqa/tensor.hpp"

namespace evoqa {

/// Named trainable tensors with their gradient accumulators.
class ParameterStore {
public:
    struct Entry {
        Tensor value;
        Tensor grad;
    };

    /// Throws when the name is taken.
    Tensor& add(const std::string& name, Tensor init);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);

    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::map<std::string, Entry>& entries() { return entries_; }
    std::size_t parameter_count() const;

    void zero_grad();
    double grad_norm() const;
    /// value -= lr * grad for every entry.
    void sgd_step(double lr);

private:
    std::map<std::string, Entry> entries_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

#ifdef NDEBUG
inline constexpr bool kDefaultFiniteChecks = false;
#else
inline constexpr bool kDefaultFiniteChecks = true;
#endif

/// Records operations as they execute; backward() replays them in reverse.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    explicit Tape(bool check_finite = kDefaultFiniteChecks) : check_finite_(check_finite) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the tape.
    Var variable(Tensor value);
    /// Leaf bound to a store entry; gradients accumulate into the store.
    Var param(ParameterStore& store, const std::string& name);
    /// Read-only binding: the value enters as a constant.
    Var param(const ParameterStore& store, const std::string& name);

    Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward);

    /// Seeds d(loss)/d(loss) = 1 on a single-element value.
    void backward(Var loss);

    bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
    /// Gradient buffer of v, allocated as zeros on first use.
    Tensor& grad_buffer(Var v);
    /// Gradient after backward(); zeros when none reached v.
    Tensor grad(Var v) const;
    const Tensor& value(Var v) const { return nodes_[v.id()].value; }

    std::size_t size() const { return nodes_.size(); }
    bool checks_finite() const { return check_finite_; }
    /// With gradients off, leaves created afterwards are treated as
    /// constants and no backward closures are kept.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        const char* op = "";
        bool needs_grad = false;
        Tensor* sink = nullptr;
    };

    Var push(Node node);

    std::deque<Node> nodes_;
    std::map<const Tensor*, int> params_;
    bool check_finite_;
    bool grad_enabled_ = true;
};

// Elementwise and linear algebra. Rank-2 arguments are (rows x cols); a
// "row vector" argument may be any shape whose size matches the columns.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_rowvec(Var a, Var row);
Var mul_rowvec(Var a, Var row);
Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
/// x * W^T + b with W of shape (out x in).
Var linear(Var x, Var w, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat_lastdim(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);

Var sigmoid(Var a);
Var tanh(Var a);
Var swish(Var a);
Var relu(Var a);
/// Along the last axis of a rank-2 value (rank 1 counts as one row).
Var softmax_lastdim(Var a);
Var log_softmax_lastdim(Var a);

Var sum(Var a);
Var mean(Var a);
/// (T x d) -> (1 x d) average over the sequence axis.
Var avg_pool_seq(Var a);
Var pick(Var a, std::size_t flat_index);
Var gather_rows(Var table, const std::vector<int>& rows);

/// (B, C, H, W) * (O, C, KH, KW) with same padding.
Var conv2d(Var x, Var w, int stride);
/// (B, C, H, W) -> (B, C).
Var global_avg_pool(Var x);

double sigmoid(double x);

}  // namespace evoqa
