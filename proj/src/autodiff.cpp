#include "evoqa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evoqa/kernels.hpp"

namespace evoqa {

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
    Tensor grad(init.shape(), 0.0);
    auto [it, ok] = entries_.emplace(name, Entry{std::move(init), std::move(grad)});
    return it->second.value;
}

Tensor& ParameterStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second.value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second.value;
}

Tensor& ParameterStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second.grad;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

double ParameterStore::grad_norm() const {
    double s = 0.0;
    for (const auto& [name, e] : entries_)
        for (double g : e.grad.values()) s += g * g;
    return std::sqrt(s);
}

void ParameterStore::sgd_step(double lr) {
    for (auto& [name, e] : entries_) {
        double* v = e.value.data();
        const double* g = e.grad.data();
        for (std::size_t i = 0; i < e.value.size(); ++i) v[i] -= lr * g[i];
    }
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    return push(std::move(n));
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "variable";
    n.needs_grad = grad_enabled_;
    return push(std::move(n));
}

Var Tape::param(ParameterStore& store, const std::string& name) {
    Tensor& v = store.value(name);
    if (auto it = params_.find(&v); it != params_.end()) return Var(this, it->second);
    Node n;
    n.value = v;
    n.op = "param";
    n.needs_grad = grad_enabled_;
    if (grad_enabled_) n.sink = &store.grad(name);
    Var out = push(std::move(n));
    params_[&v] = out.id();
    return out;
}

Var Tape::param(const ParameterStore& store, const std::string& name) {
    const Tensor& v = store.value(name);
    if (auto it = params_.find(&v); it != params_.end()) return Var(this, it->second);
    Var out = constant(v);
    params_[&v] = out.id();
    return out;
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
    if (check_finite_ && !value.all_finite()) {
        throw NumericError(std::string("non-finite output from ") + op + " of shape " + shape_string(value.shape()));
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (const Var& v : inputs) {
        if (v.tape() != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
        n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = nodes_[v.id()];
    if (n.sink) return *n.sink;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.sink) return *n.sink;
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
    if (value(loss).size() != 1) throw ShapeError("backward needs a single-element loss, got " + shape_string(value(loss).shape()));
    grad_buffer(loss)[0] += 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
    }
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

bool rank2(const Tensor& t) { return t.rank() == 2; }

void require_rank2(const char* op, const Tensor& t) {
    if (!rank2(t)) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void accumulate(Tape& t, Var v, const Tensor& g) {
    if (!t.needs_grad(v)) return;
    Tensor& dst = t.grad_buffer(v);
    double* d = dst.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

template <class F, class D>
Var unary(const char* op, Var a, F f, D dfdx) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return a.tape()->record(op, std::move(y), {a}, [a, dfdx](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        const Tensor& x = t.value(a);
        Tensor& dx = t.grad_buffer(a);
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * dfdx(x[i]);
    });
}

int row_count(const Tensor& t) { return t.rank() == 1 ? 1 : static_cast<int>(t.size() / t.shape().back()); }

}  // namespace

Var add(Var a, Var b) {
    require_same_shape("add", a.shape(), b.shape());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
    return a.tape()->record("add", std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        accumulate(t, b, g);
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a.shape(), b.shape());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    return a.tape()->record("sub", std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        if (t.needs_grad(b)) {
            Tensor& db = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a.shape(), b.shape());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    return a.tape()->record("mul", std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.needs_grad(a)) {
            Tensor& da = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (t.needs_grad(b)) {
            Tensor& db = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor y = a.value();
    for (double& v : y.values()) v *= s;
    return a.tape()->record("scale", std::move(y), {a}, [a, s](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& da = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
    });
}

Var add_scalar(Var a, double s) {
    Tensor y = a.value();
    for (double& v : y.values()) v += s;
    return a.tape()->record("add_scalar", std::move(y), {a}, [a](Tape& t, const Tensor& g) { accumulate(t, a, g); });
}

Var add_rowvec(Var a, Var row) {
    const Tensor& x = a.value();
    const int cols = x.shape().back();
    if (static_cast<int>(row.value().size()) != cols) {
        throw ShapeError("add_rowvec: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(row.shape()));
    }
    Tensor y = x;
    const int rows = row_count(x);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) y[static_cast<std::size_t>(r) * cols + c] += row.value()[c];
    return a.tape()->record("add_rowvec", std::move(y), {a, row}, [a, row, rows, cols](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        if (t.needs_grad(row)) {
            Tensor& dr = t.grad_buffer(row);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) dr[c] += g[static_cast<std::size_t>(r) * cols + c];
        }
    });
}

Var mul_rowvec(Var a, Var row) {
    const Tensor& x = a.value();
    const int cols = x.shape().back();
    if (static_cast<int>(row.value().size()) != cols) {
        throw ShapeError("mul_rowvec: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(row.shape()));
    }
    Tensor y = x;
    const int rows = row_count(x);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) y[static_cast<std::size_t>(r) * cols + c] *= row.value()[c];
    return a.tape()->record("mul_rowvec", std::move(y), {a, row}, [a, row, rows, cols](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(a);
        const Tensor& rv = t.value(row);
        if (t.needs_grad(a)) {
            Tensor& da = t.grad_buffer(a);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) da[static_cast<std::size_t>(r) * cols + c] += g[static_cast<std::size_t>(r) * cols + c] * rv[c];
        }
        if (t.needs_grad(row)) {
            Tensor& dr = t.grad_buffer(row);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) dr[c] += g[static_cast<std::size_t>(r) * cols + c] * xv[static_cast<std::size_t>(r) * cols + c];
        }
    });
}

Var matmul(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    require_rank2("matmul", x);
    require_rank2("matmul", w);
    if (x.dim(1) != w.dim(0)) throw ShapeError("matmul: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(w.shape()));
    const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
    Tensor y(Shape{m, n});
    kernels::gemm(false, false, m, n, k, x.data(), w.data(), y.data(), false);
    return a.tape()->record("matmul", std::move(y), {a, b}, [a, b, m, n, k](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) kernels::gemm(false, true, m, k, n, g.data(), t.value(b).data(), t.grad_buffer(a).data(), true);
        if (t.needs_grad(b)) kernels::gemm(true, false, k, n, m, t.value(a).data(), g.data(), t.grad_buffer(b).data(), true);
    });
}

Var matmul_nt(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    require_rank2("matmul_nt", x);
    require_rank2("matmul_nt", w);
    if (x.dim(1) != w.dim(1)) throw ShapeError("matmul_nt: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(w.shape()));
    const int m = x.dim(0), k = x.dim(1), n = w.dim(0);
    Tensor y(Shape{m, n});
    kernels::gemm(false, true, m, n, k, x.data(), w.data(), y.data(), false);
    return a.tape()->record("matmul_nt", std::move(y), {a, b}, [a, b, m, n, k](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) kernels::gemm(false, false, m, k, n, g.data(), t.value(b).data(), t.grad_buffer(a).data(), true);
        if (t.needs_grad(b)) kernels::gemm(true, false, n, k, m, g.data(), t.value(a).data(), t.grad_buffer(b).data(), true);
    });
}

Var linear(Var x, Var w, Var b) { return add_rowvec(matmul_nt(x, w), b); }

Var transpose(Var a) {
    const Tensor& x = a.value();
    require_rank2("transpose", x);
    const int r = x.dim(0), c = x.dim(1);
    Tensor y(Shape{c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.at(j, i) = x.at(i, j);
    return a.tape()->record("transpose", std::move(y), {a}, [a, r, c](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& da = t.grad_buffer(a);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) da.at(i, j) += g.at(j, i);
    });
}

Var reshape(Var a, Shape shape) {
    Tensor y = a.value().reshaped(std::move(shape));
    return a.tape()->record("reshape", std::move(y), {a}, [a](Tape& t, const Tensor& g) { accumulate(t, a, g); });
}

Var concat_lastdim(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
    const int rows = parts[0].value().dim(0);
    int cols = 0;
    for (const Var& p : parts) {
        require_rank2("concat_lastdim", p.value());
        if (p.value().dim(0) != rows) {
            throw ShapeError("concat_lastdim: shape mismatch " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
        }
        cols += p.value().dim(1);
    }
    Tensor y(Shape{rows, cols});
    int offset = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < v.dim(1); ++c) y.at(r, offset + c) = v.at(r, c);
        offset += v.dim(1);
    }
    return parts[0].tape()->record("concat_lastdim", std::move(y), parts, [parts, rows](Tape& t, const Tensor& g) {
        int offset = 0;
        for (const Var& p : parts) {
            const int pc = t.value(p).dim(1);
            if (t.needs_grad(p)) {
                Tensor& d = t.grad_buffer(p);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < pc; ++c) d.at(r, c) += g.at(r, offset + c);
            }
            offset += pc;
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int cols = parts[0].value().dim(1);
    int rows = 0;
    for (const Var& p : parts) {
        require_rank2("concat_rows", p.value());
        if (p.value().dim(1) != cols) {
            throw ShapeError("concat_rows: shape mismatch " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
        }
        rows += p.value().dim(0);
    }
    Tensor y(Shape{rows, cols});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.value().size();
    }
    return parts[0].tape()->record("concat_rows", std::move(y), parts, [parts](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t n = t.value(p).size();
            if (t.needs_grad(p)) {
                Tensor& d = t.grad_buffer(p);
                for (std::size_t i = 0; i < n; ++i) d[i] += g[offset + i];
            }
            offset += n;
        }
    });
}

Var slice_rows(Var a, int start, int count) {
    const Tensor& x = a.value();
    require_rank2("slice_rows", x);
    if (start < 0 || count <= 0 || start + count > x.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " + shape_string(x.shape()));
    }
    const int cols = x.dim(1);
    std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(start) * cols,
                          x.values().begin() + static_cast<std::ptrdiff_t>(start + count) * cols);
    Tensor y(Shape{count, cols}, std::move(v));
    return a.tape()->record("slice_rows", std::move(y), {a}, [a, start, cols](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& d = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) d[static_cast<std::size_t>(start) * cols + i] += g[i];
    });
}

Var slice_cols(Var a, int start, int count) {
    const Tensor& x = a.value();
    require_rank2("slice_cols", x);
    if (start < 0 || count <= 0 || start + count > x.dim(1)) {
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " + shape_string(x.shape()));
    }
    const int rows = x.dim(0);
    Tensor y(Shape{rows, count});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c) y.at(r, c) = x.at(r, start + c);
    return a.tape()->record("slice_cols", std::move(y), {a}, [a, start, rows, count](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& d = t.grad_buffer(a);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < count; ++c) d.at(r, start + c) += g.at(r, c);
    });
}

Var sigmoid(Var a) {
    return unary(
        "sigmoid", a, [](double x) { return sigmoid(x); },
        [](double x) {
            double s = sigmoid(x);
            return s * (1.0 - s);
        });
}

Var tanh(Var a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double x) {
            double th = std::tanh(x);
            return 1.0 - th * th;
        });
}

Var swish(Var a) {
    return unary(
        "swish", a, [](double x) { return x * sigmoid(x); },
        [](double x) {
            double s = sigmoid(x);
            return s + x * s * (1.0 - s);
        });
}

Var relu(Var a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softmax_lastdim(Var a) {
    const Tensor& x = a.value();
    const int cols = x.shape().back();
    const int rows = row_count(x);
    Tensor y(x.shape());
    for (int r = 0; r < rows; ++r) {
        const double* in = x.data() + static_cast<std::size_t>(r) * cols;
        double* out = y.data() + static_cast<std::size_t>(r) * cols;
        double mx = *std::max_element(in, in + cols);
        double total = 0.0;
        for (int c = 0; c < cols; ++c) total += out[c] = std::exp(in[c] - mx);
        for (int c = 0; c < cols; ++c) out[c] /= total;
    }
    // Backward recomputes the probabilities from the input rather than
    // holding a second copy of the output.
    return a.tape()->record("softmax", std::move(y), {a}, [a, rows, cols](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        const Tensor& x = t.value(a);
        Tensor& dx = t.grad_buffer(a);
        std::vector<double> p(cols);
        for (int r = 0; r < rows; ++r) {
            const double* in = x.data() + static_cast<std::size_t>(r) * cols;
            const double* gr = g.data() + static_cast<std::size_t>(r) * cols;
            double mx = *std::max_element(in, in + cols);
            double total = 0.0;
            for (int c = 0; c < cols; ++c) total += p[c] = std::exp(in[c] - mx);
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) {
                p[c] /= total;
                dot += p[c] * gr[c];
            }
            for (int c = 0; c < cols; ++c) dx[static_cast<std::size_t>(r) * cols + c] += p[c] * (gr[c] - dot);
        }
    });
}

Var log_softmax_lastdim(Var a) {
    const Tensor& x = a.value();
    const int cols = x.shape().back();
    const int rows = row_count(x);
    Tensor y(x.shape());
    for (int r = 0; r < rows; ++r) {
        const double* in = x.data() + static_cast<std::size_t>(r) * cols;
        double* out = y.data() + static_cast<std::size_t>(r) * cols;
        double mx = *std::max_element(in, in + cols);
        double total = 0.0;
        for (int c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
        double lse = mx + std::log(total);
        for (int c = 0; c < cols; ++c) out[c] = in[c] - lse;
    }
    return a.tape()->record("log_softmax", std::move(y), {a}, [a, rows, cols](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        const Tensor& x = t.value(a);
        Tensor& dx = t.grad_buffer(a);
        for (int r = 0; r < rows; ++r) {
            const double* in = x.data() + static_cast<std::size_t>(r) * cols;
            const double* gr = g.data() + static_cast<std::size_t>(r) * cols;
            double mx = *std::max_element(in, in + cols);
            double total = 0.0;
            for (int c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
            double gsum = 0.0;
            for (int c = 0; c < cols; ++c) gsum += gr[c];
            for (int c = 0; c < cols; ++c) dx[static_cast<std::size_t>(r) * cols + c] += gr[c] - std::exp(in[c] - mx) / total * gsum;
        }
    });
}

Var sum(Var a) {
    const Tensor& x = a.value();
    double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return a.tape()->record("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& d = t.grad_buffer(a);
        for (double& v : d.values()) v += g[0];
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var avg_pool_seq(Var a) {
    const Tensor& x = a.value();
    require_rank2("avg_pool_seq", x);
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor y(Shape{1, cols});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) y[c] += x.at(r, c);
    for (int c = 0; c < cols; ++c) y[c] /= rows;
    return a.tape()->record("avg_pool_seq", std::move(y), {a}, [a, rows, cols](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& d = t.grad_buffer(a);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) d.at(r, c) += g[c] / rows;
    });
}

Var pick(Var a, std::size_t flat_index) {
    if (flat_index >= a.value().size()) {
        throw ShapeError("pick: index " + std::to_string(flat_index) + " outside " + shape_string(a.shape()));
    }
    return a.tape()->record("pick", Tensor::scalar(a.value()[flat_index]), {a}, [a, flat_index](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) t.grad_buffer(a)[flat_index] += g[0];
    });
}

Var gather_rows(Var table, const std::vector<int>& rows) {
    const Tensor& w = table.value();
    require_rank2("gather_rows", w);
    const int cols = w.dim(1);
    if (rows.empty()) throw ShapeError("gather_rows: no rows requested");
    Tensor y(Shape{static_cast<int>(rows.size()), cols});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= w.dim(0)) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " outside " + shape_string(w.shape()));
        }
        for (int c = 0; c < cols; ++c) y.at(static_cast<int>(r), c) = w.at(rows[r], c);
    }
    return table.tape()->record("gather_rows", std::move(y), {table}, [table, rows, cols](Tape& t, const Tensor& g) {
        if (!t.needs_grad(table)) return;
        Tensor& d = t.grad_buffer(table);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int c = 0; c < cols; ++c) d.at(rows[r], c) += g.at(static_cast<int>(r), c);
    });
}

Var conv2d(Var x, Var w, int stride) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || stride < 1) {
        throw ShapeError("conv2d: shape mismatch " + shape_string(xv.shape()) + " vs " + shape_string(wv.shape()));
    }
    kernels::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), stride};
    Tensor y(Shape{geo.batch, geo.out_channels, geo.out_height(), geo.out_width()});
    kernels::conv2d_forward(geo, xv.data(), wv.data(), y.data());
    return x.tape()->record("conv2d", std::move(y), {x, w}, [x, w, geo](Tape& t, const Tensor& g) {
        double* dx = t.needs_grad(x) ? t.grad_buffer(x).data() : nullptr;
        double* dw = t.needs_grad(w) ? t.grad_buffer(w).data() : nullptr;
        kernels::conv2d_backward(geo, t.value(x).data(), t.value(w).data(), g.data(), dx, dw);
    });
}

Var global_avg_pool(Var x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw ShapeError("global_avg_pool: expected (B, C, H, W), got " + shape_string(v.shape()));
    const int b = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
    Tensor y(Shape{b, c});
    for (int i = 0; i < b * c; ++i) {
        double s = 0.0;
        for (int p = 0; p < hw; ++p) s += v[static_cast<std::size_t>(i) * hw + p];
        y[i] = s / hw;
    }
    return x.tape()->record("global_avg_pool", std::move(y), {x}, [x, b, c, hw](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& d = t.grad_buffer(x);
        for (int i = 0; i < b * c; ++i)
            for (int p = 0; p < hw; ++p) d[static_cast<std::size_t>(i) * hw + p] += g[i] / hw;
    });
}

}  // namespace evoqa
