#include "evoqa/layers.hpp"

#include <cmath>
#include <memory>

#include "evoqa/kernels.hpp"

namespace evoqa {

namespace {

Tensor uniform_tensor(Shape shape, double bound, RandomSource& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

void add_recurrent(ParameterStore& store, const std::string& prefix, int gates, int in, int hidden, RandomSource& rng) {
    if (in <= 0 || hidden <= 0) throw ShapeError("recurrent layer '" + prefix + "' needs positive sizes");
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    store.add(prefix + ".w_ih", uniform_tensor(Shape{gates * hidden, in}, bound, rng));
    store.add(prefix + ".w_hh", uniform_tensor(Shape{gates * hidden, hidden}, bound, rng));
    store.add(prefix + ".b_ih", uniform_tensor(Shape{gates * hidden}, bound, rng));
    store.add(prefix + ".b_hh", uniform_tensor(Shape{gates * hidden}, bound, rng));
}

void check_recurrent(const char* op, int gates, const Var& w_ih, const Var& w_hh, const Var& b_ih, const Var& b_hh) {
    const Tensor& hh = w_hh.value();
    if (hh.rank() != 2 || hh.dim(0) != gates * hh.dim(1)) throw ShapeError(std::string(op) + ": bad w_hh " + shape_string(hh.shape()));
    const int rows = hh.dim(0);
    if (w_ih.value().rank() != 2 || w_ih.value().dim(0) != rows) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(w_ih.shape()) + " vs " + shape_string(hh.shape()));
    }
    if (static_cast<int>(b_ih.value().size()) != rows || static_cast<int>(b_hh.value().size()) != rows) {
        throw ShapeError(std::string(op) + ": bias shape mismatch " + shape_string(b_ih.shape()) + " vs " + shape_string(b_hh.shape()));
    }
}

void require_cols(const char* op, const Tensor& t, int cols, const Tensor& other) {
    if (t.rank() != 2 || t.dim(1) != cols) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(t.shape()) + " vs " + shape_string(other.shape()));
    }
}

// Pre-activations a (4H) to activations, written in place: i, f, o through
// the sigmoid and g through tanh.
void activate_lstm(double* a, int hidden) {
    for (int j = 0; j < 4 * hidden; ++j) {
        a[j] = (j >= 2 * hidden && j < 3 * hidden) ? std::tanh(a[j]) : sigmoid(a[j]);
    }
}

// Gate gradients for one row given the output gradients dh, dc_in (may be
// null), and the saved activations. Writes da (4H) and dc_prev (H, may be null).
void lstm_row_backward(int hidden, const double* gates, const double* tanh_c, const double* c_prev, const double* dh,
                       const double* dc_in, double* da, double* dc_prev) {
    const double *gi = gates, *gf = gates + hidden, *gg = gates + 2 * hidden, *go = gates + 3 * hidden;
    for (int j = 0; j < hidden; ++j) {
        const double dc = (dc_in ? dc_in[j] : 0.0) + dh[j] * go[j] * (1.0 - tanh_c[j] * tanh_c[j]);
        const double d_o = dh[j] * tanh_c[j];
        const double d_i = dc * gg[j];
        const double d_g = dc * gi[j];
        const double d_f = c_prev ? dc * c_prev[j] : 0.0;
        da[j] = d_i * gi[j] * (1.0 - gi[j]);
        da[hidden + j] = d_f * gf[j] * (1.0 - gf[j]);
        da[2 * hidden + j] = d_g * (1.0 - gg[j] * gg[j]);
        da[3 * hidden + j] = d_o * go[j] * (1.0 - go[j]);
        if (dc_prev) dc_prev[j] = dc * gf[j];
    }
}

void add_column_sums(Tensor& db, const std::vector<double>& da, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) db[c] += da[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace

void add_lstm_params(ParameterStore& store, const std::string& prefix, int in, int hidden, RandomSource& rng) {
    add_recurrent(store, prefix, 4, in, hidden, rng);
}

void add_gru_params(ParameterStore& store, const std::string& prefix, int in, int hidden, RandomSource& rng) {
    add_recurrent(store, prefix, 3, in, hidden, rng);
}

LstmParams bind_lstm(Tape& tape, ParameterStore& store, const std::string& prefix) {
    return {tape.param(store, prefix + ".w_ih"), tape.param(store, prefix + ".w_hh"), tape.param(store, prefix + ".b_ih"),
            tape.param(store, prefix + ".b_hh")};
}

GruParams bind_gru(Tape& tape, ParameterStore& store, const std::string& prefix) {
    return {tape.param(store, prefix + ".w_ih"), tape.param(store, prefix + ".w_hh"), tape.param(store, prefix + ".b_ih"),
            tape.param(store, prefix + ".b_hh")};
}

LstmState lstm_cell(Var x, Var h, Var c, const LstmParams& p) {
    check_recurrent("lstm_cell", 4, p.w_ih, p.w_hh, p.b_ih, p.b_hh);
    const int hidden = p.hidden();
    const int in = p.w_ih.value().dim(1);
    const Tensor& xv = x.value();
    require_cols("lstm_cell", xv, in, p.w_ih.value());
    const int batch = xv.dim(0);
    require_cols("lstm_cell", h.value(), hidden, p.w_hh.value());
    require_same_shape("lstm_cell", h.shape(), c.shape());
    if (h.value().dim(0) != batch) throw ShapeError("lstm_cell: shape mismatch " + shape_string(xv.shape()) + " vs " + shape_string(h.shape()));

    const int g4 = 4 * hidden;
    auto gates = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * g4);
    auto tanh_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * hidden);
    double* a = gates->data();
    kernels::gemm(false, true, batch, g4, in, xv.data(), p.w_ih.value().data(), a, false);
    kernels::gemm(false, true, batch, g4, hidden, h.value().data(), p.w_hh.value().data(), a, true);
    Tensor out(Shape{batch, 2 * hidden});
    const Tensor& cv = c.value();
    for (int b = 0; b < batch; ++b) {
        double* row = a + static_cast<std::size_t>(b) * g4;
        for (int j = 0; j < g4; ++j) row[j] += p.b_ih.value()[j] + p.b_hh.value()[j];
        activate_lstm(row, hidden);
        for (int j = 0; j < hidden; ++j) {
            const double cn = row[hidden + j] * cv.at(b, j) + row[j] * row[2 * hidden + j];
            const double tc = std::tanh(cn);
            (*tanh_c)[static_cast<std::size_t>(b) * hidden + j] = tc;
            out.at(b, j) = row[3 * hidden + j] * tc;
            out.at(b, hidden + j) = cn;
        }
    }

    Var both = x.tape()->record(
        "lstm_cell", std::move(out), {x, h, c, p.w_ih, p.w_hh, p.b_ih, p.b_hh},
        [x, h, c, p, gates, tanh_c, batch, in, hidden, g4](Tape& t, const Tensor& g) {
            std::vector<double> da(static_cast<std::size_t>(batch) * g4);
            std::vector<double> dc_prev(static_cast<std::size_t>(batch) * hidden);
            std::vector<double> dh(hidden), dc(hidden);
            for (int b = 0; b < batch; ++b) {
                for (int j = 0; j < hidden; ++j) {
                    dh[j] = g.at(b, j);
                    dc[j] = g.at(b, hidden + j);
                }
                const std::size_t gb = static_cast<std::size_t>(b) * g4, hb = static_cast<std::size_t>(b) * hidden;
                lstm_row_backward(hidden, gates->data() + gb, tanh_c->data() + hb, t.value(c).data() + hb, dh.data(), dc.data(),
                                  da.data() + gb, dc_prev.data() + hb);
            }
            if (t.needs_grad(x)) kernels::gemm(false, false, batch, in, g4, da.data(), t.value(p.w_ih).data(), t.grad_buffer(x).data(), true);
            if (t.needs_grad(h)) {
                kernels::gemm(false, false, batch, hidden, g4, da.data(), t.value(p.w_hh).data(), t.grad_buffer(h).data(), true);
            }
            if (t.needs_grad(c)) {
                Tensor& d = t.grad_buffer(c);
                for (std::size_t i = 0; i < dc_prev.size(); ++i) d[i] += dc_prev[i];
            }
            if (t.needs_grad(p.w_ih)) kernels::gemm(true, false, g4, in, batch, da.data(), t.value(x).data(), t.grad_buffer(p.w_ih).data(), true);
            if (t.needs_grad(p.w_hh)) {
                kernels::gemm(true, false, g4, hidden, batch, da.data(), t.value(h).data(), t.grad_buffer(p.w_hh).data(), true);
            }
            if (t.needs_grad(p.b_ih)) add_column_sums(t.grad_buffer(p.b_ih), da, batch, g4);
            if (t.needs_grad(p.b_hh)) add_column_sums(t.grad_buffer(p.b_hh), da, batch, g4);
        });
    return {slice_cols(both, 0, hidden), slice_cols(both, hidden, hidden)};
}

Var lstm_sequence(Var xs, const LstmParams& p, bool reverse) {
    check_recurrent("lstm_sequence", 4, p.w_ih, p.w_hh, p.b_ih, p.b_hh);
    const int hidden = p.hidden();
    const int in = p.w_ih.value().dim(1);
    const Tensor& xv = xs.value();
    require_cols("lstm_sequence", xv, in, p.w_ih.value());
    const int steps = xv.dim(0);
    const int g4 = 4 * hidden;

    // Saved per step, indexed by sequence position: activations, cell state
    // and tanh of the cell state.
    struct Saved {
        std::vector<double> gates, cell, tanh_c;
    };
    auto saved = std::make_shared<Saved>();
    saved->gates.resize(static_cast<std::size_t>(steps) * g4);
    saved->cell.resize(static_cast<std::size_t>(steps) * hidden);
    saved->tanh_c.resize(saved->cell.size());
    kernels::gemm(false, true, steps, g4, in, xv.data(), p.w_ih.value().data(), saved->gates.data(), false);

    Tensor out(Shape{steps, hidden});
    const double* w_hh = p.w_hh.value().data();
    for (int s = 0; s < steps; ++s) {
        const int t = reverse ? steps - 1 - s : s;
        const int prev = reverse ? t + 1 : t - 1;
        double* a = saved->gates.data() + static_cast<std::size_t>(t) * g4;
        if (s > 0) kernels::gemm(false, true, 1, g4, hidden, out.data() + static_cast<std::size_t>(prev) * hidden, w_hh, a, true);
        for (int j = 0; j < g4; ++j) a[j] += p.b_ih.value()[j] + p.b_hh.value()[j];
        activate_lstm(a, hidden);
        for (int j = 0; j < hidden; ++j) {
            const double c_prev = s > 0 ? saved->cell[static_cast<std::size_t>(prev) * hidden + j] : 0.0;
            const double cn = a[hidden + j] * c_prev + a[j] * a[2 * hidden + j];
            const double tc = std::tanh(cn);
            saved->cell[static_cast<std::size_t>(t) * hidden + j] = cn;
            saved->tanh_c[static_cast<std::size_t>(t) * hidden + j] = tc;
            out.at(t, j) = a[3 * hidden + j] * tc;
        }
    }

    return xs.tape()->record(
        "lstm_sequence", std::move(out), {xs, p.w_ih, p.w_hh, p.b_ih, p.b_hh},
        [xs, p, saved, steps, in, hidden, g4, reverse](Tape& t, const Tensor& g) {
            // Hidden states are recomputable from the saved activations.
            std::vector<double> h_all(static_cast<std::size_t>(steps) * hidden);
            for (std::size_t i = 0; i < h_all.size(); ++i) {
                const std::size_t row = i / hidden, j = i % hidden;
                h_all[i] = saved->gates[row * g4 + 3 * hidden + j] * saved->tanh_c[i];
            }
            std::vector<double> da(static_cast<std::size_t>(steps) * g4);
            std::vector<double> h_prev(static_cast<std::size_t>(steps) * hidden, 0.0);
            std::vector<double> dh(hidden), dh_next(hidden, 0.0), dc_next(hidden, 0.0), dc_prev(hidden);
            const double* w_hh = t.value(p.w_hh).data();
            for (int s = steps - 1; s >= 0; --s) {
                const int tt = reverse ? steps - 1 - s : s;
                const int prev = reverse ? tt + 1 : tt - 1;
                for (int j = 0; j < hidden; ++j) dh[j] = g.at(tt, j) + dh_next[j];
                const double* c_prev = s > 0 ? saved->cell.data() + static_cast<std::size_t>(prev) * hidden : nullptr;
                double* da_t = da.data() + static_cast<std::size_t>(tt) * g4;
                lstm_row_backward(hidden, saved->gates.data() + static_cast<std::size_t>(tt) * g4,
                                  saved->tanh_c.data() + static_cast<std::size_t>(tt) * hidden, c_prev, dh.data(), dc_next.data(), da_t,
                                  dc_prev.data());
                dc_next = dc_prev;
                if (s > 0) {
                    kernels::gemm(false, false, 1, hidden, g4, da_t, w_hh, dh_next.data(), false);
                    std::copy(h_all.begin() + static_cast<std::ptrdiff_t>(prev) * hidden,
                              h_all.begin() + static_cast<std::ptrdiff_t>(prev + 1) * hidden,
                              h_prev.begin() + static_cast<std::ptrdiff_t>(tt) * hidden);
                }
            }
            if (t.needs_grad(xs)) kernels::gemm(false, false, steps, in, g4, da.data(), t.value(p.w_ih).data(), t.grad_buffer(xs).data(), true);
            if (t.needs_grad(p.w_ih)) kernels::gemm(true, false, g4, in, steps, da.data(), t.value(xs).data(), t.grad_buffer(p.w_ih).data(), true);
            if (t.needs_grad(p.w_hh)) kernels::gemm(true, false, g4, hidden, steps, da.data(), h_prev.data(), t.grad_buffer(p.w_hh).data(), true);
            if (t.needs_grad(p.b_ih)) add_column_sums(t.grad_buffer(p.b_ih), da, steps, g4);
            if (t.needs_grad(p.b_hh)) add_column_sums(t.grad_buffer(p.b_hh), da, steps, g4);
        });
}

Var bilstm(Var xs, const LstmParams& forward, const LstmParams& backward) {
    return concat_lastdim({lstm_sequence(xs, forward, false), lstm_sequence(xs, backward, true)});
}

Var gru_cell(Var x, Var h, const GruParams& p) {
    check_recurrent("gru_cell", 3, p.w_ih, p.w_hh, p.b_ih, p.b_hh);
    const int hidden = p.hidden();
    require_cols("gru_cell", x.value(), p.w_ih.value().dim(1), p.w_ih.value());
    require_cols("gru_cell", h.value(), hidden, p.w_hh.value());
    Var gi = linear(x, p.w_ih, p.b_ih);
    Var gh = linear(h, p.w_hh, p.b_hh);
    Var r = sigmoid(add(slice_cols(gi, 0, hidden), slice_cols(gh, 0, hidden)));
    Var z = sigmoid(add(slice_cols(gi, hidden, hidden), slice_cols(gh, hidden, hidden)));
    Var n = tanh(add(slice_cols(gi, 2 * hidden, hidden), mul(r, slice_cols(gh, 2 * hidden, hidden))));
    return add(n, mul(z, sub(h, n)));
}

AttentionResult symmetric_attention(Var x, Var y, Var u, Var d) {
    const Tensor& uv = u.value();
    if (uv.rank() != 2) throw ShapeError("symmetric_attention: bad U " + shape_string(uv.shape()));
    require_cols("symmetric_attention", x.value(), uv.dim(1), uv);
    require_cols("symmetric_attention", y.value(), uv.dim(1), uv);
    if (static_cast<int>(d.value().size()) != uv.dim(0)) {
        throw ShapeError("symmetric_attention: shape mismatch " + shape_string(uv.shape()) + " vs " + shape_string(d.shape()));
    }
    Var fx = swish(matmul_nt(x, u));
    Var fy = swish(matmul_nt(y, u));
    Var scores = matmul_nt(mul_rowvec(fx, d), fy);
    Var weights = softmax_lastdim(scores);
    return {matmul(weights, y), scores, weights};
}

}  // namespace evoqa
