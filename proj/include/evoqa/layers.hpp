#pragma once

#include <string>

#include "evoqa/autodiff.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

/// Gate rows in order i, f, g, o: w_ih (4H x in), w_hh (4H x H), biases (4H).
struct LstmParams {
    Var w_ih, w_hh, b_ih, b_hh;
    int hidden() const { return w_hh.value().dim(1); }
};

/// Gate rows in order r, z, n: w_ih (3H x in), w_hh (3H x H), biases (3H).
struct GruParams {
    Var w_ih, w_hh, b_ih, b_hh;
    int hidden() const { return w_hh.value().dim(1); }
};

struct LstmState {
    Var h, c;
};

struct AttentionResult {
    Var values;   // (n x d): row i is sum_j weights(i, j) * y_j
    Var scores;   // (n x m) raw scores before the softmax
    Var weights;  // (n x m)
};

/// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization under prefix.{w_ih,w_hh,b_ih,b_hh}.
void add_lstm_params(ParameterStore& store, const std::string& prefix, int in, int hidden, RandomSource& rng);
void add_gru_params(ParameterStore& store, const std::string& prefix, int in, int hidden, RandomSource& rng);
LstmParams bind_lstm(Tape& tape, ParameterStore& store, const std::string& prefix);
GruParams bind_gru(Tape& tape, ParameterStore& store, const std::string& prefix);

/// One step on a batch: x (B x in), h and c (B x H).
LstmState lstm_cell(Var x, Var h, Var c, const LstmParams& p);

/// Runs the cell over the rows of xs (T x in) from a zero state and returns
/// the hidden states (T x H), in input order even when reverse is set.
Var lstm_sequence(Var xs, const LstmParams& p, bool reverse = false);

/// Forward and backward passes concatenated along features: (T x 2H).
Var bilstm(Var xs, const LstmParams& forward, const LstmParams& backward);

/// h' = (1 - z) * n + z * h.
Var gru_cell(Var x, Var h, const GruParams& p);

/// s(i, j) = swish(U x_i)^T diag(d) swish(U y_j) with U (k x dim) and d (k).
AttentionResult symmetric_attention(Var x, Var y, Var u, Var d);

}  // namespace evoqa
