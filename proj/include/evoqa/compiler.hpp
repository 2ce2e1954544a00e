#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evoqa/autodiff.hpp"
#include "evoqa/graph.hpp"

namespace evoqa {

struct ModelDims {
    int vocab = 50;
    int embed_d = 16;
    /// Width of every LSTM output (split evenly across directions), of the
    /// attention projection and of the output-layer scorer.
    int hidden_d = 16;
    int max_span_len = 15;
};

/// Raised when a graph cannot be lowered; names the offending node.
class CompileError : public std::runtime_error {
public:
    CompileError(NodeId node, const std::string& what) : std::runtime_error(what), node_(node) {}
    NodeId node() const { return node_; }

private:
    NodeId node_;
};

struct ToyQAExample {
    std::vector<int> doc;
    std::vector<int> question;
    int answer_start = 0;
    int answer_end = 0;

    bool operator==(const ToyQAExample&) const = default;
};

struct SpanPrediction {
    std::vector<double> start_dist;
    std::vector<double> end_dist;
    int start = 0;
    int end = 0;
};

/// One node of the execution plan, in topological order.
struct PlannedNode {
    NodeId id = 0;
    LayerKind kind = LayerKind::InputDoc;
    Stream stream = Stream::Doc;
    /// Data inputs. For attention the first entry is the primary input whose
    /// rows are attended from; for the output layer it is the document feed.
    std::vector<NodeId> inputs;
    std::vector<NodeId> skip_inputs;
    int dim = 0;
};

class CompiledModel {
public:
    CompiledModel(ModelGraph graph, ModelDims dims, std::vector<PlannedNode> plan, ParameterStore params);

    const ModelGraph& graph() const { return graph_; }
    const ModelDims& dims() const { return dims_; }
    const std::vector<PlannedNode>& plan() const { return plan_; }
    const PlannedNode& planned(NodeId id) const;
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    struct Logits {
        Var start_logp;  // (1 x len_doc) log-probabilities
        Var end_logp;
    };
    /// Records the network on tape for one example.
    Logits run(Tape& tape, const ToyQAExample& example);

private:
    ModelGraph graph_;
    ModelDims dims_;
    std::vector<PlannedNode> plan_;
    ParameterStore params_;
};

/// Shape inference plus seeded parameter initialization. Requires a valid
/// graph; throws CompileError when streams of different length meet.
CompiledModel compile(const ModelGraph& graph, const ModelDims& dims, std::uint64_t seed);

/// Start/end distributions and the band-constrained decode.
SpanPrediction forward(CompiledModel& model, const ToyQAExample& example);

/// -log P^S(answer_start) - log P^E(answer_end).
Var example_loss(Tape& tape, CompiledModel& model, const ToyQAExample& example);

/// argmax of start[s] * end[e] over s <= e <= s + max_span_len; the first
/// maximal pair in (s, e) order wins ties.
std::pair<int, int> decode_span(const std::vector<double>& start, const std::vector<double>& end, int max_span_len);

/// Every admissible pair attaining the maximal product.
std::vector<std::pair<int, int>> optimal_spans(const std::vector<double>& start, const std::vector<double>& end, int max_span_len,
                                               double rel_tol = 0.0);

struct ToyDataConfig {
    int n_examples = 2000;
    /// Held-out examples; drawn from a separate generator stream.
    int n_dev = 500;
    int len_doc = 20;
    int needle_min = 1;
    int needle_max = 3;
    int vocab = 50;
    std::uint64_t seed = 0;
};

struct ToyDataset {
    std::vector<ToyQAExample> train;
    std::vector<ToyQAExample> dev;
};

/// Needle task: the question is a contiguous run of the document that
/// occurs nowhere else in it, and the answer is where it sits.
ToyDataset make_toy_dataset(const ToyDataConfig& config);

struct TrainConfig {
    int epochs = 30;
    double lr = 0.2;
    /// Gradient-norm clip per update; 0 disables.
    double clip_norm = 5.0;
    /// Examples per update.
    int batch_size = 1;
    /// Stop after the first epoch whose dev EM reaches this; 0 disables.
    double target_em = 0.0;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> epoch_loss;
    std::vector<double> dev_em;
    double final_em = 0.0;
    int epochs_run = 0;
};

/// Plain SGD on the summed start/end NLL, shuffling every epoch.
TrainResult train(CompiledModel& model, const std::vector<ToyQAExample>& train_set, const std::vector<ToyQAExample>& dev_set,
                  const TrainConfig& config);

double exact_match(CompiledModel& model, const std::vector<ToyQAExample>& examples);

}  // namespace evoqa
