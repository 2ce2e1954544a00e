#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evoqa/autodiff.hpp"
#include "evoqa/encoder.hpp"
#include "evoqa/graph.hpp"

namespace evoqa {

struct EstimatorConfig {
    /// Input side length; relation tensors must be encoded at this size.
    int n = kDefaultMaxNodes;
    /// Width of the first stage; each later stage doubles it.
    int channels = 16;
    int stages = 3;
    int blocks_per_stage = 2;
    std::uint64_t seed = 0;

    bool operator==(const EstimatorConfig&) const = default;
};

enum class Optimizer { Momentum, Adam };

struct FitConfig {
    int steps = 200;
    Optimizer optimizer = Optimizer::Adam;
    double lr = 0.01;
    /// Heavy-ball coefficient, or Adam's first-moment decay.
    double momentum = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 16;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

struct TrainingPair {
    RelationTensor tensor;
    double actual = 0.0;
};

/// Pre-activation residual CNN over relation tensors with a sigmoid head.
class Estimator {
public:
    explicit Estimator(const EstimatorConfig& config = {});

    const EstimatorConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    /// Predicted fitness in (0, 1). Pure; safe to call concurrently.
    double predict(const RelationTensor& tensor) const;
    std::vector<double> predict_batch(const std::vector<RelationTensor>& tensors) const;
    double predict(const ModelGraph& graph) const;

    /// Records the pre-sigmoid scores (B x 1) for a (B, K, n, n) input. A
    /// const model binds its parameters as constants.
    Var logits(Tape& tape, Var input);
    Var logits(Tape& tape, Var input) const;
    /// Mean of (sigmoid(score) - actual)^2 over the batch.
    Var loss(Tape& tape, const std::vector<const TrainingPair*>& batch);

    /// Minibatch gradient descent on the L2 loss, continuing from the
    /// current parameters (optimizer state starts at zero on every call).
    /// Returns the mean batch loss of every step.
    std::vector<double> fit(const std::vector<TrainingPair>& pairs, const FitConfig& config);

    /// Sets every parameter to zero, so predict() returns exactly 0.5.
    void zero_parameters();

    void save(const std::filesystem::path& path) const;
    static Estimator load(const std::filesystem::path& path);

private:
    Tensor batch_input(const std::vector<const RelationTensor*>& tensors) const;
    template <class Store>
    Var run(Tape& tape, Var input, Store& store) const;

    EstimatorConfig config_;
    ParameterStore params_;
};

/// (y - target)^2 for one prediction.
double l2_loss(double predicted, double actual);

/// Adoption probability 0.5 + 0.5 * min(epoch, epoch_max) / epoch_max.
double selection_probability(int epoch, int epoch_max = 100);

/// Stable sort by predicted fitness, descending; ties by ascending graph
/// hash. Every candidate must be encodable at the estimator's size.
std::vector<ModelGraph> rank_candidates(const Estimator& estimator, const std::vector<ModelGraph>& candidates);

/// Pairs of (prediction, candidate index) in ranked order.
std::vector<std::pair<double, std::size_t>> ranked_predictions(const Estimator& estimator, const std::vector<ModelGraph>& candidates);

}  // namespace evoqa
