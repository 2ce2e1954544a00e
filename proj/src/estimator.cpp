#include "evoqa/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "evoqa/errors.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'Q', 'A', 'E', 'S', 'T', '1'};
// Rows per forward pass when predicting many tensors; bounds tape memory.
constexpr std::size_t kPredictChunk = 8;

std::string block_name(int stage, int block) { return "s" + std::to_string(stage) + ".b" + std::to_string(block); }

Tensor he_normal(Shape shape, RandomSource& rng) {
    const int fan_in = shape[1] * shape[2] * shape[3];
    const double sd = std::sqrt(2.0 / fan_in);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = sd * rng.normal();
    return t;
}

int stage_channels(const EstimatorConfig& c, int stage) { return c.channels << stage; }

void check_config(const EstimatorConfig& c) {
    if (c.n < 1 || c.channels < 1 || c.stages < 1 || c.blocks_per_stage < 1) {
        throw std::invalid_argument("estimator config: n, channels, stages and blocks_per_stage must be positive");
    }
}

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw SchemaError("estimator checkpoint " + path.string() + ": truncated");
    return v;
}

}  // namespace

Estimator::Estimator(const EstimatorConfig& config) : config_(config) {
    check_config(config_);
    RandomSource rng(config_.seed);
    params_.add("stem", he_normal(Shape{config_.channels, kRelationKinds, 3, 3}, rng));
    int in = config_.channels;
    for (int s = 0; s < config_.stages; ++s) {
        const int out = stage_channels(config_, s);
        for (int b = 0; b < config_.blocks_per_stage; ++b) {
            const std::string name = block_name(s, b);
            params_.add(name + ".conv1", he_normal(Shape{out, in, 3, 3}, rng));
            params_.add(name + ".conv2", he_normal(Shape{out, out, 3, 3}, rng));
            if (in != out) params_.add(name + ".proj", he_normal(Shape{out, in, 1, 1}, rng));
            in = out;
        }
    }
    Tensor w(Shape{1, in});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    params_.add("head.w", std::move(w));
    params_.add("head.b", Tensor(Shape{1}));
}

template <class Store>
Var Estimator::run(Tape& tape, Var input, Store& store) const {
    const Shape& s = input.shape();
    if (s.size() != 4 || s[1] != kRelationKinds || s[2] != config_.n || s[3] != config_.n) {
        throw ShapeError("estimator expects (B, " + std::to_string(kRelationKinds) + ", " + std::to_string(config_.n) + ", " +
                         std::to_string(config_.n) + "), got " + shape_string(s));
    }
    Var x = conv2d(input, tape.param(store, "stem"), 1);
    for (int st = 0; st < config_.stages; ++st) {
        for (int b = 0; b < config_.blocks_per_stage; ++b) {
            const std::string name = block_name(st, b);
            const int stride = (st > 0 && b == 0) ? 2 : 1;
            Var pre = relu(x);
            Var h = conv2d(pre, tape.param(store, name + ".conv1"), stride);
            h = conv2d(relu(h), tape.param(store, name + ".conv2"), 1);
            Var shortcut = x;
            if (store.contains(name + ".proj")) {
                shortcut = conv2d(pre, tape.param(store, name + ".proj"), stride);
            } else if (stride != 1) {
                throw std::logic_error("strided block without projection");
            }
            x = add(h, shortcut);
        }
    }
    Var pooled = global_avg_pool(relu(x));
    return linear(pooled, tape.param(store, "head.w"), tape.param(store, "head.b"));
}

Var Estimator::logits(Tape& tape, Var input) { return run(tape, input, params_); }

Var Estimator::logits(Tape& tape, Var input) const { return run(tape, input, params_); }

Tensor Estimator::batch_input(const std::vector<const RelationTensor*>& tensors) const {
    const std::size_t plane = static_cast<std::size_t>(kRelationKinds) * config_.n * config_.n;
    Tensor out(Shape{static_cast<int>(tensors.size()), kRelationKinds, config_.n, config_.n});
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i]->n() != config_.n) {
            throw ShapeError("estimator input size " + std::to_string(tensors[i]->n()) + " does not match model size " +
                             std::to_string(config_.n));
        }
        std::vector<double> cf = tensors[i]->channels_first();
        std::copy(cf.begin(), cf.end(), out.data() + i * plane);
    }
    return out;
}

std::vector<double> Estimator::predict_batch(const std::vector<RelationTensor>& tensors) const {
    std::vector<double> out;
    out.reserve(tensors.size());
    for (std::size_t start = 0; start < tensors.size(); start += kPredictChunk) {
        std::vector<const RelationTensor*> chunk;
        for (std::size_t i = start; i < std::min(tensors.size(), start + kPredictChunk); ++i) chunk.push_back(&tensors[i]);
        Tape tape(false);
        tape.set_grad_enabled(false);
        Var z = logits(tape, tape.constant(batch_input(chunk)));
        for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(sigmoid(z.value()[i]));
    }
    return out;
}

double Estimator::predict(const RelationTensor& tensor) const { return predict_batch({tensor}).front(); }

double Estimator::predict(const ModelGraph& graph) const { return predict(encode(graph, config_.n)); }

Var Estimator::loss(Tape& tape, const std::vector<const TrainingPair*>& batch) {
    std::vector<const RelationTensor*> tensors;
    Tensor target(Shape{static_cast<int>(batch.size()), 1});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        tensors.push_back(&batch[i]->tensor);
        target[i] = batch[i]->actual;
    }
    Var y = sigmoid(logits(tape, tape.constant(batch_input(tensors))));
    Var diff = sub(y, tape.constant(std::move(target)));
    return mean(mul(diff, diff));
}

std::vector<double> Estimator::fit(const std::vector<TrainingPair>& pairs, const FitConfig& config) {
    if (pairs.empty()) throw std::invalid_argument("estimator fit needs at least one training pair");
    if (config.steps < 0 || config.batch_size < 1) throw std::invalid_argument("estimator fit: steps >= 0 and batch_size >= 1 required");
    RandomSource rng(config.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch_size = std::min<std::size_t>(config.batch_size, pairs.size());

    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    for (const auto& [name, e] : params_.entries()) moments.emplace(name, std::make_pair(Tensor(e.value.shape()), Tensor(e.value.shape())));
    const bool adam = config.optimizer == Optimizer::Adam;

    std::vector<double> curve;
    curve.reserve(config.steps);
    for (int step = 0; step < config.steps; ++step) {
        std::vector<const TrainingPair*> batch;
        while (batch.size() < batch_size) {
            if (cursor == order.size()) {
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
                cursor = 0;
            }
            batch.push_back(&pairs[order[cursor++]]);
        }
        params_.zero_grad();
        Tape tape;
        Var l = loss(tape, batch);
        const double lv = l.value()[0];
        if (!std::isfinite(lv)) throw NumericError("estimator loss became non-finite at step " + std::to_string(step));
        tape.backward(l);
        double scale_by = 1.0;
        if (config.clip_norm > 0.0) {
            const double norm = params_.grad_norm();
            if (norm > config.clip_norm) scale_by = config.clip_norm / norm;
        }
        const double c1 = 1.0 - std::pow(config.momentum, step + 1);
        const double c2 = 1.0 - std::pow(config.beta2, step + 1);
        for (auto& [name, e] : params_.entries()) {
            auto& [m, v] = moments.at(name);
            for (std::size_t i = 0; i < m.size(); ++i) {
                const double g = scale_by * e.grad[i];
                if (adam) {
                    m[i] = config.momentum * m[i] + (1.0 - config.momentum) * g;
                    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                    e.value[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
                } else {
                    m[i] = config.momentum * m[i] + g;
                    e.value[i] -= config.lr * m[i];
                }
            }
        }
        curve.push_back(lv);
    }
    params_.zero_grad();
    return curve;
}

void Estimator::zero_parameters() {
    for (auto& [name, e] : params_.entries()) e.value.fill(0.0);
}

void Estimator::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write estimator checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::int32_t>(out, config_.n);
    put<std::int32_t>(out, config_.channels);
    put<std::int32_t>(out, config_.stages);
    put<std::int32_t>(out, config_.blocks_per_stage);
    put<std::uint64_t>(out, config_.seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.entries().size()));
    for (const auto& [name, e] : params_.entries()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
        for (int d : e.value.shape()) put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(e.value.data()), static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing estimator checkpoint " + path.string());
}

Estimator Estimator::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open estimator checkpoint " + path.string());
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw SchemaError("estimator checkpoint " + path.string() + ": bad magic");
    }
    EstimatorConfig c;
    c.n = get<std::int32_t>(in, path);
    c.channels = get<std::int32_t>(in, path);
    c.stages = get<std::int32_t>(in, path);
    c.blocks_per_stage = get<std::int32_t>(in, path);
    c.seed = get<std::uint64_t>(in, path);
    Estimator est(c);
    const auto count = get<std::uint32_t>(in, path);
    if (count != est.params_.entries().size()) {
        throw SchemaError("estimator checkpoint " + path.string() + ": " + std::to_string(count) + " tensors, expected " +
                          std::to_string(est.params_.entries().size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in, path);
        if (len > 4096) throw SchemaError("estimator checkpoint " + path.string() + ": bad tensor name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw SchemaError("estimator checkpoint " + path.string() + ": truncated");
        if (!est.params_.contains(name)) throw SchemaError("estimator checkpoint " + path.string() + ": unexpected tensor " + name);
        Tensor& v = est.params_.value(name);
        const auto rank = get<std::uint32_t>(in, path);
        Shape shape;
        for (std::uint32_t d = 0; d < rank && d < 8; ++d) shape.push_back(get<std::int32_t>(in, path));
        if (shape != v.shape()) {
            throw SchemaError("estimator checkpoint " + path.string() + ": tensor " + name + " has shape " + shape_string(shape) +
                              ", expected " + shape_string(v.shape()));
        }
        if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
            throw SchemaError("estimator checkpoint " + path.string() + ": truncated");
        }
        if (!v.all_finite()) throw SchemaError("estimator checkpoint " + path.string() + ": non-finite values in " + name);
    }
    return est;
}

double l2_loss(double predicted, double actual) { return (predicted - actual) * (predicted - actual); }

double selection_probability(int epoch, int epoch_max) {
    if (epoch < 0) throw std::invalid_argument("selection_probability: epoch must be non-negative");
    if (epoch_max < 1) throw std::invalid_argument("selection_probability: epoch_max must be positive");
    return 0.5 + 0.5 * static_cast<double>(std::min(epoch, epoch_max)) / epoch_max;
}

std::vector<std::pair<double, std::size_t>> ranked_predictions(const Estimator& estimator, const std::vector<ModelGraph>& candidates) {
    std::vector<RelationTensor> tensors;
    std::vector<GraphHash> hashes;
    tensors.reserve(candidates.size());
    for (const ModelGraph& g : candidates) {
        ModelGraph c = canonicalize(g);
        hashes.push_back(hash_canonical(c));
        tensors.push_back(encode(c, estimator.config().n));
    }
    std::vector<double> pred = estimator.predict_batch(tensors);
    std::vector<std::pair<double, std::size_t>> out;
    for (std::size_t i = 0; i < pred.size(); ++i) out.emplace_back(pred[i], i);
    std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return hashes[a.second] < hashes[b.second];
    });
    return out;
}

std::vector<ModelGraph> rank_candidates(const Estimator& estimator, const std::vector<ModelGraph>& candidates) {
    std::vector<ModelGraph> out;
    out.reserve(candidates.size());
    for (const auto& [p, i] : ranked_predictions(estimator, candidates)) out.push_back(candidates[i]);
    return out;
}

}  // namespace evoqa
