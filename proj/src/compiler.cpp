#include "evoqa/compiler.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "evoqa/layers.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

namespace {

std::string node_name(NodeId id, LayerKind kind) { return std::string(to_string(kind)) + " node " + std::to_string(id); }

std::string prefix(NodeId id) { return "n" + std::to_string(id); }

std::string skip_proj_name(NodeId src, NodeId dst) { return "skip" + std::to_string(src) + "_" + std::to_string(dst) + ".proj"; }

Tensor uniform_init(Shape shape, double bound, RandomSource& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

// Weight of a linear map with the given fan-in.
Tensor linear_init(Shape shape, int fan_in, RandomSource& rng) { return uniform_init(std::move(shape), 1.0 / std::sqrt(fan_in), rng); }

void check_tokens(const std::vector<int>& tokens, int vocab, const char* what) {
    if (tokens.empty()) throw std::invalid_argument(std::string(what) + " is empty");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= vocab) {
            throw std::out_of_range(std::string(what) + " token " + std::to_string(tokens[i]) + " at " + std::to_string(i) +
                                    " is out of vocabulary (size " + std::to_string(vocab) + ")");
        }
    }
}

}  // namespace

CompiledModel::CompiledModel(ModelGraph graph, ModelDims dims, std::vector<PlannedNode> plan, ParameterStore params)
    : graph_(std::move(graph)), dims_(dims), plan_(std::move(plan)), params_(std::move(params)) {}

const PlannedNode& CompiledModel::planned(NodeId id) const {
    for (const PlannedNode& p : plan_)
        if (p.id == id) return p;
    throw std::out_of_range("no planned node " + std::to_string(id));
}

CompiledModel compile(const ModelGraph& graph, const ModelDims& dims, std::uint64_t seed) {
    if (dims.vocab <= 0 || dims.embed_d <= 0 || dims.hidden_d <= 0 || dims.max_span_len < 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (dims.hidden_d % 2 != 0) throw std::invalid_argument("hidden_d must be even (it is split across LSTM directions)");
    ValidationReport report = validate(graph);
    if (!report.ok()) throw GraphError("cannot compile an invalid graph: " + report.summary());

    const std::vector<NodeId> order = *topological_order(graph);
    const std::map<NodeId, Stream> streams = infer_streams(graph);
    std::map<NodeId, int> position, dim;
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = static_cast<int>(i);

    RandomSource rng(seed);
    ParameterStore params;
    params.add("embed", uniform_init(Shape{dims.vocab, dims.embed_d}, 1.0, rng));
    const int hidden = dims.hidden_d;

    std::vector<PlannedNode> plan;
    for (NodeId id : order) {
        PlannedNode node;
        node.id = id;
        node.kind = graph.kind(id);
        node.stream = streams.at(id);
        node.inputs = graph.predecessors(id, EdgeKind::Data);
        node.skip_inputs = graph.predecessors(id, EdgeKind::Skip);
        std::sort(node.inputs.begin(), node.inputs.end(), [&](NodeId a, NodeId b) {
            if (streams.at(a) != streams.at(b)) return streams.at(a) < streams.at(b);
            return position[a] < position[b];
        });
        if (node.kind != LayerKind::Output && node.stream == Stream::Mixed) {
            throw CompileError(id, node_name(id, node.kind) + " joins document-length and question-length sequences");
        }
        const std::string p = prefix(id);
        switch (node.kind) {
            case LayerKind::InputDoc:
            case LayerKind::InputQ: node.dim = dims.embed_d; break;
            case LayerKind::Lstm:
                add_lstm_params(params, p + ".fw", dim[node.inputs[0]], hidden / 2, rng);
                add_lstm_params(params, p + ".bw", dim[node.inputs[0]], hidden / 2, rng);
                node.dim = hidden;
                break;
            case LayerKind::Attention: {
                const int dx = dim[node.inputs[0]], dy = dim[node.inputs[1]];
                params.add(p + ".u", linear_init(Shape{hidden, dx}, dx, rng));
                params.add(p + ".d", Tensor(Shape{hidden}, 1.0));
                if (dy != dx) params.add(p + ".proj", linear_init(Shape{dy, dx}, dy, rng));
                // The attended rows are fused with the primary input and
                // projected back to its width.
                params.add(p + ".fuse.w", linear_init(Shape{dx, 3 * dx}, 3 * dx, rng));
                params.add(p + ".fuse.b", Tensor(Shape{dx}));
                node.dim = dx;
                break;
            }
            case LayerKind::Concat:
                for (NodeId in : node.inputs) node.dim += dim[in];
                break;
            case LayerKind::Output: {
                const int dp = dim[node.inputs[0]], dq = dim[node.inputs[1]];
                params.add("out.ws", linear_init(Shape{hidden, dp}, dp, rng));
                params.add("out.wq", linear_init(Shape{hidden, dq}, dq, rng));
                params.add("out.vs", linear_init(Shape{1, hidden}, hidden, rng));
                params.add("out.we", linear_init(Shape{hidden, dp}, dp, rng));
                params.add("out.ve", linear_init(Shape{1, hidden}, hidden, rng));
                add_gru_params(params, "out.gru", dp, dq, rng);
                break;
            }
        }
        for (NodeId src : node.skip_inputs) {
            if (streams.at(src) != node.stream) {
                throw CompileError(id, "skip " + std::to_string(src) + "->" + std::to_string(id) + " into " + node_name(id, node.kind) +
                                           " joins sequences of different length");
            }
            if (dim[src] != node.dim) params.add(skip_proj_name(src, id), linear_init(Shape{dim[src], node.dim}, dim[src], rng));
        }
        dim[id] = node.dim;
        plan.push_back(std::move(node));
    }
    return CompiledModel(graph, dims, std::move(plan), std::move(params));
}

CompiledModel::Logits CompiledModel::run(Tape& tape, const ToyQAExample& example) {
    check_tokens(example.doc, dims_.vocab, "document");
    check_tokens(example.question, dims_.vocab, "question");
    Var embed = tape.param(params_, "embed");
    std::map<NodeId, Var> out;
    for (const PlannedNode& node : plan_) {
        const std::string p = prefix(node.id);
        Var v;
        switch (node.kind) {
            case LayerKind::InputDoc: v = gather_rows(embed, example.doc); break;
            case LayerKind::InputQ: v = gather_rows(embed, example.question); break;
            case LayerKind::Lstm:
                v = bilstm(out.at(node.inputs[0]), bind_lstm(tape, params_, p + ".fw"), bind_lstm(tape, params_, p + ".bw"));
                break;
            case LayerKind::Attention: {
                Var x = out.at(node.inputs[0]);
                Var y = out.at(node.inputs[1]);
                if (params_.contains(p + ".proj")) y = matmul(y, tape.param(params_, p + ".proj"));
                Var att = symmetric_attention(x, y, tape.param(params_, p + ".u"), tape.param(params_, p + ".d")).values;
                v = linear(concat_lastdim({x, att, mul(x, att)}), tape.param(params_, p + ".fuse.w"), tape.param(params_, p + ".fuse.b"));
                break;
            }
            case LayerKind::Concat: {
                std::vector<Var> parts;
                for (NodeId in : node.inputs) parts.push_back(out.at(in));
                v = concat_lastdim(parts);
                break;
            }
            case LayerKind::Output: {
                Var u_p = out.at(node.inputs[0]);
                Var u_q = avg_pool_seq(out.at(node.inputs[1]));
                const int len = u_p.value().dim(0);
                Var w_q = tape.param(params_, "out.wq");
                Var hs = tanh(add_rowvec(matmul_nt(u_p, tape.param(params_, "out.ws")), matmul_nt(u_q, w_q)));
                Var s = reshape(matmul_nt(hs, tape.param(params_, "out.vs")), Shape{1, len});
                Var ctx = matmul(softmax_lastdim(s), u_p);
                Var v_q = gru_cell(ctx, u_q, bind_gru(tape, params_, "out.gru"));
                Var he = tanh(add_rowvec(matmul_nt(u_p, tape.param(params_, "out.we")), matmul_nt(v_q, w_q)));
                Var e = reshape(matmul_nt(he, tape.param(params_, "out.ve")), Shape{1, len});
                return Logits{log_softmax_lastdim(s), log_softmax_lastdim(e)};
            }
        }
        for (NodeId src : node.skip_inputs) {
            Var extra = out.at(src);
            const std::string proj = skip_proj_name(src, node.id);
            if (params_.contains(proj)) extra = matmul(extra, tape.param(params_, proj));
            v = add(v, extra);
        }
        out[node.id] = v;
    }
    throw GraphError("compiled plan has no output layer");
}

std::pair<int, int> decode_span(const std::vector<double>& start, const std::vector<double>& end, int max_span_len) {
    if (start.empty() || start.size() != end.size()) throw std::invalid_argument("decode_span needs two equal-length distributions");
    const int n = static_cast<int>(start.size());
    std::pair<int, int> best{0, 0};
    double best_p = -1.0;
    for (int s = 0; s < n; ++s) {
        const int last = std::min(n - 1, s + max_span_len);
        for (int e = s; e <= last; ++e) {
            const double p = start[s] * end[e];
            if (p > best_p) {
                best_p = p;
                best = {s, e};
            }
        }
    }
    return best;
}

std::vector<std::pair<int, int>> optimal_spans(const std::vector<double>& start, const std::vector<double>& end, int max_span_len,
                                               double rel_tol) {
    auto [bs, be] = decode_span(start, end, max_span_len);
    const double best = start[bs] * end[be];
    const int n = static_cast<int>(start.size());
    std::vector<std::pair<int, int>> out;
    for (int s = 0; s < n; ++s)
        for (int e = s; e <= std::min(n - 1, s + max_span_len); ++e)
            if (start[s] * end[e] >= best * (1.0 - rel_tol)) out.emplace_back(s, e);
    return out;
}

SpanPrediction forward(CompiledModel& model, const ToyQAExample& example) {
    Tape tape(false);
    tape.set_grad_enabled(false);
    CompiledModel::Logits logits = model.run(tape, example);
    SpanPrediction pred;
    for (double v : logits.start_logp.value().values()) pred.start_dist.push_back(std::exp(v));
    for (double v : logits.end_logp.value().values()) pred.end_dist.push_back(std::exp(v));
    std::tie(pred.start, pred.end) = decode_span(pred.start_dist, pred.end_dist, model.dims().max_span_len);
    return pred;
}

Var example_loss(Tape& tape, CompiledModel& model, const ToyQAExample& example) {
    const int len = static_cast<int>(example.doc.size());
    if (example.answer_start < 0 || example.answer_end < example.answer_start || example.answer_end >= len) {
        throw std::invalid_argument("answer span outside the document");
    }
    CompiledModel::Logits logits = model.run(tape, example);
    return scale(add(pick(logits.start_logp, example.answer_start), pick(logits.end_logp, example.answer_end)), -1.0);
}

double exact_match(CompiledModel& model, const std::vector<ToyQAExample>& examples) {
    if (examples.empty()) return 0.0;
    int hits = 0;
    for (const ToyQAExample& ex : examples) {
        SpanPrediction p = forward(model, ex);
        hits += p.start == ex.answer_start && p.end == ex.answer_end;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainResult train(CompiledModel& model, const std::vector<ToyQAExample>& train_set, const std::vector<ToyQAExample>& dev_set,
                  const TrainConfig& config) {
    if (train_set.empty()) throw std::invalid_argument("training set is empty");
    if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0.0)) throw std::invalid_argument("bad training configuration");
    ParameterStore& params = model.params();
    RandomSource base(config.seed);
    TrainResult result;
    std::vector<std::size_t> perm(train_set.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        RandomSource rng = base.derive(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

        double total = 0.0;
        for (std::size_t b = 0; b < perm.size(); b += config.batch_size) {
            const std::size_t stop = std::min(perm.size(), b + static_cast<std::size_t>(config.batch_size));
            params.zero_grad();
            for (std::size_t i = b; i < stop; ++i) {
                const std::string where = "training example " + std::to_string(perm[i]) + " in epoch " + std::to_string(epoch);
                Tape tape;
                try {
                    Var loss = example_loss(tape, model, train_set[perm[i]]);
                    const double value = loss.value()[0];
                    if (!std::isfinite(value)) throw NumericError("non-finite loss");
                    total += value;
                    tape.backward(loss);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " on " + where);
                }
            }
            const double n = static_cast<double>(stop - b);
            double step = config.lr / n;
            const double norm = params.grad_norm() / n;
            if (config.clip_norm > 0.0 && norm > config.clip_norm) step *= config.clip_norm / norm;
            params.sgd_step(step);
        }
        result.epoch_loss.push_back(total / static_cast<double>(train_set.size()));
        result.dev_em.push_back(exact_match(model, dev_set));
        result.final_em = result.dev_em.back();
        result.epochs_run = epoch + 1;
        if (config.target_em > 0.0 && result.final_em >= config.target_em) break;
    }
    return result;
}

ToyDataset make_toy_dataset(const ToyDataConfig& c) {
    if (c.n_examples < 1 || c.n_dev < 0 || c.len_doc < 1 || c.vocab < 2 || c.needle_min < 1 || c.needle_min > c.needle_max ||
        c.needle_max > c.len_doc) {
        throw std::invalid_argument("impossible toy-data geometry: needle lengths [" + std::to_string(c.needle_min) + ", " +
                                    std::to_string(c.needle_max) + "] in documents of " + std::to_string(c.len_doc) + " tokens over " +
                                    std::to_string(c.vocab) + " symbols");
    }
    auto occurrences = [](const std::vector<int>& doc, int start, int len) {
        int count = 0;
        for (int s = 0; s + len <= static_cast<int>(doc.size()); ++s)
            count += std::equal(doc.begin() + s, doc.begin() + s + len, doc.begin() + start);
        return count;
    };
    auto generate = [&](int n, RandomSource rng) {
        std::vector<ToyQAExample> out;
        out.reserve(n);
        for (int k = 0; k < n; ++k) {
            const int len = c.needle_min + static_cast<int>(rng.uniform_index(c.needle_max - c.needle_min + 1));
            ToyQAExample ex;
            ex.doc.resize(c.len_doc);
            for (int attempt = 0;; ++attempt) {
                if (attempt == 10000) throw std::invalid_argument("impossible toy-data geometry: cannot place a unique needle");
                for (int& t : ex.doc) t = static_cast<int>(rng.uniform_index(c.vocab));
                ex.answer_start = static_cast<int>(rng.uniform_index(c.len_doc - len + 1));
                if (occurrences(ex.doc, ex.answer_start, len) == 1) break;
            }
            ex.answer_end = ex.answer_start + len - 1;
            ex.question.assign(ex.doc.begin() + ex.answer_start, ex.doc.begin() + ex.answer_end + 1);
            out.push_back(std::move(ex));
        }
        return out;
    };
    RandomSource base(c.seed);
    return ToyDataset{generate(c.n_examples, base.derive(1)), generate(c.n_dev, base.derive(2))};
}

}  // namespace evoqa
