#include "evoqa/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "evoqa/errors.hpp"
#include "evoqa/graph_io.hpp"

namespace evoqa {

namespace {

constexpr std::string_view kChosenNames[] = {"RANDOM", "ESTIMATOR", "SEED"};
constexpr std::string_view kBackendNames[] = {"ORACLE", "TOY_QA"};

// Stream ids for RandomSource::derive; step streams are offset by the slot.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kRefitStream = 2;
constexpr std::uint64_t kStepStream = 1ULL << 32;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string hash_hex(GraphHash h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

GraphHash hash_from_hex(const std::string& s) {
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos) {
        throw SchemaError("graph_hash: expected 16 lowercase hex digits, got '" + s + "'");
    }
    return std::stoull(s, nullptr, 16);
}

// Reads fields from a JSON object and rejects the ones nobody asked for.
class Fields {
public:
    Fields(const nlohmann::json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
        if (!doc_.is_object()) throw SchemaError(where_ + ": expected an object");
    }

    template <class T>
    void read(const char* name, T& out) {
        seen_.insert(name);
        auto it = doc_.find(name);
        if (it == doc_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw SchemaError("expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw SchemaError("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (!it->is_number_unsigned()) throw SchemaError("expected a non-negative integer");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw SchemaError("expected a number");
            }
            out = it->get<T>();
        } catch (const std::exception& e) {
            throw SchemaError(where_ + "." + name + ": " + e.what());
        }
    }

    const nlohmann::json* object(const char* name) {
        seen_.insert(name);
        auto it = doc_.find(name);
        return it == doc_.end() ? nullptr : &*it;
    }

    std::string path(const char* name) const { return where_ + "." + name; }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) throw SchemaError(where_ + ": unknown field " + key);
        }
    }

private:
    const nlohmann::json& doc_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string_view optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "ADAM" : "MOMENTUM"; }

Optimizer optimizer_from_string(const std::string& s) {
    if (s == "ADAM") return Optimizer::Adam;
    if (s == "MOMENTUM") return Optimizer::Momentum;
    throw SchemaError("estimator_fit.optimizer: unknown optimizer '" + s + "'");
}

void run_parallel(int workers, std::size_t count, const std::function<void(std::size_t)>& body) {
    workers = static_cast<int>(std::min<std::size_t>(std::max(workers, 1), count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string_view to_string(ChosenBy c) { return kChosenNames[static_cast<int>(c)]; }

ChosenBy chosen_by_from_string(std::string_view name) {
    for (int i = 0; i < 3; ++i)
        if (kChosenNames[i] == name) return static_cast<ChosenBy>(i);
    throw SchemaError("chosen_by: unknown value '" + std::string(name) + "'");
}

std::string_view to_string(Backend b) { return kBackendNames[static_cast<int>(b)]; }

Backend backend_from_string(std::string_view name) {
    for (int i = 0; i < 2; ++i)
        if (kBackendNames[i] == name) return static_cast<Backend>(i);
    std::string lower(name);
    if (lower == "oracle") return Backend::Oracle;
    if (lower == "toy_qa" || lower == "toy-qa") return Backend::ToyQa;
    throw SchemaError("backend: unknown value '" + std::string(name) + "'");
}

bool same_trial(const TrialRecord& a, const TrialRecord& b) {
    return a.trial_id == b.trial_id && a.parent_id == b.parent_id && a.action == b.action && a.chosen_by == b.chosen_by &&
           a.graph == b.graph && a.graph_hash == b.graph_hash && a.fitness == b.fitness && a.error == b.error;
}

nlohmann::json trial_to_json(const TrialRecord& r) {
    nlohmann::json j;
    j["trial_id"] = r.trial_id;
    j["parent_id"] = r.parent_id ? nlohmann::json(*r.parent_id) : nlohmann::json(nullptr);
    j["action"] = r.action ? action_to_json(*r.action) : nlohmann::json(nullptr);
    j["chosen_by"] = std::string(to_string(r.chosen_by));
    j["graph"] = graph_to_json(r.graph);
    j["graph_hash"] = hash_hex(r.graph_hash);
    j["fitness"] = r.fitness;
    j["wall_time"] = r.wall_time;
    if (r.error) j["error"] = *r.error;
    return j;
}

TrialRecord trial_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("trial record: expected an object");
    static const std::set<std::string> known = {"trial_id", "parent_id", "action",    "chosen_by", "graph",
                                                "graph_hash", "fitness",  "wall_time", "error"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw SchemaError("trial record: unknown field " + key);
    }
    for (const char* key : {"trial_id", "parent_id", "action", "chosen_by", "graph", "graph_hash", "fitness", "wall_time"}) {
        if (!j.contains(key)) throw SchemaError(std::string("trial record: missing field ") + key);
    }
    try {
        TrialRecord r;
        if (!j["trial_id"].is_number_integer() || j["trial_id"].get<int>() < 0) throw SchemaError("trial_id: expected a non-negative integer");
        r.trial_id = j["trial_id"].get<int>();
        if (!j["parent_id"].is_null()) {
            if (!j["parent_id"].is_number_integer()) throw SchemaError("parent_id: expected an integer or null");
            r.parent_id = j["parent_id"].get<int>();
        }
        if (!j["action"].is_null()) r.action = action_from_json(j["action"]);
        r.chosen_by = chosen_by_from_string(j["chosen_by"].get<std::string>());
        r.graph = graph_from_json(j["graph"]);
        r.graph_hash = hash_from_hex(j["graph_hash"].get<std::string>());
        if (!j["fitness"].is_number()) throw SchemaError("fitness: expected a number");
        r.fitness = j["fitness"].get<double>();
        if (!j["wall_time"].is_number()) throw SchemaError("wall_time: expected a number");
        r.wall_time = j["wall_time"].get<double>();
        if (j.contains("error")) r.error = j["error"].get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("trial record: ") + e.what());
    }
}

std::string OracleEvaluator::description() const { return "oracle " + oracle_spec_to_json(spec_).dump(); }

ToyQaEvaluator::ToyQaEvaluator(ToyQaConfig config) : config_(std::move(config)), data_(make_toy_dataset(config_.data)) {}

Evaluation ToyQaEvaluator::evaluate(const ModelGraph& graph) const {
    const std::uint64_t seed = RandomSource::split(hash(graph) ^ RandomSource::split(config_.train.seed));
    CompiledModel model = compile(graph, config_.dims, seed);
    TrainResult r = train(model, data_.train, data_.dev, config_.train);
    Evaluation e;
    e.fitness = r.final_em;
    for (int i = 0; i < r.epochs_run; ++i) e.curve.push_back({i, r.epoch_loss[i], r.dev_em[i]});
    return e;
}

std::string ToyQaEvaluator::description() const {
    return "toy QA: " + std::to_string(data_.train.size()) + " train / " + std::to_string(data_.dev.size()) + " dev examples, " +
           std::to_string(config_.train.epochs) + " epochs";
}

void validate_config(const ExperimentConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(c.population_size >= 1, "population_size must be positive");
    require(c.n_max >= 3, "n_max must be at least 3 (two inputs and the output layer)");
    require(c.workers >= 1, "workers must be positive");
    require(c.max_trials >= 1, "max_trials must be positive");
    require(c.workers <= c.max_trials, "workers must not exceed max_trials");
    require(c.max_trials >= c.population_size, "max_trials must be at least population_size");
    require(c.max_trials == c.population_size || c.population_size >= 2, "a tournament needs population_size >= 2");
    require(c.epoch_max >= 1, "epoch_max must be positive");
    require(c.estimator_update_frequency >= 1, "estimator_update_frequency must be positive");
    require(c.mutation_burst >= 1, "mutation_burst must be positive");
    require(c.candidate_cap >= 1, "candidate_cap must be positive");
    if (c.seeded_init) require(c.population_size >= 3, "seeded_init needs population_size >= 3 (one slot per seed model)");
    if (c.estimator_enabled) {
        require(c.estimator.n >= c.n_max, "estimator.n must be at least n_max so every candidate can be encoded");
        require(c.estimator.channels >= 1 && c.estimator.stages >= 1 && c.estimator.blocks_per_stage >= 1,
                "estimator channels, stages and blocks_per_stage must be positive");
        require(c.estimator_fit.steps >= 0 && c.estimator_fit.batch_size >= 1 && c.estimator_fit.lr > 0.0,
                "estimator_fit needs steps >= 0, batch_size >= 1 and lr > 0");
    }
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& e = c.estimator;
    const auto& f = c.estimator_fit;
    const auto& t = c.toy;
    return {{"population_size", c.population_size},
            {"n_max", c.n_max},
            {"workers", c.workers},
            {"max_trials", c.max_trials},
            {"epoch_max", c.epoch_max},
            {"estimator_update_frequency", c.estimator_update_frequency},
            {"mutation_burst", c.mutation_burst},
            {"estimator_enabled", c.estimator_enabled},
            {"seeded_init", c.seeded_init},
            {"seed", c.seed},
            {"backend", std::string(to_string(c.backend))},
            {"candidate_cap", c.candidate_cap},
            {"estimator", {{"n", e.n}, {"channels", e.channels}, {"stages", e.stages}, {"blocks_per_stage", e.blocks_per_stage}, {"seed", e.seed}}},
            {"estimator_fit",
             {{"steps", f.steps},
              {"optimizer", std::string(optimizer_name(f.optimizer))},
              {"lr", f.lr},
              {"momentum", f.momentum},
              {"beta2", f.beta2},
              {"epsilon", f.epsilon},
              {"batch_size", f.batch_size},
              {"clip_norm", f.clip_norm},
              {"seed", f.seed}}},
            {"oracle", oracle_spec_to_json(c.oracle)},
            {"toy",
             {{"data",
               {{"n_examples", t.data.n_examples},
                {"n_dev", t.data.n_dev},
                {"len_doc", t.data.len_doc},
                {"needle_min", t.data.needle_min},
                {"needle_max", t.data.needle_max},
                {"vocab", t.data.vocab},
                {"seed", t.data.seed}}},
              {"dims", {{"vocab", t.dims.vocab}, {"embed_d", t.dims.embed_d}, {"hidden_d", t.dims.hidden_d}, {"max_span_len", t.dims.max_span_len}}},
              {"train",
               {{"epochs", t.train.epochs},
                {"lr", t.train.lr},
                {"clip_norm", t.train.clip_norm},
                {"batch_size", t.train.batch_size},
                {"target_em", t.train.target_em},
                {"seed", t.train.seed}}}}}};
}

ExperimentConfig config_from_json(const nlohmann::json& doc, const ExperimentConfig& defaults) {
    ExperimentConfig c = defaults;
    Fields top(doc, "config");
    top.read("population_size", c.population_size);
    top.read("n_max", c.n_max);
    top.read("workers", c.workers);
    top.read("max_trials", c.max_trials);
    top.read("epoch_max", c.epoch_max);
    top.read("estimator_update_frequency", c.estimator_update_frequency);
    top.read("mutation_burst", c.mutation_burst);
    top.read("estimator_enabled", c.estimator_enabled);
    top.read("seeded_init", c.seeded_init);
    top.read("seed", c.seed);
    std::string backend(to_string(c.backend));
    top.read("backend", backend);
    c.backend = backend_from_string(backend);
    top.read("candidate_cap", c.candidate_cap);
    if (const auto* e = top.object("estimator")) {
        Fields f(*e, top.path("estimator"));
        f.read("n", c.estimator.n);
        f.read("channels", c.estimator.channels);
        f.read("stages", c.estimator.stages);
        f.read("blocks_per_stage", c.estimator.blocks_per_stage);
        f.read("seed", c.estimator.seed);
        f.finish();
    } else {
        c.estimator.n = c.n_max;
    }
    if (const auto* e = top.object("estimator_fit")) {
        Fields f(*e, top.path("estimator_fit"));
        f.read("steps", c.estimator_fit.steps);
        std::string opt(optimizer_name(c.estimator_fit.optimizer));
        f.read("optimizer", opt);
        c.estimator_fit.optimizer = optimizer_from_string(opt);
        f.read("lr", c.estimator_fit.lr);
        f.read("momentum", c.estimator_fit.momentum);
        f.read("beta2", c.estimator_fit.beta2);
        f.read("epsilon", c.estimator_fit.epsilon);
        f.read("batch_size", c.estimator_fit.batch_size);
        f.read("clip_norm", c.estimator_fit.clip_norm);
        f.read("seed", c.estimator_fit.seed);
        f.finish();
    }
    if (const auto* o = top.object("oracle")) c.oracle = oracle_spec_from_json(*o);
    if (const auto* t = top.object("toy")) {
        Fields toy(*t, top.path("toy"));
        if (const auto* d = toy.object("data")) {
            Fields f(*d, toy.path("data"));
            f.read("n_examples", c.toy.data.n_examples);
            f.read("n_dev", c.toy.data.n_dev);
            f.read("len_doc", c.toy.data.len_doc);
            f.read("needle_min", c.toy.data.needle_min);
            f.read("needle_max", c.toy.data.needle_max);
            f.read("vocab", c.toy.data.vocab);
            f.read("seed", c.toy.data.seed);
            f.finish();
        }
        if (const auto* d = toy.object("dims")) {
            Fields f(*d, toy.path("dims"));
            f.read("vocab", c.toy.dims.vocab);
            f.read("embed_d", c.toy.dims.embed_d);
            f.read("hidden_d", c.toy.dims.hidden_d);
            f.read("max_span_len", c.toy.dims.max_span_len);
            f.finish();
        }
        if (const auto* d = toy.object("train")) {
            Fields f(*d, toy.path("train"));
            f.read("epochs", c.toy.train.epochs);
            f.read("lr", c.toy.train.lr);
            f.read("clip_norm", c.toy.train.clip_norm);
            f.read("batch_size", c.toy.train.batch_size);
            f.read("target_em", c.toy.train.target_em);
            f.read("seed", c.toy.train.seed);
            f.finish();
        }
        toy.finish();
    }
    top.finish();
    validate_config(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

std::unique_ptr<Evaluator> make_evaluator(const ExperimentConfig& config) {
    if (config.backend == Backend::ToyQa) return std::make_unique<ToyQaEvaluator>(config.toy);
    return std::make_unique<OracleEvaluator>(config.oracle);
}

bool Population::contains(int trial_id) const {
    return std::any_of(members.begin(), members.end(), [&](const Member& m) { return m.trial_id == trial_id; });
}

bool Population::remove(int trial_id) {
    auto it = std::find_if(members.begin(), members.end(), [&](const Member& m) { return m.trial_id == trial_id; });
    if (it == members.end()) return false;
    members.erase(it);
    return true;
}

std::vector<ModelGraph> initial_graphs(const ExperimentConfig& config, const std::vector<ModelGraph>& seeds, RandomSource& rng) {
    std::vector<ModelGraph> out;
    const auto slots = static_cast<std::size_t>(config.population_size);
    if (config.seeded_init) {
        if (seeds.empty()) throw ConfigError("seeded_init needs at least one seed model");
        if (seeds.size() > slots) {
            throw ConfigError("population_size " + std::to_string(slots) + " is smaller than the " + std::to_string(seeds.size()) +
                              " seed models");
        }
        for (ModelGraph g : seeds) {
            g.set_n_max(config.n_max);
            if (!is_searchable(g)) throw ConfigError("seed model is not searchable under n_max " + std::to_string(config.n_max));
            out.push_back(std::move(g));
        }
        while (out.size() < slots) {
            ModelGraph g = seeds[rng.uniform_index(seeds.size())];
            g.set_n_max(config.n_max);
            out.push_back(multiple_mutate(g, config.mutation_burst, rng));
        }
    } else {
        while (out.size() < slots) out.push_back(multiple_mutate(minimal_graph(config.n_max), config.mutation_burst, rng));
    }
    return out;
}

TrialRecord evaluate_trial(const Evaluator& evaluator, ModelGraph graph, Evaluation* details) {
    TrialRecord r;
    r.graph_hash = hash(graph);
    r.graph = std::move(graph);
    const auto t0 = Clock::now();
    try {
        Evaluation e = evaluator.evaluate(r.graph);
        if (!(e.fitness >= 0.0 && e.fitness <= 1.0)) {
            throw std::runtime_error("evaluator returned fitness " + std::to_string(e.fitness) + " outside [0, 1]");
        }
        r.fitness = e.fitness;
        if (details) *details = std::move(e);
    } catch (const std::exception& e) {
        r.fitness = 0.0;
        r.error = e.what();
        if (details) *details = Evaluation{};
    }
    r.wall_time = seconds_since(t0);
    return r;
}

Population initialize_population(const ExperimentConfig& config, const std::vector<ModelGraph>& seeds, RandomSource& rng,
                                 const Evaluator& evaluator, std::vector<TrialRecord>& history, std::vector<Evaluation>* evaluations) {
    std::vector<ModelGraph> graphs = initial_graphs(config, seeds, rng);
    std::vector<TrialRecord> records(graphs.size());
    std::vector<Evaluation> details(graphs.size());
    run_parallel(config.workers, graphs.size(), [&](std::size_t i) { records[i] = evaluate_trial(evaluator, graphs[i], &details[i]); });
    Population pop;
    pop.capacity = graphs.size();
    const int base = static_cast<int>(history.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].trial_id = base + static_cast<int>(i);
        records[i].chosen_by = ChosenBy::Seed;
        pop.members.push_back({records[i].trial_id, records[i].graph, records[i].fitness});
        history.push_back(std::move(records[i]));
    }
    if (evaluations) *evaluations = std::move(details);
    return pop;
}

Pairing sample_pair(const Population& population, RandomSource& rng) {
    const std::size_t n = population.members.size();
    if (n < 2) throw std::logic_error("tournament needs at least two members");
    const std::size_t i = rng.uniform_index(n);
    std::size_t j = rng.uniform_index(n - 1);
    if (j >= i) ++j;
    const Member& a = population.members[i];
    const Member& b = population.members[j];
    bool a_wins = a.fitness > b.fitness || (a.fitness == b.fitness && a.trial_id < b.trial_id);
    return a_wins ? Pairing{a, b.trial_id} : Pairing{b, a.trial_id};
}

std::vector<MutationResult> estimator_candidates(const ModelGraph& parent, int cap, RandomSource& rng) {
    std::vector<MutationAction> actions;
    for (const MutationAction& a : enumerate_candidates(parent))
        if (a.tag != MutationTag::Identity) actions.push_back(a);
    if (actions.size() > static_cast<std::size_t>(cap)) {
        std::vector<std::size_t> idx(actions.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < static_cast<std::size_t>(cap); ++i) std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
        idx.resize(cap);
        std::sort(idx.begin(), idx.end());
        std::vector<MutationAction> kept;
        for (std::size_t i : idx) kept.push_back(actions[i]);
        actions = std::move(kept);
    }
    std::vector<MutationResult> out;
    out.reserve(actions.size());
    for (const MutationAction& a : actions) out.push_back({a, apply(a, parent)});
    return out;
}

Proposal propose_child(const ModelGraph& parent, const Estimator* estimator, int trials_so_far, const ExperimentConfig& config,
                       RandomSource& rng) {
    if (config.estimator_enabled && estimator) {
        const double p = selection_probability(trials_so_far, config.epoch_max);
        if (rng.uniform() < p) {
            std::vector<MutationResult> pool = estimator_candidates(parent, config.candidate_cap, rng);
            if (!pool.empty()) {
                std::vector<ModelGraph> graphs;
                graphs.reserve(pool.size());
                for (const auto& m : pool) graphs.push_back(m.graph);
                const std::size_t top = ranked_predictions(*estimator, graphs).front().second;
                return {pool[top].action, std::move(pool[top].graph), ChosenBy::Estimator};
            }
        }
    }
    MutationResult m = random_mutate(parent, rng);
    return {m.action, std::move(m.graph), ChosenBy::Random};
}

TrialRecord tournament_step(Population& population, std::vector<TrialRecord>& history, const Estimator* estimator,
                            const ExperimentConfig& config, RandomSource& rng, const Evaluator& evaluator) {
    const Pairing pair = sample_pair(population, rng);
    population.remove(pair.loser_id);
    Proposal prop = propose_child(pair.survivor.graph, estimator, static_cast<int>(history.size()), config, rng);
    TrialRecord r = evaluate_trial(evaluator, std::move(prop.child));
    r.trial_id = static_cast<int>(history.size());
    r.parent_id = pair.survivor.trial_id;
    r.action = prop.action;
    r.chosen_by = prop.chosen_by;
    population.members.push_back({r.trial_id, r.graph, r.fitness});
    history.push_back(r);
    return r;
}

std::shared_ptr<const Estimator> refit_estimator(const Estimator& current, const std::vector<TrialRecord>& history,
                                                 const ExperimentConfig& config, std::uint64_t fit_seed) {
    std::vector<TrainingPair> pairs;
    for (const TrialRecord& r : history) {
        if (r.error) continue;
        pairs.push_back({encode(r.graph, current.config().n), r.fitness});
    }
    auto next = std::make_shared<Estimator>(current);
    if (pairs.empty()) return next;
    FitConfig fit = config.estimator_fit;
    fit.seed = fit_seed;
    next->fit(pairs, fit);
    return next;
}

const TrialRecord& best_trial(const std::vector<TrialRecord>& history) {
    if (history.empty()) throw std::invalid_argument("empty history has no best trial");
    const TrialRecord* best = &history.front();
    for (const TrialRecord& r : history) {
        if (r.fitness > best->fitness || (r.fitness == best->fitness && r.trial_id < best->trial_id)) best = &r;
    }
    return *best;
}

SearchResult run_search(const ExperimentConfig& config, const Evaluator& evaluator, const SearchObserver& observer) {
    validate_config(config);
    const auto t0 = Clock::now();
    const RandomSource master(config.seed);
    auto log = [&](const std::string& line) {
        if (observer.log) observer.log(line);
    };

    SearchResult result;
    std::vector<TrialRecord>& history = result.history;
    std::vector<ModelGraph> seeds;
    for (const NamedGraph& s : seed_models(config.n_max)) seeds.push_back(s.graph);

    RandomSource init_rng = master.derive(kInitStream);
    std::vector<Evaluation> init_details;
    Population population = initialize_population(config, seeds, init_rng, evaluator, history, &init_details);
    for (std::size_t i = 0; i < history.size(); ++i) {
        const TrialRecord& r = history[i];
        if (r.error) log("trial " + std::to_string(r.trial_id) + " failed: " + *r.error);
        if (observer.on_trial) observer.on_trial(r, population);
        if (observer.on_evaluation) observer.on_evaluation(r, init_details[i]);
    }

    std::mutex pop_mutex;     // population, history, counters
    std::mutex refit_mutex;   // serializes estimator training
    std::mutex model_mutex;   // guards the estimator pointer swap
    std::shared_ptr<const Estimator> estimator;
    if (config.estimator_enabled) estimator = std::make_shared<Estimator>(config.estimator);
    int refits = 0;
    int fitted_through = 0;  // completed-trial count of the last refit trigger
    const int M = config.estimator_update_frequency;

    auto current_estimator = [&] {
        std::lock_guard<std::mutex> lock(model_mutex);
        return estimator;
    };
    // Refits when the completed count crossed a multiple of M since the last
    // refit. Takes the history snapshot under the population lock.
    auto maybe_refit = [&] {
        if (!config.estimator_enabled) return;
        std::lock_guard<std::mutex> refit_lock(refit_mutex);
        std::vector<TrialRecord> snapshot;
        int index;
        {
            std::lock_guard<std::mutex> lock(pop_mutex);
            const int done = static_cast<int>(history.size());
            if (done / M == fitted_through / M) return;
            fitted_through = done;
            snapshot = history;
            index = refits++;
        }
        const std::uint64_t fit_seed = master.derive(kRefitStream).derive(static_cast<std::uint64_t>(index)).seed();
        auto next = refit_estimator(*current_estimator(), snapshot, config, fit_seed);
        std::lock_guard<std::mutex> lock(model_mutex);
        estimator = std::move(next);
    };
    maybe_refit();

    int reserved = static_cast<int>(history.size());
    auto worker = [&] {
        for (;;) {
            Pairing pair;
            int slot, trials_so_far;
            RandomSource rng;
            {
                std::lock_guard<std::mutex> lock(pop_mutex);
                if (reserved >= config.max_trials) return;
                slot = reserved++;
                rng = master.derive(kStepStream + static_cast<std::uint64_t>(slot));
                pair = sample_pair(population, rng);
                trials_so_far = static_cast<int>(history.size());
            }
            std::shared_ptr<const Estimator> est = config.estimator_enabled ? current_estimator() : nullptr;
            Proposal prop = propose_child(pair.survivor.graph, est.get(), trials_so_far, config, rng);
            Evaluation details;
            TrialRecord r = evaluate_trial(evaluator, std::move(prop.child), &details);
            r.parent_id = pair.survivor.trial_id;
            r.action = prop.action;
            r.chosen_by = prop.chosen_by;
            {
                std::lock_guard<std::mutex> lock(pop_mutex);
                // A concurrent step may already have removed our loser; then
                // a fresh pair decides who makes room.
                if (!population.remove(pair.loser_id)) population.remove(sample_pair(population, rng).loser_id);
                r.trial_id = static_cast<int>(history.size());
                population.members.push_back({r.trial_id, r.graph, r.fitness});
                history.push_back(r);
                if (r.error) log("trial " + std::to_string(r.trial_id) + " failed: " + *r.error);
                if (observer.on_trial) observer.on_trial(history.back(), population);
                if (observer.on_evaluation) observer.on_evaluation(history.back(), details);
            }
            maybe_refit();
        }
    };

    const int workers = std::min(config.workers, std::max(1, config.max_trials - reserved));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&] {
                try {
                    worker();
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    std::lock_guard<std::mutex> pop_lock(pop_mutex);
                    reserved = config.max_trials;  // stop the others
                }
            });
        }
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    result.best = best_trial(history);
    result.estimator_refits = refits;
    result.estimator = estimator;
    result.wall_time = seconds_since(t0);
    return result;
}

SearchResult run_search(const ExperimentConfig& config) {
    validate_config(config);
    auto evaluator = make_evaluator(config);
    return run_search(config, *evaluator);
}

HistoryWriter::HistoryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::app) {
    if (!out_) throw IoError("cannot open history file " + path.string() + " for appending");
}

void HistoryWriter::append(const TrialRecord& record) {
    out_ << trial_to_json(record).dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing history file " + path_.string());
}

void write_history(const std::vector<TrialRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write history file " + path.string());
    for (const TrialRecord& r : history) out << trial_to_json(r).dump() << '\n';
    if (!out) throw IoError("failed writing history file " + path.string());
}

std::vector<TrialRecord> load_history(const std::filesystem::path& path, std::vector<std::string>* warnings) {
    const std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    const bool terminated = text.empty() || text.back() == '\n';
    std::vector<TrialRecord> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const bool last = i + 1 == lines.size();
        try {
            if (lines[i].empty()) throw SchemaError("empty line");
            out.push_back(trial_from_json(nlohmann::json::parse(lines[i])));
        } catch (const std::exception& e) {
            if (last) {
                if (warnings) {
                    warnings->push_back("history " + path.string() + ": dropped " + (terminated ? "corrupt" : "truncated") +
                                        " final line " + std::to_string(i + 1) + " (" + e.what() + ")");
                }
                break;
            }
            throw SchemaError("history " + path.string() + " line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

ReplayResult replay(const std::vector<TrialRecord>& history) {
    if (history.empty()) throw std::invalid_argument("cannot replay an empty history");
    std::vector<const TrialRecord*> by_id(history.size(), nullptr);
    for (const TrialRecord& r : history) {
        if (r.trial_id < 0 || r.trial_id >= static_cast<int>(history.size()) || by_id[r.trial_id]) {
            throw SchemaError("history trial ids are not the range 0.." + std::to_string(history.size() - 1) + " (bad id " +
                              std::to_string(r.trial_id) + ")");
        }
        by_id[r.trial_id] = &r;
    }
    ReplayResult out;
    out.trials = static_cast<int>(history.size());
    out.best_fitness = -1.0;
    for (const TrialRecord* r : by_id) {
        if (r->fitness > out.best_fitness) {
            out.best_fitness = r->fitness;
            out.best_trial_id = r->trial_id;
        }
        out.running_best.push_back(out.best_fitness);
    }
    return out;
}

AuditReport audit_history(const std::vector<TrialRecord>& history) {
    AuditReport report;
    auto problem = [&](int id, const std::string& what) { report.problems.push_back("trial " + std::to_string(id) + ": " + what); };
    std::map<int, const TrialRecord*> by_id;
    for (const TrialRecord& r : history) {
        if (!by_id.emplace(r.trial_id, &r).second) problem(r.trial_id, "recorded more than once");
    }
    int expect = 0;
    for (const auto& [id, r] : by_id) {
        if (id != expect) {
            problem(expect, "missing from the history");
            expect = id;
        }
        ++expect;
        if (!(r->fitness >= 0.0 && r->fitness <= 1.0)) problem(id, "fitness outside [0, 1]");
        if (r->graph_hash != hash(r->graph)) problem(id, "graph_hash does not match the graph");
        if (!is_searchable(r->graph)) problem(id, "graph is not searchable");
        if (r->chosen_by == ChosenBy::Seed) {
            if (r->parent_id || r->action) problem(id, "seed trial has a parent or action");
            continue;
        }
        if (!r->parent_id || !r->action) {
            problem(id, "mutated trial lacks a parent or action");
            continue;
        }
        auto parent = by_id.find(*r->parent_id);
        if (*r->parent_id >= id || parent == by_id.end()) {
            problem(id, "parent " + std::to_string(*r->parent_id) + " does not precede it");
            continue;
        }
        try {
            if (canonicalize(apply(*r->action, parent->second->graph)) != canonicalize(r->graph)) {
                problem(id, describe(*r->action) + " applied to the parent does not give the child");
            }
        } catch (const std::exception& e) {
            problem(id, std::string("action does not apply to the parent: ") + e.what());
        }
    }
    return report;
}

nlohmann::json summary_json(const SearchResult& result) {
    return {{"best_trial_id", result.best.trial_id},
            {"best_fitness", result.best.fitness},
            {"trials", result.history.size()},
            {"wall_time", result.wall_time}};
}

}  // namespace evoqa
