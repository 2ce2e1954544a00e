#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoqa/compiler.hpp"
#include "evoqa/estimator.hpp"
#include "evoqa/graph.hpp"
#include "evoqa/mutation.hpp"
#include "evoqa/oracle.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

enum class ChosenBy : std::uint8_t { Random, Estimator, Seed };
enum class Backend : std::uint8_t { Oracle, ToyQa };

std::string_view to_string(ChosenBy c);
ChosenBy chosen_by_from_string(std::string_view name);
std::string_view to_string(Backend b);
Backend backend_from_string(std::string_view name);

struct TrialRecord {
    int trial_id = 0;
    std::optional<int> parent_id;
    std::optional<MutationAction> action;
    ChosenBy chosen_by = ChosenBy::Seed;
    /// Node ids as produced by the mutation, so `action` applies to the
    /// parent's stored graph.
    ModelGraph graph;
    GraphHash graph_hash = 0;
    double fitness = 0.0;
    /// Evaluation time in seconds. Not part of the determinism contract.
    double wall_time = 0.0;
    /// Set when evaluation failed and the trial was scored 0.
    std::optional<std::string> error;
};

/// Equality of everything except wall_time.
bool same_trial(const TrialRecord& a, const TrialRecord& b);

nlohmann::json trial_to_json(const TrialRecord& record);
TrialRecord trial_from_json(const nlohmann::json& doc);

struct EpochStat {
    int epoch = 0;
    double loss = 0.0;
    double dev_em = 0.0;
};

struct Evaluation {
    double fitness = 0.0;
    /// Per-epoch training curve; empty for backends that do not train.
    std::vector<EpochStat> curve;
};

/// Scores a graph. Implementations must be deterministic given the graph
/// and their own seed, and safe to call from several threads at once.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual Evaluation evaluate(const ModelGraph& graph) const = 0;
    virtual std::string description() const = 0;
};

class OracleEvaluator : public Evaluator {
public:
    explicit OracleEvaluator(OracleSpec spec = {}) : spec_(spec) {}
    Evaluation evaluate(const ModelGraph& graph) const override { return {oracle_evaluate(spec_, graph), {}}; }
    std::string description() const override;
    const OracleSpec& spec() const { return spec_; }

private:
    OracleSpec spec_;
};

struct ToyQaConfig {
    ToyDataConfig data;
    ModelDims dims;
    TrainConfig train;
};

/// Compiles the graph, trains it on the toy span task and reports dev EM.
/// Parameter initialization is seeded from the graph hash and train.seed.
class ToyQaEvaluator : public Evaluator {
public:
    explicit ToyQaEvaluator(ToyQaConfig config);
    Evaluation evaluate(const ModelGraph& graph) const override;
    std::string description() const override;
    const ToyDataset& dataset() const { return data_; }

private:
    ToyQaConfig config_;
    ToyDataset data_;
};

struct ExperimentConfig {
    int population_size = 32;
    int n_max = kDefaultMaxNodes;
    int workers = 8;
    int max_trials = 500;
    int epoch_max = 100;
    /// Refit the estimator whenever this many more trials have completed.
    int estimator_update_frequency = 25;
    int mutation_burst = kDefaultMutationBurst;
    bool estimator_enabled = true;
    bool seeded_init = true;
    std::uint64_t seed = 0;
    Backend backend = Backend::Oracle;

    /// Placements materialized for ranking, sampled uniformly when there
    /// are more.
    int candidate_cap = 64;
    EstimatorConfig estimator;
    FitConfig estimator_fit;
    OracleSpec oracle;
    ToyQaConfig toy;
};

/// Throws ConfigError naming the first violated constraint.
void validate_config(const ExperimentConfig& config);
nlohmann::json config_to_json(const ExperimentConfig& config);
/// Missing fields keep their values from `defaults`; unknown fields are
/// rejected. Without an "estimator" object the estimator size follows n_max.
ExperimentConfig config_from_json(const nlohmann::json& doc, const ExperimentConfig& defaults = {});
ExperimentConfig load_config(const std::filesystem::path& path);

std::unique_ptr<Evaluator> make_evaluator(const ExperimentConfig& config);

struct Member {
    int trial_id = 0;
    ModelGraph graph;
    double fitness = 0.0;
};

struct Population {
    std::size_t capacity = 0;
    std::vector<Member> members;

    bool contains(int trial_id) const;
    /// Removes the member and returns true when present.
    bool remove(int trial_id);
};

/// Initial graphs: every seed, then burst-mutated copies of random seeds;
/// without seeding, burst-mutated copies of the minimal graph.
std::vector<ModelGraph> initial_graphs(const ExperimentConfig& config, const std::vector<ModelGraph>& seeds, RandomSource& rng);

/// Evaluates and records the initial graphs as trials 0..size-1.
Population initialize_population(const ExperimentConfig& config, const std::vector<ModelGraph>& seeds, RandomSource& rng,
                                 const Evaluator& evaluator, std::vector<TrialRecord>& history,
                                 std::vector<Evaluation>* evaluations = nullptr);

struct Pairing {
    Member survivor;
    int loser_id = 0;
};

/// Two distinct members drawn uniformly; the lower fitness loses, and on a
/// tie the one with the larger trial_id.
Pairing sample_pair(const Population& population, RandomSource& rng);

struct Proposal {
    MutationAction action;
    ModelGraph child;
    ChosenBy chosen_by = ChosenBy::Random;
};

/// Mutated children considered by the estimator: every non-identity
/// placement, or candidate_cap of them sampled uniformly.
std::vector<MutationResult> estimator_candidates(const ModelGraph& parent, int cap, RandomSource& rng);

/// With probability selection_probability(trials_so_far) the estimator's
/// top-ranked candidate, otherwise a random mutation.
Proposal propose_child(const ModelGraph& parent, const Estimator* estimator, int trials_so_far, const ExperimentConfig& config,
                       RandomSource& rng);

/// Evaluates, turning evaluator exceptions into a zero-fitness failure.
TrialRecord evaluate_trial(const Evaluator& evaluator, ModelGraph graph, Evaluation* details = nullptr);

/// One full tournament step against a single-threaded population.
TrialRecord tournament_step(Population& population, std::vector<TrialRecord>& history, const Estimator* estimator,
                            const ExperimentConfig& config, RandomSource& rng, const Evaluator& evaluator);

/// Full-history refit from a copy of `current`.
std::shared_ptr<const Estimator> refit_estimator(const Estimator& current, const std::vector<TrialRecord>& history,
                                                 const ExperimentConfig& config, std::uint64_t fit_seed);

struct SearchObserver {
    /// Called once per committed trial, under the population lock.
    std::function<void(const TrialRecord&, const Population&)> on_trial;
    std::function<void(const TrialRecord&, const Evaluation&)> on_evaluation;
    std::function<void(const std::string&)> log;
};

struct SearchResult {
    std::vector<TrialRecord> history;
    TrialRecord best;
    int estimator_refits = 0;
    /// Final estimator; null when the estimator is disabled.
    std::shared_ptr<const Estimator> estimator;
    double wall_time = 0.0;
};

/// Highest fitness; ties go to the smallest trial_id.
const TrialRecord& best_trial(const std::vector<TrialRecord>& history);

SearchResult run_search(const ExperimentConfig& config, const Evaluator& evaluator, const SearchObserver& observer = {});
SearchResult run_search(const ExperimentConfig& config);

/// Append-only JSON Lines history, flushed after every record.
class HistoryWriter {
public:
    explicit HistoryWriter(const std::filesystem::path& path);
    void append(const TrialRecord& record);

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

void write_history(const std::vector<TrialRecord>& history, const std::filesystem::path& path);

/// Drops an unterminated or unparsable final line with a warning; any
/// other bad line throws SchemaError naming its line number.
std::vector<TrialRecord> load_history(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

struct ReplayResult {
    /// running_best[t] = best fitness among trials 0..t.
    std::vector<double> running_best;
    int best_trial_id = 0;
    double best_fitness = 0.0;
    int trials = 0;
};

/// Requires trial ids forming the range 0..n-1.
ReplayResult replay(const std::vector<TrialRecord>& history);

struct AuditReport {
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

/// Gap-free ids, exactly one fitness per trial, parents that precede their
/// children, and actions that reproduce every child from its parent.
AuditReport audit_history(const std::vector<TrialRecord>& history);

nlohmann::json summary_json(const SearchResult& result);

}  // namespace evoqa
