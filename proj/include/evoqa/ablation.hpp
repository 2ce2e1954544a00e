#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoqa/evolution.hpp"

namespace evoqa {

enum class AblationKind { Init, Estimator };

std::string_view to_string(AblationKind kind);

/// Oracle backend, one worker, 300 trials, n_max 20 and a one-stage
/// eight-channel estimator, so that repeats stay cheap.
ExperimentConfig default_ablation_base();

struct AblationConfig {
    /// Shared by both arms; the harness overrides only the ablated flag
    /// (and, for the estimator ablation, forces random init).
    ExperimentConfig base = default_ablation_base();
    int repeats = 20;
    /// Trials-to-threshold counts up to this fraction of the brute-forced
    /// optimum.
    double threshold_fraction = 0.95;
    int optimum_max_nodes = 6;
    /// Run whole repeats on separate threads. Each repeat stays
    /// single-seeded and independent, so results do not change.
    bool parallel_repeats = false;
    /// When set, histories go to <out_dir>/<arm>/repeat_<i>.jsonl.
    std::filesystem::path out_dir;
};

void validate_ablation(const AblationConfig& config);

/// {"repeats", "threshold_fraction", "optimum_max_nodes", "parallel_repeats",
///  "experiment": {...}}; the experiment object overlays
/// default_ablation_base(). Unknown fields are rejected.
AblationConfig ablation_config_from_json(const nlohmann::json& doc);
nlohmann::json ablation_config_to_json(const AblationConfig& config);
AblationConfig load_ablation_config(const std::filesystem::path& path);

struct ArmRun {
    std::uint64_t seed = 0;
    double final_best = 0.0;
    /// First 1-based trial count whose running best reaches the threshold,
    /// max_trials + 1 when the budget ran out first.
    int trials_to_threshold = 0;
    bool reached = false;
    int trials = 0;
};

struct ArmSummary {
    std::string name;
    std::vector<ArmRun> runs;
    /// Per trial count 1..max_trials, across repeats.
    std::vector<double> best_median, best_q25, best_q75;
    double final_median = 0.0;
    double final_q25 = 0.0;
    double final_q75 = 0.0;
    double trials_to_threshold_median = 0.0;
    int reached = 0;
};

struct AblationReport {
    AblationKind kind = AblationKind::Init;
    int repeats = 0;
    int max_trials = 0;
    double optimum = 0.0;
    double threshold = 0.0;
    /// arms[0] has the component on (seeded init / estimator), arms[1] off.
    std::vector<ArmSummary> arms;
};

std::string arm_name(AblationKind kind, bool component_on);

/// Statistics of one arm, from its histories alone.
ArmSummary summarize_arm(const std::string& name, const std::vector<std::vector<TrialRecord>>& histories,
                         const std::vector<std::uint64_t>& seeds, double threshold, int max_trials);

using ProgressFn = std::function<void(const std::string&)>;

AblationReport ablate_init(const AblationConfig& config, const ProgressFn& progress = {});
AblationReport ablate_estimator(const AblationConfig& config, const ProgressFn& progress = {});
AblationReport run_ablation(AblationKind kind, const AblationConfig& config, const ProgressFn& progress = {});

nlohmann::json report_to_json(const AblationReport& report);
AblationReport report_from_json(const nlohmann::json& doc);

/// Rebuilds the report of a run directory (report.json plus the arm
/// histories) from the history files.
AblationReport recompute_report(const std::filesystem::path& out_dir);

/// `trials,best_fitness_median,q25,q75`, one row per trial count.
std::string convergence_csv(const ArmSummary& arm);

/// Writes report.json and one convergence CSV per arm into out_dir.
void write_report(const AblationReport& report, const std::filesystem::path& out_dir);

}  // namespace evoqa
