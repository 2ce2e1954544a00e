#include "evoqa/ablation.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "evoqa/errors.hpp"
#include "evoqa/graph_io.hpp"
#include "evoqa/stats.hpp"

namespace evoqa {

namespace {

std::filesystem::path history_path(const std::filesystem::path& out_dir, const std::string& arm, int repeat) {
    return out_dir / arm / ("repeat_" + std::to_string(repeat) + ".jsonl");
}

ExperimentConfig arm_config(AblationKind kind, const AblationConfig& config, bool component_on, int repeat) {
    ExperimentConfig c = config.base;
    c.seed = config.base.seed + static_cast<std::uint64_t>(repeat);
    if (kind == AblationKind::Init) {
        c.seeded_init = component_on;
    } else {
        c.seeded_init = false;
        c.estimator_enabled = component_on;
    }
    return c;
}

nlohmann::json run_json(const ArmRun& r) {
    return {{"seed", r.seed},
            {"final_best", r.final_best},
            {"trials_to_threshold", r.trials_to_threshold},
            {"reached", r.reached},
            {"trials", r.trials}};
}

template <class T>
T field(const nlohmann::json& doc, const char* name) {
    if (!doc.contains(name)) throw SchemaError(std::string("ablation report: missing field ") + name);
    try {
        return doc.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(std::string("ablation report: bad field ") + name);
    }
}

}  // namespace

std::string_view to_string(AblationKind kind) { return kind == AblationKind::Init ? "init" : "estimator"; }

ExperimentConfig default_ablation_base() {
    ExperimentConfig c;
    c.backend = Backend::Oracle;
    c.workers = 1;
    c.max_trials = 300;
    c.n_max = 20;
    c.estimator_enabled = false;
    c.seeded_init = true;
    c.estimator.n = 20;
    c.estimator.channels = 8;
    c.estimator.stages = 1;
    c.estimator.blocks_per_stage = 1;
    c.estimator_fit.steps = 100;
    return c;
}

void validate_ablation(const AblationConfig& config) {
    if (config.repeats < 2) throw ConfigError("repeats: must be at least 2");
    if (!(config.threshold_fraction > 0.0 && config.threshold_fraction <= 1.0)) {
        throw ConfigError("threshold_fraction: must be in (0, 1]");
    }
    if (config.optimum_max_nodes < 3) throw ConfigError("optimum_max_nodes: must be at least 3");
    if (config.base.backend != Backend::Oracle) throw ConfigError("backend: ablations run on the oracle backend");
    for (AblationKind kind : {AblationKind::Init, AblationKind::Estimator}) {
        for (bool on : {true, false}) validate_config(arm_config(kind, config, on, 0));
    }
}

AblationConfig ablation_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("ablation config: expected an object");
    AblationConfig c;
    for (const auto& [key, value] : doc.items()) {
        auto bad = [&](const char* what) { return SchemaError("ablation config." + key + ": expected " + what); };
        if (key == "repeats" || key == "optimum_max_nodes") {
            if (!value.is_number_integer()) throw bad("an integer");
            (key == "repeats" ? c.repeats : c.optimum_max_nodes) = value.get<int>();
        } else if (key == "threshold_fraction") {
            if (!value.is_number()) throw bad("a number");
            c.threshold_fraction = value.get<double>();
        } else if (key == "parallel_repeats") {
            if (!value.is_boolean()) throw bad("a boolean");
            c.parallel_repeats = value.get<bool>();
        } else if (key == "experiment") {
            c.base = config_from_json(value, default_ablation_base());
        } else {
            throw SchemaError("ablation config: unknown field " + key);
        }
    }
    return c;
}

nlohmann::json ablation_config_to_json(const AblationConfig& config) {
    return {{"repeats", config.repeats},
            {"threshold_fraction", config.threshold_fraction},
            {"optimum_max_nodes", config.optimum_max_nodes},
            {"parallel_repeats", config.parallel_repeats},
            {"experiment", config_to_json(config.base)}};
}

AblationConfig load_ablation_config(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return ablation_config_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("ablation config " + path.string() + ": " + e.what());
    }
}

std::string arm_name(AblationKind kind, bool component_on) {
    if (kind == AblationKind::Init) return component_on ? "seeded_init" : "random_init";
    return component_on ? "estimator_on" : "estimator_off";
}

ArmSummary summarize_arm(const std::string& name, const std::vector<std::vector<TrialRecord>>& histories,
                         const std::vector<std::uint64_t>& seeds, double threshold, int max_trials) {
    if (histories.size() != seeds.size()) throw std::invalid_argument("summarize_arm: one seed per history");
    ArmSummary arm;
    arm.name = name;
    std::vector<std::vector<double>> curves;
    for (std::size_t i = 0; i < histories.size(); ++i) {
        const ReplayResult rp = replay(histories[i]);
        ArmRun run;
        run.seed = seeds[i];
        run.final_best = rp.best_fitness;
        run.trials = rp.trials;
        run.trials_to_threshold = max_trials + 1;
        for (int t = 0; t < static_cast<int>(rp.running_best.size()); ++t) {
            if (rp.running_best[t] >= threshold) {
                run.trials_to_threshold = t + 1;
                run.reached = true;
                break;
            }
        }
        arm.reached += run.reached;
        arm.runs.push_back(run);
        curves.push_back(rp.running_best);
    }
    std::vector<double> finals, ttt;
    for (const ArmRun& r : arm.runs) {
        finals.push_back(r.final_best);
        ttt.push_back(r.trials_to_threshold);
    }
    arm.final_median = median(finals);
    arm.final_q25 = quantile(finals, 0.25);
    arm.final_q75 = quantile(finals, 0.75);
    arm.trials_to_threshold_median = median(ttt);
    for (int t = 0; t < max_trials; ++t) {
        std::vector<double> at;
        for (const auto& c : curves) {
            // A short history keeps its last best.
            if (!c.empty()) at.push_back(c[std::min<std::size_t>(t, c.size() - 1)]);
        }
        arm.best_median.push_back(median(at));
        arm.best_q25.push_back(quantile(at, 0.25));
        arm.best_q75.push_back(quantile(at, 0.75));
    }
    return arm;
}

AblationReport run_ablation(AblationKind kind, const AblationConfig& config, const ProgressFn& progress) {
    validate_ablation(config);
    const OracleOptimum opt = brute_force_optimum(config.base.oracle, config.optimum_max_nodes);
    AblationReport report;
    report.kind = kind;
    report.repeats = config.repeats;
    report.max_trials = config.base.max_trials;
    report.optimum = opt.fitness;
    report.threshold = config.threshold_fraction * opt.fitness;

    struct Job {
        int arm;
        int repeat;
    };
    std::vector<Job> jobs;
    for (int r = 0; r < config.repeats; ++r) {
        for (int a = 0; a < 2; ++a) jobs.push_back({a, r});
    }
    std::vector<std::vector<std::vector<TrialRecord>>> histories(2, std::vector<std::vector<TrialRecord>>(config.repeats));
    std::mutex progress_mutex;
    const OracleEvaluator evaluator(config.base.oracle);

    auto run_job = [&](const Job& job) {
        const bool on = job.arm == 0;
        const ExperimentConfig c = arm_config(kind, config, on, job.repeat);
        SearchResult res = run_search(c, evaluator);
        if (!config.out_dir.empty()) write_history(res.history, history_path(config.out_dir, arm_name(kind, on), job.repeat));
        if (progress) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            std::ostringstream line;
            line << arm_name(kind, on) << " repeat " << job.repeat << " best " << res.best.fitness << " in " << res.wall_time << " s";
            progress(line.str());
        }
        histories[job.arm][job.repeat] = std::move(res.history);
    };

    if (!config.out_dir.empty()) {
        for (bool on : {true, false}) std::filesystem::create_directories(config.out_dir / arm_name(kind, on));
    }
    if (config.parallel_repeats) {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        const unsigned n = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), jobs.size()));
        std::vector<std::thread> threads;
        for (unsigned t = 0; t < n; ++t) {
            threads.emplace_back([&] {
                for (std::size_t i; (i = next++) < jobs.size();) {
                    try {
                        run_job(jobs[i]);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    } else {
        for (const Job& job : jobs) run_job(job);
    }

    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < config.repeats; ++r) seeds.push_back(config.base.seed + static_cast<std::uint64_t>(r));
    for (int a = 0; a < 2; ++a) {
        report.arms.push_back(summarize_arm(arm_name(kind, a == 0), histories[a], seeds, report.threshold, report.max_trials));
    }
    if (!config.out_dir.empty()) write_report(report, config.out_dir);
    return report;
}

AblationReport ablate_init(const AblationConfig& config, const ProgressFn& progress) {
    return run_ablation(AblationKind::Init, config, progress);
}

AblationReport ablate_estimator(const AblationConfig& config, const ProgressFn& progress) {
    return run_ablation(AblationKind::Estimator, config, progress);
}

nlohmann::json report_to_json(const AblationReport& report) {
    nlohmann::json arms = nlohmann::json::array();
    for (const ArmSummary& a : report.arms) {
        nlohmann::json runs = nlohmann::json::array();
        for (const ArmRun& r : a.runs) runs.push_back(run_json(r));
        arms.push_back({{"name", a.name},
                        {"final_median", a.final_median},
                        {"final_q25", a.final_q25},
                        {"final_q75", a.final_q75},
                        {"trials_to_threshold_median", a.trials_to_threshold_median},
                        {"reached", a.reached},
                        {"runs", runs}});
    }
    return {{"kind", std::string(to_string(report.kind))},
            {"repeats", report.repeats},
            {"max_trials", report.max_trials},
            {"optimum", report.optimum},
            {"threshold", report.threshold},
            {"arms", arms}};
}

AblationReport report_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("ablation report: expected an object");
    AblationReport report;
    const auto kind = field<std::string>(doc, "kind");
    if (kind == "init") {
        report.kind = AblationKind::Init;
    } else if (kind == "estimator") {
        report.kind = AblationKind::Estimator;
    } else {
        throw SchemaError("ablation report: unknown kind " + kind);
    }
    report.repeats = field<int>(doc, "repeats");
    report.max_trials = field<int>(doc, "max_trials");
    report.optimum = field<double>(doc, "optimum");
    report.threshold = field<double>(doc, "threshold");
    for (const auto& a : field<nlohmann::json>(doc, "arms")) {
        ArmSummary arm;
        arm.name = field<std::string>(a, "name");
        arm.final_median = field<double>(a, "final_median");
        arm.final_q25 = field<double>(a, "final_q25");
        arm.final_q75 = field<double>(a, "final_q75");
        arm.trials_to_threshold_median = field<double>(a, "trials_to_threshold_median");
        arm.reached = field<int>(a, "reached");
        for (const auto& r : field<nlohmann::json>(a, "runs")) {
            ArmRun run;
            run.seed = field<std::uint64_t>(r, "seed");
            run.final_best = field<double>(r, "final_best");
            run.trials_to_threshold = field<int>(r, "trials_to_threshold");
            run.reached = field<bool>(r, "reached");
            run.trials = field<int>(r, "trials");
            arm.runs.push_back(run);
        }
        report.arms.push_back(std::move(arm));
    }
    return report;
}

AblationReport recompute_report(const std::filesystem::path& out_dir) {
    std::ifstream in(out_dir / "report.json");
    if (!in) throw IoError("cannot open " + (out_dir / "report.json").string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("report.json: " + std::string(e.what()));
    }
    const AblationReport stored = report_from_json(doc);
    AblationReport report = stored;
    report.arms.clear();
    for (const ArmSummary& a : stored.arms) {
        std::vector<std::vector<TrialRecord>> histories;
        std::vector<std::uint64_t> seeds;
        for (std::size_t r = 0; r < a.runs.size(); ++r) {
            histories.push_back(load_history(history_path(out_dir, a.name, static_cast<int>(r))));
            seeds.push_back(a.runs[r].seed);
        }
        report.arms.push_back(summarize_arm(a.name, histories, seeds, stored.threshold, stored.max_trials));
    }
    return report;
}

std::string convergence_csv(const ArmSummary& arm) {
    std::string out = "trials,best_fitness_median,q25,q75\n";
    char row[128];
    for (std::size_t t = 0; t < arm.best_median.size(); ++t) {
        std::snprintf(row, sizeof row, "%zu,%.6f,%.6f,%.6f\n", t + 1, arm.best_median[t], arm.best_q25[t], arm.best_q75[t]);
        out += row;
    }
    return out;
}

void write_report(const AblationReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "report.json");
        if (!out) throw IoError("cannot write " + (out_dir / "report.json").string());
        out << report_to_json(report).dump(2) << "\n";
    }
    for (const ArmSummary& a : report.arms) {
        std::ofstream out(out_dir / (a.name + "_convergence.csv"));
        if (!out) throw IoError("cannot write convergence CSV for " + a.name);
        out << convergence_csv(a);
    }
}

}  // namespace evoqa
