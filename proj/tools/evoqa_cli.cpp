#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>

#include "evoqa/ablation.hpp"
#include "evoqa/compiler.hpp"
#include "evoqa/encoder.hpp"
#include "evoqa/errors.hpp"
#include "evoqa/estimator.hpp"
#include "evoqa/evolution.hpp"
#include "evoqa/graph_io.hpp"

using namespace evoqa;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& kind, const std::string& message, int code = 1) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
    std::exit(code);
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

void write_json(const fs::path& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << "\n";
}

struct SearchArgs {
    std::string config;
    std::string backend;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_trials;
    std::optional<int> workers;
    std::optional<int> mutation_burst;
    std::string out;
    bool quiet = false;
};

void run_search_command(const SearchArgs& a) {
    ExperimentConfig config = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
    if (!a.backend.empty()) config.backend = backend_from_string(a.backend);
    if (a.seed) config.seed = *a.seed;
    if (a.max_trials) config.max_trials = *a.max_trials;
    if (a.workers) config.workers = *a.workers;
    if (a.mutation_burst) config.mutation_burst = *a.mutation_burst;
    validate_config(config);

    const fs::path out(a.out);
    fs::create_directories(out);
    fs::remove(out / "history.jsonl");
    write_json(out / "config.json", config_to_json(config));
    HistoryWriter history(out / "history.jsonl");

    std::ofstream curve;
    if (config.backend == Backend::ToyQa) {
        curve.open(out / "training_curve.csv");
        if (!curve) throw IoError("cannot write '" + (out / "training_curve.csv").string() + "'");
        curve << "trial_id,epoch,loss,dev_em\n";
    }

    const auto evaluator = make_evaluator(config);
    SearchObserver observer;
    observer.on_trial = [&](const TrialRecord& r, const Population&) {
        history.append(r);
        if (!a.quiet && (r.trial_id + 1) % 25 == 0) {
            log_line("trial " + std::to_string(r.trial_id) + " fitness " + std::to_string(r.fitness));
        }
    };
    observer.on_evaluation = [&](const TrialRecord& r, const Evaluation& e) {
        if (!curve.is_open()) return;
        char row[160];
        for (const EpochStat& s : e.curve) {
            std::snprintf(row, sizeof row, "%d,%d,%.9g,%.9g\n", r.trial_id, s.epoch, s.loss, s.dev_em);
            curve << row;
        }
        curve.flush();
    };
    observer.log = log_line;

    const SearchResult result = run_search(config, *evaluator, observer);
    if (result.estimator) result.estimator->save(out / "estimator.bin");
    const nlohmann::json summary = summary_json(result);
    write_json(out / "summary.json", summary);
    std::cout << summary.dump() << std::endl;
}

struct AblationArgs {
    std::string config;
    std::optional<int> repeats;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    bool parallel = false;
    std::string out;
};

void run_ablation_command(AblationKind kind, const AblationArgs& a) {
    AblationConfig config = a.config.empty() ? AblationConfig{} : load_ablation_config(a.config);
    if (a.repeats) config.repeats = *a.repeats;
    if (a.trials) config.base.max_trials = *a.trials;
    if (a.seed) config.base.seed = *a.seed;
    if (a.threshold) config.threshold_fraction = *a.threshold;
    if (a.parallel) config.parallel_repeats = true;
    config.out_dir = a.out;
    fs::create_directories(config.out_dir);
    write_json(config.out_dir / "ablation_config.json", ablation_config_to_json(config));

    const AblationReport report = run_ablation(kind, config, log_line);
    nlohmann::json brief = {{"kind", std::string(to_string(kind))}, {"optimum", report.optimum}, {"threshold", report.threshold}};
    for (const ArmSummary& arm : report.arms) {
        brief[arm.name] = {{"final_median", arm.final_median},
                           {"trials_to_threshold_median", arm.trials_to_threshold_median},
                           {"reached", arm.reached}};
    }
    std::cout << brief.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evolutionary architecture search for span-extraction QA models"};
    app.require_subcommand(1);

    SearchArgs search;
    auto* cmd_search = app.add_subcommand("search", "Run one evolution search");
    cmd_search->add_option("--config", search.config, "Experiment config JSON (see docs/config.md)")->check(CLI::ExistingFile);
    cmd_search->add_option("--backend", search.backend, "Fitness backend: oracle or toy_qa (overrides the config)");
    cmd_search->add_option("--seed", search.seed, "Experiment seed (overrides the config)");
    cmd_search->add_option("--max-trials", search.max_trials, "Trial budget (overrides the config)");
    cmd_search->add_option("--workers", search.workers, "Concurrent workers (overrides the config)");
    cmd_search->add_option("--mutation-burst", search.mutation_burst, "Mutations per initial member (overrides the config)");
    cmd_search->add_option("--out", search.out, "Run directory for history.jsonl, summary.json and friends")->required();
    cmd_search->add_flag("--quiet", search.quiet, "No progress lines on stderr");

    AblationArgs ablation;
    auto add_ablation = [&](const char* name, const char* help) {
        auto* c = app.add_subcommand(name, help);
        c->add_option("--config", ablation.config, "Ablation config JSON (see docs/config.md)")->check(CLI::ExistingFile);
        c->add_option("--repeats", ablation.repeats, "Paired repeats per arm (default 20)");
        c->add_option("--trials", ablation.trials, "Trial budget per search (default 300)");
        c->add_option("--seed", ablation.seed, "Seed of repeat 0; repeat i uses seed + i in both arms");
        c->add_option("--threshold", ablation.threshold, "Fraction of the brute-forced optimum (default 0.95)");
        c->add_flag("--parallel", ablation.parallel, "Run repeats on separate threads");
        c->add_option("--out", ablation.out, "Output directory for histories, report.json and CSVs")->required();
        return c;
    };
    auto* cmd_ablate_init = add_ablation("ablate-init", "Seeded vs random initial population");
    auto* cmd_ablate_est = add_ablation("ablate-estimator", "Estimator on vs off, random init in both arms");

    std::string graph_path, tensor_out;
    std::optional<int> encode_n;
    auto* cmd_encode = app.add_subcommand("encode", "Encode a graph as an N x N x K relation tensor");
    cmd_encode->add_option("--graph", graph_path, "Graph JSON")->required()->check(CLI::ExistingFile);
    cmd_encode->add_option("--n", encode_n, "Tensor size N (default: the graph's n_max)");
    cmd_encode->add_option("--out", tensor_out, "Write the binary tensor here");

    std::string checkpoint;
    std::vector<std::string> predict_graphs;
    auto* cmd_predict = app.add_subcommand("predict", "Predict fitness with a saved estimator");
    cmd_predict->add_option("--estimator,--checkpoint", checkpoint, "Estimator checkpoint (estimator.bin of a search run)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_predict->add_option("--graph", predict_graphs, "Graph JSON; repeatable")->required()->check(CLI::ExistingFile);

    std::string replay_path;
    bool audit = false;
    auto* cmd_replay = app.add_subcommand("replay", "Recompute the best trial from a history file");
    cmd_replay->add_option("history", replay_path, "history.jsonl")->required()->check(CLI::ExistingFile);
    cmd_replay->add_flag("--audit", audit, "Also check ids, lineage and actions");

    ToyDataConfig toy;
    std::string toy_out;
    auto* cmd_toy = app.add_subcommand("gen-toy-data", "Write the synthetic span-extraction dataset as JSON Lines");
    cmd_toy->add_option("--out", toy_out, "Output .jsonl")->required();
    cmd_toy->add_option("--examples", toy.n_examples, "Training examples")->capture_default_str();
    cmd_toy->add_option("--dev", toy.n_dev, "Held-out examples")->capture_default_str();
    cmd_toy->add_option("--len-doc", toy.len_doc, "Document length")->capture_default_str();
    cmd_toy->add_option("--vocab", toy.vocab, "Vocabulary size")->capture_default_str();
    cmd_toy->add_option("--needle-min", toy.needle_min, "Shortest answer")->capture_default_str();
    cmd_toy->add_option("--needle-max", toy.needle_max, "Longest answer")->capture_default_str();
    cmd_toy->add_option("--seed", toy.seed, "Generator seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail("usage", e.what(), 2);
    }

    try {
        if (*cmd_search) {
            run_search_command(search);
        } else if (*cmd_ablate_init) {
            run_ablation_command(AblationKind::Init, ablation);
        } else if (*cmd_ablate_est) {
            run_ablation_command(AblationKind::Estimator, ablation);
        } else if (*cmd_encode) {
            const ModelGraph g = load_graph(graph_path);
            const RelationTensor t = encode_n ? encode(g, *encode_n) : encode(g);
            if (!tensor_out.empty()) write_tensor(t, tensor_out);
            std::cout << nlohmann::json{{"n", t.n()}, {"k", t.k()}, {"n_used", t.n_used()}}.dump() << std::endl;
        } else if (*cmd_predict) {
            const Estimator est = Estimator::load(checkpoint);
            for (const std::string& p : predict_graphs) {
                const ModelGraph g = load_graph(p);
                std::cout << nlohmann::json{{"graph", p}, {"prediction", est.predict(encode(g, est.config().n))}}.dump() << std::endl;
            }
        } else if (*cmd_replay) {
            std::vector<std::string> warnings;
            const auto history = load_history(replay_path, &warnings);
            for (const auto& w : warnings) log_line("warning: " + w);
            const ReplayResult r = replay(history);
            nlohmann::json out = {{"best_trial_id", r.best_trial_id}, {"best_fitness", r.best_fitness}, {"trials", r.trials}};
            if (audit) {
                const AuditReport report = audit_history(history);
                out["audit_problems"] = report.problems;
                std::cout << out.dump() << std::endl;
                if (!report.ok()) fail("audit", std::to_string(report.problems.size()) + " problems; first: " + report.problems.front());
                return 0;
            }
            std::cout << out.dump() << std::endl;
        } else if (*cmd_toy) {
            const ToyDataset data = make_toy_dataset(toy);
            std::ofstream out(toy_out);
            if (!out) throw IoError("cannot write '" + toy_out + "'");
            auto dump = [&](const std::vector<ToyQAExample>& xs, const char* split) {
                for (const auto& x : xs) {
                    out << nlohmann::json{{"split", split}, {"doc", x.doc}, {"question", x.question}, {"answer_start", x.answer_start},
                                          {"answer_end", x.answer_end}}
                               .dump()
                        << "\n";
                }
            };
            dump(data.train, "train");
            dump(data.dev, "dev");
            std::cout << nlohmann::json{{"train", data.train.size()}, {"dev", data.dev.size()}, {"out", toy_out}}.dump() << std::endl;
        }
    } catch (const SchemaError& e) {
        fail("schema", e.what());
    } catch (const IoError& e) {
        fail("io", e.what());
    } catch (const ConfigError& e) {
        fail("config", e.what());
    } catch (const GraphError& e) {
        fail("graph", e.what());
    } catch (const EncodingError& e) {
        fail("encoding", e.what());
    } catch (const std::exception& e) {
        fail("error", e.what());
    }
    return 0;
}
