// Command-line front end: dataset generation, solving, training, evaluation.
// Exit codes: 0 success, 2 usage error, 3 runtime fault.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vaproute/baselines.hpp"
#include "vaproute/bench.hpp"
#include "vaproute/checkpoint.hpp"
#include "vaproute/config.hpp"
#include "vaproute/generator.hpp"
#include "vaproute/io.hpp"
#include "vaproute/policy.hpp"
#include "vaproute/training.hpp"

namespace fs = std::filesystem;
using namespace vaproute;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct RuntimeFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Default output directory: --out flag beats VAPROUTE_OUT_DIR beats cwd.
std::string resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("VAPROUTE_OUT_DIR")) return env;
    return ".";
}

std::string instance_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "inst_%06d.json", index);
    return buf;
}

struct GenerateArgs {
    int n = 1;
    int customers = 50;
    int fleet = 20;
    int types = 3;
    std::string variant = "c";
    std::uint64_t seed = 1;
    std::string out;
    bool force = false;
};

int run_generate(const GenerateArgs& a) {
    const fs::path dir = resolve_out_dir(a.out);
    if (!fs::is_directory(dir))
        throw RuntimeFault("output directory does not exist: " + dir.string());

    GeneratorConfig cfg;
    cfg.customers = a.customers;
    cfg.fleet_size = a.fleet;
    cfg.vehicle_types = a.types;
    cfg.variant = variant_from_string(a.variant);

    for (int i = 0; i < a.n; ++i) {
        cfg.seed = derive_seed(a.seed, static_cast<std::uint64_t>(i));
        const fs::path file = dir / instance_file_name(i);
        if (fs::exists(file) && !a.force)
            throw RuntimeFault("refusing to overwrite " + file.string() + " (use --force)");
        const Instance inst = generate_instance(cfg);
        write_file(file.string(), serialize(inst));
    }
    std::cerr << "wrote " << a.n << " instance(s) to " << dir.string() << "\n";
    return kExitOk;
}

ModelParams params_from_checkpoint_file(const std::string& path) {
    if (!fs::exists(path)) throw RuntimeFault("checkpoint file not found: " + path);
    return load_checkpoint(path).params;
}

// Greedy policy decode with the same fallback contract as sample_best: if the
// rollout dead-ends, the heuristic constructor supplies the reported routes.
Solution policy_greedy_solution(const Instance& inst, const ModelParams& params,
                                bool* fallback = nullptr) {
    ad::Tape tape(false);
    const PolicyRollout r = policy_rollout(tape, params, inst, DecodeMode::greedy);
    if (fallback) *fallback = r.traj.infeasible;
    if (r.traj.infeasible) return greedy_construct(inst);
    return decode_solution(r.traj, inst);
}

struct SolveArgs {
    std::string instance_file;
    std::string method = "greedy";
    std::string checkpoint;
    int samples = 0;
    std::uint64_t seed = 1;
};

int run_solve(const SolveArgs& a) {
    const Instance inst = load_instance(a.instance_file);
    if (const auto problems = validate_instance(inst); !problems.empty())
        throw RuntimeFault("invalid instance: " + problems.front());

    Solution sol;
    if (a.method == "greedy") {
        sol = greedy_construct(inst);
    } else if (a.method == "oracle") {
        sol = exhaustive_solve(inst).best_solution;
    } else if (a.method == "policy") {
        if (a.checkpoint.empty())
            throw RuntimeFault("--method policy requires --checkpoint");
        const ModelParams params = params_from_checkpoint_file(a.checkpoint);
        if (a.samples > 0)
            sol = sample_best(inst, params, a.samples, a.seed).solution;
        else
            sol = policy_greedy_solution(inst, params);
    } else {
        throw RuntimeFault("unknown method: " + a.method);
    }
    std::cout << to_json(sol).dump(2) << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config_file;
    std::string resume;
    std::string out;
    std::string tag = "model";
};

int run_train(const TrainArgs& a) {
    const fs::path dir = resolve_out_dir(a.out);
    if (!fs::is_directory(dir))
        throw RuntimeFault("output directory does not exist: " + dir.string());
    const RunConfig rc = load_run_config(a.config_file);

    Checkpoint resume_cp;
    const Checkpoint* resume = nullptr;
    if (!a.resume.empty()) {
        if (!fs::exists(a.resume))
            throw RuntimeFault("checkpoint file not found: " + a.resume);
        resume_cp = load_checkpoint(a.resume);
        resume = &resume_cp;
    }

    const fs::path metrics_path = dir / (a.tag + "_metrics.jsonl");
    std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw RuntimeFault("cannot open " + metrics_path.string());

    const auto on_epoch = [&](const EpochMetrics& m) {
        metrics << to_json(m).dump() << "\n";
        metrics.flush();
        std::fprintf(stderr, "epoch %ld  loss %.6f  val %.6f  lr %.2e\n", m.epoch, m.loss,
                     m.val_cost, m.lr);
    };

    const TrainResult res = train(rc.generator, rc.model, rc.train, resume, on_epoch);

    save_checkpoint(res.final, (dir / (a.tag + "_final.json")).string());
    save_checkpoint(res.best, (dir / (a.tag + "_best.json")).string());

    Json summary{{"epochs_run", res.final.epoch},
                 {"step", res.final.step},
                 {"initial_val", res.initial_val},
                 {"best_val", res.best_val},
                 {"early_stopped", res.early_stopped},
                 {"diverged", res.diverged},
                 {"final_checkpoint", (dir / (a.tag + "_final.json")).string()},
                 {"best_checkpoint", (dir / (a.tag + "_best.json")).string()}};
    std::cout << summary.dump(2) << "\n";

    if (res.diverged) {
        std::cerr << "error: training aborted: " << res.abort_reason << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

struct EvalArgs {
    std::string instances_dir;
    std::string method = "policy";
    std::string checkpoint;
    int samples = 0;
    std::string reference = "greedy";
    std::string reference_file;
    std::uint64_t seed = 1;
    std::string out;
    std::string tag = "eval";
};

int run_eval(const EvalArgs& a) {
    const fs::path dir = resolve_out_dir(a.out);
    if (!fs::is_directory(dir))
        throw RuntimeFault("output directory does not exist: " + dir.string());
    if (!fs::is_directory(a.instances_dir))
        throw RuntimeFault("instance directory does not exist: " + a.instances_dir);

    // only generator-named files: reports or checkpoints may share the directory
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.instances_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("inst_", 0) == 0 &&
            entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw RuntimeFault("no inst_*.json files in " + a.instances_dir);

    ModelParams params;
    std::string method_label = a.method;
    if (a.method == "policy") {
        if (a.checkpoint.empty())
            throw RuntimeFault("--method policy requires --checkpoint");
        params = params_from_checkpoint_file(a.checkpoint);
        method_label = a.samples > 0 ? "policy-sample-" + std::to_string(a.samples)
                                     : "policy-greedy";
    }

    std::map<std::string, double> file_refs;
    if (a.reference == "file") {
        if (a.reference_file.empty())
            throw RuntimeFault("--reference file requires --reference-file");
        for (const auto& row : rows_from_csv(read_file(a.reference_file)))
            file_refs[row.instance_id] = row.objective;
    }

    std::vector<EvalRow> rows;
    int inst_index = 0;
    for (const auto& file : files) {
        const Instance inst = load_instance(file.string());
        EvalRow row;
        row.instance_id = file.stem().string();
        row.variant = variant_name(inst.variant);
        row.n = inst.num_customers();
        row.k = inst.num_types();
        row.method = method_label;

        WallTimer timer;
        if (a.method == "greedy") {
            row.objective = greedy_construct(inst).objective;
        } else if (a.method == "oracle") {
            row.objective = exhaustive_solve(inst).best_solution.objective;
        } else if (a.method == "policy") {
            if (a.samples > 0)
                row.objective = sample_best(inst, params, a.samples,
                                            derive_seed(a.seed, inst_index))
                                    .cost;
            else
                row.objective = policy_greedy_solution(inst, params).objective;
        } else {
            throw RuntimeFault("unknown method: " + a.method);
        }
        row.time_s = timer.seconds();

        if (a.reference == "greedy") {
            row.reference = greedy_construct(inst).objective;
        } else if (a.reference == "oracle") {
            row.reference = exhaustive_solve(inst).best_solution.objective;
        } else if (a.reference == "file") {
            const auto it = file_refs.find(row.instance_id);
            if (it == file_refs.end())
                throw RuntimeFault("reference file has no row for " + row.instance_id);
            row.reference = it->second;
        } else {
            throw RuntimeFault("unknown reference: " + a.reference);
        }
        row.gap_pct = 100.0 * relative_gap(row.objective, row.reference);
        rows.push_back(std::move(row));
        ++inst_index;
    }

    const EvalReport rep = make_report(std::move(rows));
    const fs::path csv_path = dir / (a.tag + ".csv");
    const fs::path json_path = dir / (a.tag + ".json");
    write_file(csv_path.string(), to_csv(rep));
    write_file(json_path.string(), to_json(rep).dump(2) + "\n");

    Json summary{{"instances", rep.rows.size()},
                 {"method", method_label},
                 {"reference", a.reference},
                 {"mean_objective", rep.mean_objective},
                 {"mean_gap_pct", rep.mean_gap_pct},
                 {"mean_time_s", rep.mean_time_s},
                 {"csv", csv_path.string()},
                 {"json", json_path.string()}};
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

struct GapReportArgs {
    std::vector<std::string> csv_files;
};

int run_gap_report(const GapReportArgs& a) {
    std::vector<EvalRow> rows;
    for (const auto& file : a.csv_files) {
        if (!fs::exists(file)) throw RuntimeFault("csv file not found: " + file);
        auto part = rows_from_csv(read_file(file));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw RuntimeFault("no rows in input csv files");
    std::cout << to_json(summarize_by_method(rows)).dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vaproute: heterogeneous-fleet VRP toolkit"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* cmd_gen = app.add_subcommand("generate", "Write seeded random instances to a directory");
    cmd_gen->add_option("--n", gen.n, "number of instances")->check(CLI::PositiveNumber);
    cmd_gen->add_option("--customers", gen.customers, "customers per instance");
    cmd_gen->add_option("--fleet", gen.fleet, "total vehicles");
    cmd_gen->add_option("--types", gen.types, "vehicle types");
    cmd_gen->add_option("--variant", gen.variant, "variant name: c|o|b|l|tw or combos");
    cmd_gen->add_option("--seed", gen.seed, "master seed");
    cmd_gen->add_option("--out", gen.out, "output directory (default: $VAPROUTE_OUT_DIR or .)");
    cmd_gen->add_flag("--force", gen.force, "overwrite existing files");

    SolveArgs solve;
    auto* cmd_solve = app.add_subcommand("solve", "Solve one instance, print Solution JSON");
    cmd_solve->add_option("instance", solve.instance_file, "instance JSON file")->required();
    cmd_solve->add_option("--method", solve.method, "solver")
        ->check(CLI::IsMember({"greedy", "oracle", "policy"}));
    cmd_solve->add_option("--checkpoint", solve.checkpoint, "model checkpoint (policy method)");
    cmd_solve->add_option("--samples", solve.samples, "policy rollouts; 0 = greedy decode")
        ->check(CLI::NonNegativeNumber);
    cmd_solve->add_option("--seed", solve.seed, "sampling seed");

    TrainArgs tr;
    auto* cmd_train = app.add_subcommand("train", "Train a policy from a run-config file");
    cmd_train->add_option("--config", tr.config_file, "run config JSON")->required();
    cmd_train->add_option("--resume", tr.resume, "checkpoint to continue from");
    cmd_train->add_option("--out", tr.out, "output directory (default: $VAPROUTE_OUT_DIR or .)");
    cmd_train->add_option("--tag", tr.tag, "output file prefix");

    EvalArgs ev;
    auto* cmd_eval = app.add_subcommand("eval", "Evaluate a method over an instance directory");
    cmd_eval->add_option("--instances", ev.instances_dir, "directory of instance JSON files")
        ->required();
    cmd_eval->add_option("--method", ev.method, "method to evaluate")
        ->check(CLI::IsMember({"policy", "greedy", "oracle"}));
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint (policy method)");
    cmd_eval->add_option("--samples", ev.samples, "policy rollouts; 0 = greedy decode")
        ->check(CLI::NonNegativeNumber);
    cmd_eval->add_option("--reference", ev.reference, "reference objective source")
        ->check(CLI::IsMember({"oracle", "greedy", "file"}));
    cmd_eval->add_option("--reference-file", ev.reference_file, "eval CSV supplying references");
    cmd_eval->add_option("--seed", ev.seed, "sampling seed");
    cmd_eval->add_option("--out", ev.out, "output directory (default: $VAPROUTE_OUT_DIR or .)");
    cmd_eval->add_option("--tag", ev.tag, "output file prefix");

    GapReportArgs gr;
    auto* cmd_gap = app.add_subcommand("gap-report", "Aggregate eval CSVs by method");
    cmd_gap->add_option("--csv", gr.csv_files, "eval CSV file(s)")->required()->expected(-1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (cmd_gen->parsed()) return run_generate(gen);
        if (cmd_solve->parsed()) return run_solve(solve);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_gap->parsed()) return run_gap_report(gr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
