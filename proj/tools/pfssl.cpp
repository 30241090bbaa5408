// Command-line driver: partition, run, sweep and report subcommands.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pfssl/config.hpp"
#include "pfssl/errors.hpp"
#include "pfssl/experiment.hpp"
#include "pfssl/uncertainty.hpp"

namespace {

namespace fs = std::filesystem;
using namespace pfssl;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitBreach = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> repeats;
    std::optional<std::string> method;
    std::optional<std::string> ablation;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "experiment config (JSON); defaults apply when omitted");
    cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--repeats", o.repeats, "number of seeded repeats");
    cmd->add_option("--method", o.method, "um_pfssl, fedavg_semi, local_only, en_only or ta_only");
    cmd->add_option("--ablation", o.ablation, "Corr mode: en, ta, en+ta or random");
    cmd->add_option("--threads", o.threads, "worker threads for the client phase");
}

// Fully validated before anything touches the output directory.
ExperimentConfig resolve(const CommonOptions& o) {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed) cfg.seed = *o.seed;
    if (o.repeats) cfg.repeats = *o.repeats;
    if (o.method) cfg.method = *o.method;
    if (o.ablation) {
        try {
            cfg.ablation = corr_mode_from_string(*o.ablation);
        } catch (const DomainError& e) {
            throw ConfigError("ablation", e.what());
        }
    }
    if (o.threads) cfg.threads = *o.threads;
    cfg.sync();
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

int cmd_partition(const CommonOptions& o) {
    const auto cfg = resolve(o);
    const auto part = make_partition(cfg, repeat_seed(cfg.seed, 0));
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "partition.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (fs::path(cfg.output_dir) / "partition.csv").string());
    write_partition_csv(out, part.source, part.clients);
    std::cout << "partitioned " << part.source.size() << " rows over " << part.clients.size() << " clients into "
              << (fs::path(cfg.output_dir) / "partition.csv").string() << '\n';
    return kExitOk;
}

int cmd_run(const CommonOptions& o) {
    const auto cfg = resolve(o);
    std::vector<RunResult> runs;
    runs.reserve(cfg.repeats);
    for (std::size_t i = 0; i < cfg.repeats; ++i) runs.push_back(run_experiment(cfg, i));

    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    write_text(out / "config.json", serialize_config(cfg));
    if (runs.size() == 1) {
        emit_reports(runs.front(), out);
    } else {
        for (const auto& r : runs) emit_reports(r, out / ("repeat_" + std::to_string(r.repeat)));
    }
    emit_repeat_reports(runs, out);
    print_summary(std::cout, runs);

    bool ok = true;
    for (const auto& r : runs) {
        if (!r.invariants_ok()) {
            ok = false;
            std::cerr << "repeat " << r.repeat << ": invariant breach; " << r.reconcile.message << '\n';
            for (const auto& v : r.audit.violations) std::cerr << "  " << v << '\n';
        }
    }
    return ok ? kExitOk : kExitBreach;
}

int cmd_sweep(const CommonOptions& o, const std::string& axis_name, const std::vector<double>& values) {
    const auto cfg = resolve(o);
    const SweepAxis axis = sweep_axis_from_string(axis_name);
    if (values.empty()) throw ConfigError("values", "sweep grid must not be empty");
    for (double v : values) (void)with_axis(cfg, axis, v);  // validate every point up front

    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    write_text(out / "config.json", serialize_config(cfg));
    const auto rows = run_sweep(cfg, axis, values, out);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    write_text(out / "sweep.csv", csv.str());
    std::cout << csv.str();
    for (const auto& r : rows) {
        if (!r.invariants_ok) return kExitBreach;
    }
    return kExitOk;
}

int cmd_report(const std::string& dir) {
    const fs::path root(dir);
    bool any = false;
    for (const char* name : {"repeat_summary.csv", "sweep.csv", "metrics.csv"}) {
        std::ifstream in(root / name);
        if (!in) continue;
        any = true;
        std::cout << "== " << (root / name).string() << '\n';
        if (std::string(name) == "metrics.csv") {
            std::string header;
            std::string line;
            std::string last;
            double best = -1.0;
            std::getline(in, header);
            while (std::getline(in, line)) {
                std::stringstream ss(line);
                std::string round, val, test;
                std::getline(ss, round, ',');
                std::getline(ss, val, ',');
                std::getline(ss, test, ',');
                best = std::max(best, std::stod(test));
                last = line;
            }
            std::cout << "best mean test accuracy " << best << "\nlast row: " << last << '\n';
        } else {
            std::cout << in.rdbuf();
        }
    }
    if (!any) throw Error("no reports found in " + root.string());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated semi-supervised learning simulator"};
    app.require_subcommand(1);

    CommonOptions part_opts, run_opts, sweep_opts;
    auto* partition = app.add_subcommand("partition", "partition the dataset and write partition.csv");
    add_common(partition, part_opts);
    auto* run = app.add_subcommand("run", "warm up, run the selected scheduler and write reports");
    add_common(run, run_opts);
    auto* sweep = app.add_subcommand("sweep", "run a grid over one axis and write sweep.csv");
    add_common(sweep, sweep_opts);
    std::string axis;
    std::vector<double> values;
    sweep->add_option("--axis", axis, "alpha, F, nu or tau")->required();
    sweep->add_option("--values", values, "grid values")->required()->delimiter(',');
    auto* report = app.add_subcommand("report", "print the summaries stored in an output directory");
    std::string report_dir;
    report->add_option("--out", report_dir, "output directory of a previous run or sweep")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (partition->parsed()) return cmd_partition(part_opts);
        if (run->parsed()) return cmd_run(run_opts);
        if (sweep->parsed()) return cmd_sweep(sweep_opts, axis, values);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}
