#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfssl/config.hpp"
#include "pfssl/protocol.hpp"

namespace pfssl {

// master -> per-repeat seed; repeat i never depends on how many repeats run.
std::uint64_t repeat_seed(std::uint64_t master, std::size_t repeat);

Dataset load_dataset(const DatasetConfig& cfg, std::uint64_t seed);

struct PartitionResult {
    Dataset source;
    std::vector<ClientDataset> clients;
};

PartitionResult make_partition(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunResult {
    std::string method;
    CorrMode mode = CorrMode::combined;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    RoundConfig round;
    Dataset source;
    std::vector<ClientState> clients;
    Trace trace;
    ReconcileReport reconcile;  // meaningful for um_pfssl only
    ProtocolAudit audit;

    std::optional<double> best_mean_test_acc() const;
    double final_mean_test_acc() const;
    // Audit, and for um_pfssl the ledger bound, all held.
    bool invariants_ok() const;
};

RunResult run_experiment(const ExperimentConfig& cfg, std::size_t repeat = 0);

enum class SweepAxis { alpha, search_rounds, update_period, sample_rate };

std::string_view to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(std::string_view name);

// Copy of `base` with the axis set to `value`.
ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis, double value);

// cost2_bound at `value` over the axis baseline: nu = 1, tau = 1, F = n, and
// for alpha the greedy-search cost1.
Rational analytic_cost_fraction(const ExperimentConfig& base, SweepAxis axis, double value);

struct SweepRow {
    SweepAxis axis = SweepAxis::alpha;
    double value = 0.0;
    std::size_t repeats = 0;
    double best_mean_test_acc = 0.0;   // averaged over repeats
    double final_mean_test_acc = 0.0;  // averaged over repeats
    double measured_traffic = 0.0;     // averaged over repeats
    Rational analytic_bound;
    Rational cost_fraction;
    bool invariants_ok = true;
};

// Each point's repeats go to out/<axis>_<value>/repeat_<i>. Throws ConfigError
// on an empty grid.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values,
                                const std::filesystem::path& out);

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

// metrics.csv, clients.csv, costs.csv, partition.csv, events.csv, summary.csv
// and invariants.txt in `dir`.
void emit_reports(const RunResult& run, const std::filesystem::path& dir);

// repeat_summary.csv (one row per repeat) and mean_curve.csv (per-round means
// over repeats).
void emit_repeat_reports(std::span<const RunResult> runs, const std::filesystem::path& dir);

// Plain-text table of per-repeat best and final accuracies and traffic.
void print_summary(std::ostream& out, std::span<const RunResult> runs);

}  // namespace pfssl
