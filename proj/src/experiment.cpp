#include "pfssl/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>

#include "pfssl/errors.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    body(out);
    out.flush();
    if (!out) throw Error("failed writing " + path.string());
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

std::uint64_t repeat_seed(std::uint64_t master, std::size_t repeat) { return derive_seed(master, {repeat}); }

Dataset load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    if (cfg.kind == "synthetic") {
        return generate_synthetic(cfg.classes, cfg.per_class, cfg.spread, stream_seed(seed, Stream::synthetic),
                                  cfg.feature_dim);
    }
    Dataset d = load_idx(cfg.images, cfg.labels, cfg.class_count);
    if (cfg.limit && *cfg.limit < d.size()) {
        std::vector<std::size_t> rows(*cfg.limit);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        d = d.subset(rows);
    }
    return d;
}

PartitionResult make_partition(const ExperimentConfig& cfg, std::uint64_t seed) {
    PartitionResult out;
    out.source = load_dataset(cfg.dataset, seed);
    PartitionSpec spec = cfg.partition;
    spec.seed = stream_seed(seed, Stream::partition);
    out.clients = build_clients(out.source, spec);
    return out;
}

std::optional<double> RunResult::best_mean_test_acc() const { return best_mean_test_accuracy(trace.metrics); }

double RunResult::final_mean_test_acc() const {
    return trace.metrics.empty() ? 0.0 : trace.metrics.back().mean_test_acc;
}

bool RunResult::invariants_ok() const {
    return audit.ok() && (method == "fedavg_semi" || method == "local_only" || reconcile.ok());
}

RunResult run_experiment(const ExperimentConfig& cfg, std::size_t repeat) {
    cfg.validate();
    RunResult r;
    r.method = cfg.method;
    r.mode = cfg.corr_mode();
    r.repeat = repeat;
    r.seed = repeat_seed(cfg.seed, repeat);
    r.round = cfg.protocol;
    r.round.seed = r.seed;

    auto part = make_partition(cfg, r.seed);
    r.source = std::move(part.source);
    const auto net = cfg.net_spec(r.source.features.cols, r.source.class_count);
    auto fed = setup_federation(std::move(part.clients), net, r.round, cfg.training);

    const Method kind = cfg.method_kind();
    r.trace = kind == Method::um_pfssl ? run(r.round, cfg.training, r.mode, fed.clients, fed.pool)
                                       : run_baseline(r.round, cfg.training, kind, fed.clients, fed.pool);
    r.clients = std::move(fed.clients);
    r.reconcile = reconcile(r.trace.ledger, r.trace.events, r.round.effective_cost_model(), r.round.fill_allowance());
    r.audit = audit_trace(r.round, kind, r.trace);
    return r;
}

std::string_view to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::alpha: return "alpha";
        case SweepAxis::search_rounds: return "F";
        case SweepAxis::update_period: return "nu";
        case SweepAxis::sample_rate: return "tau";
    }
    return "alpha";
}

SweepAxis sweep_axis_from_string(std::string_view name) {
    if (name == "alpha") return SweepAxis::alpha;
    if (name == "F") return SweepAxis::search_rounds;
    if (name == "nu") return SweepAxis::update_period;
    if (name == "tau") return SweepAxis::sample_rate;
    throw ConfigError("axis", "expected alpha, F, nu or tau");
}

ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis, double value) {
    ExperimentConfig cfg = base;
    auto as_count = [&](const char* field) {
        if (!(value >= 0.0 && value == std::floor(value))) throw ConfigError(field, "sweep value must be an integer");
        return static_cast<std::size_t>(value);
    };
    switch (axis) {
        case SweepAxis::alpha: cfg.partition.alpha = value; break;
        case SweepAxis::search_rounds: cfg.protocol.search_rounds = as_count("protocol.search_rounds"); break;
        case SweepAxis::update_period: cfg.protocol.update_period = as_count("protocol.update_period"); break;
        case SweepAxis::sample_rate:
            if (!(value > 0.0 && value <= 1.0)) throw ConfigError("protocol.sample_rate", "must lie in (0, 1]");
            cfg.protocol.sample_rate = Rational::from_double(value);
            break;
    }
    cfg.sync();
    cfg.validate();
    return cfg;
}

Rational analytic_cost_fraction(const ExperimentConfig& base, SweepAxis axis, double value) {
    const CostModel point = with_axis(base, axis, value).protocol.cost_model();
    CostModel reference = base.protocol.cost_model();
    switch (axis) {
        case SweepAxis::alpha: return cost2_bound(point) / cost1(point.sample_rate, point.clients, point.rounds);
        case SweepAxis::search_rounds: reference.search_rounds = reference.rounds; break;
        case SweepAxis::update_period: reference.update_period = 1; break;
        case SweepAxis::sample_rate: reference.sample_rate = Rational(1); break;
    }
    return cost2_bound(point) / cost2_bound(reference);
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values,
                                const std::filesystem::path& out) {
    if (values.empty()) throw ConfigError("values", "sweep grid must not be empty");
    std::vector<ExperimentConfig> points;
    for (double v : values) points.push_back(with_axis(base, axis, v));

    std::vector<SweepRow> rows;
    for (std::size_t p = 0; p < points.size(); ++p) {
        const auto& cfg = points[p];
        SweepRow row;
        row.axis = axis;
        row.value = values[p];
        row.repeats = cfg.repeats;
        row.analytic_bound = cost2_bound(cfg.protocol.cost_model());
        row.cost_fraction = analytic_cost_fraction(base, axis, values[p]);
        const auto dir = out / (std::string(to_string(axis)) + "_" + fmt(values[p], "%g"));
        std::vector<RunResult> runs;
        for (std::size_t i = 0; i < cfg.repeats; ++i) {
            runs.push_back(run_experiment(cfg, i));
            emit_reports(runs.back(), dir / ("repeat_" + std::to_string(i)));
            row.best_mean_test_acc += runs.back().best_mean_test_acc().value_or(0.0);
            row.final_mean_test_acc += runs.back().final_mean_test_acc();
            row.measured_traffic += static_cast<double>(runs.back().trace.ledger.total());
            row.invariants_ok = row.invariants_ok && runs.back().invariants_ok();
        }
        const auto n = static_cast<double>(cfg.repeats);
        row.best_mean_test_acc /= n;
        row.final_mean_test_acc /= n;
        row.measured_traffic /= n;
        emit_repeat_reports(runs, dir);
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "axis,value,repeats,best_mean_test_acc,final_mean_test_acc,measured_traffic,analytic_bound,"
           "cost_percent_of_baseline,invariants_ok\n";
    for (const auto& r : rows) {
        out << to_string(r.axis) << ',' << fmt(r.value, "%g") << ',' << r.repeats << ',' << fmt(r.best_mean_test_acc)
            << ',' << fmt(r.final_mean_test_acc) << ',' << fmt(r.measured_traffic, "%.2f") << ','
            << r.analytic_bound.to_decimal(2) << ',' << (r.cost_fraction * Rational(100)).to_decimal(1) << ','
            << (r.invariants_ok ? "true" : "false") << '\n';
    }
}

void emit_reports(const RunResult& run, const std::filesystem::path& dir) {
    make_dir(dir);
    write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, run.trace.metrics); });
    write_file(dir / "clients.csv", [&](std::ostream& o) { write_client_metrics_csv(o, run.trace.metrics); });
    write_file(dir / "costs.csv", [&](std::ostream& o) {
        write_costs_csv(o, run.trace.ledger, run.round.effective_cost_model(), run.round.fill_allowance());
    });
    write_file(dir / "partition.csv", [&](std::ostream& o) {
        std::vector<ClientDataset> data;
        data.reserve(run.clients.size());
        for (const auto& c : run.clients) data.push_back(*c.data);
        write_partition_csv(o, run.source, data);
    });
    write_file(dir / "events.csv", [&](std::ostream& o) { write_events_csv(o, run.trace.events); });
    write_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, run.clients, run.trace.metrics); });
    write_file(dir / "invariants.txt", [&](std::ostream& o) {
        o << "method " << run.method << " (corr " << to_string(run.mode) << "), seed " << run.seed << '\n';
        o << "ledger: " << run.reconcile.message << '\n';
        o << "audit: " << (run.audit.ok() ? "ok" : "FAILED") << '\n';
        for (const auto& v : run.audit.violations) o << "  " << v << '\n';
        o << (run.invariants_ok() ? "all invariants held\n" : "INVARIANT BREACH\n");
    });
}

void emit_repeat_reports(std::span<const RunResult> runs, const std::filesystem::path& dir) {
    make_dir(dir);
    write_file(dir / "repeat_summary.csv", [&](std::ostream& o) {
        o << "repeat,seed,best_mean_test_acc,final_mean_test_acc,final_acc_variance,uploads,downloads,invariants_ok\n";
        double best = 0.0;
        double fin = 0.0;
        double var = 0.0;
        for (const auto& r : runs) {
            const double v = r.trace.metrics.empty() ? 0.0 : r.trace.metrics.back().acc_variance;
            o << r.repeat << ',' << r.seed << ',' << fmt(r.best_mean_test_acc().value_or(0.0)) << ','
              << fmt(r.final_mean_test_acc()) << ',' << fmt(v) << ',' << r.trace.ledger.uploads() << ','
              << r.trace.ledger.downloads() << ',' << (r.invariants_ok() ? "true" : "false") << '\n';
            best += r.best_mean_test_acc().value_or(0.0);
            fin += r.final_mean_test_acc();
            var += v;
        }
        if (!runs.empty()) {
            const auto n = static_cast<double>(runs.size());
            o << "mean,," << fmt(best / n) << ',' << fmt(fin / n) << ',' << fmt(var / n) << ",,,\n";
        }
    });
    write_file(dir / "mean_curve.csv", [&](std::ostream& o) {
        o << "round,mean_val_acc,mean_test_acc,acc_variance,pseudo_label_error_rate\n";
        if (runs.empty()) return;
        const std::size_t rounds = runs.front().trace.metrics.size();
        for (std::size_t t = 0; t < rounds; ++t) {
            double val = 0.0, test = 0.0, var = 0.0, err = 0.0;
            for (const auto& r : runs) {
                const auto& m = r.trace.metrics.at(t);
                val += m.mean_val_acc;
                test += m.mean_test_acc;
                var += m.acc_variance;
                err += m.pseudo_label_error_rate;
            }
            const auto n = static_cast<double>(runs.size());
            o << runs.front().trace.metrics[t].round << ',' << fmt(val / n) << ',' << fmt(test / n) << ','
              << fmt(var / n) << ',' << fmt(err / n) << '\n';
        }
    });
}

void print_summary(std::ostream& out, std::span<const RunResult> runs) {
    out << std::left << std::setw(8) << "repeat" << std::setw(14) << "method" << std::setw(8) << "corr"
        << std::right << std::setw(10) << "best_acc" << std::setw(11) << "final_acc" << std::setw(10) << "variance"
        << std::setw(10) << "uploads" << std::setw(11) << "downloads" << "  invariants\n";
    for (const auto& r : runs) {
        const double v = r.trace.metrics.empty() ? 0.0 : r.trace.metrics.back().acc_variance;
        out << std::left << std::setw(8) << r.repeat << std::setw(14) << r.method << std::setw(8) << to_string(r.mode)
            << std::right << std::setw(10) << fmt(r.best_mean_test_acc().value_or(0.0), "%.4f") << std::setw(11)
            << fmt(r.final_mean_test_acc(), "%.4f") << std::setw(10) << fmt(v, "%.5f") << std::setw(10)
            << r.trace.ledger.uploads() << std::setw(11) << r.trace.ledger.downloads() << "  "
            << (r.invariants_ok() ? "ok" : "BREACH") << '\n';
    }
}

}  // namespace pfssl
