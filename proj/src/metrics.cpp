#include "pfssl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <utility>

#include "pfssl/errors.hpp"
#include "pfssl/parallel.hpp"

namespace pfssl {

// Sole holder of HiddenTruthKey construction rights.
class TruthReader {
public:
    static std::span<const std::size_t> read(const ClientDataset& client) noexcept {
        return client.hidden_labels(HiddenTruthKey{});
    }
};

namespace metrics {

std::span<const std::size_t> hidden_truth(const ClientDataset& client) { return TruthReader::read(client); }

}  // namespace metrics

double accuracy(const ModelParams& params, const Dataset& data) {
    if (data.empty()) throw DomainError("cannot evaluate on an empty split");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (forward(params, data.features.row(i), ForwardMode::deterministic()).argmax() == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate_client(const ClientState& client, Split split) {
    const Dataset& d = split == Split::validation ? client.data->validation() : client.data->test();
    return accuracy(client.params, d);
}

double fairness_variance(std::span<const double> acc) {
    if (acc.empty()) return 0.0;
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(acc.size());
    double ss = 0.0;
    for (double a : acc) ss += (a - mean) * (a - mean);
    return ss / static_cast<double>(acc.size());
}

double pseudo_label_error(std::span<const PseudoLabel> labels, std::span<const std::size_t> truth) {
    if (labels.size() != truth.size()) throw ConsistencyError("pseudo-labels and truth differ in length");
    if (labels.empty()) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].target.argmax() != truth[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

LabelErrorCount count_label_errors(std::span<const PseudoLabel> labels, const ClientDataset& client) {
    const auto truth = metrics::hidden_truth(client);
    if (labels.size() != truth.size()) throw ConsistencyError("pseudo-labels and truth differ in length");
    LabelErrorCount out;
    out.total = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].target.argmax() != truth[i]) ++out.wrong;
    }
    return out;
}

RoundMetrics summarize_round(int round, std::span<const ClientState> clients, LabelErrorCount pseudo,
                             const CostLedger& ledger, std::size_t threads) {
    RoundMetrics m;
    m.round = round;
    m.val_acc.assign(clients.size(), 0.0);
    m.test_acc.assign(clients.size(), 0.0);
    parallel_for(clients.size(), threads, [&](std::size_t k) {
        m.val_acc[k] = evaluate_client(clients[k], Split::validation);
        m.test_acc[k] = evaluate_client(clients[k], Split::test);
    });
    if (!clients.empty()) {
        for (std::size_t k = 0; k < clients.size(); ++k) {
            m.mean_val_acc += m.val_acc[k];
            m.mean_test_acc += m.test_acc[k];
        }
        m.mean_val_acc /= static_cast<double>(clients.size());
        m.mean_test_acc /= static_cast<double>(clients.size());
    }
    m.acc_variance = fairness_variance(m.test_acc);
    m.pseudo_label_error_rate = pseudo.rate();
    m.pseudo_label_count = pseudo.total;
    m.pseudo_label_wrong = pseudo.wrong;
    m.cum_uploads = ledger.uploads();
    m.cum_downloads = ledger.downloads();
    return m;
}

std::optional<double> best_mean_test_accuracy(std::span<const RoundMetrics> curve) {
    if (curve.empty()) return std::nullopt;
    double best = curve.front().mean_test_acc;
    for (const auto& m : curve) best = std::max(best, m.mean_test_acc);
    return best;
}

std::vector<BestAccuracyRow> best_accuracy_summary(std::span<const LabeledCurve> runs) {
    std::vector<BestAccuracyRow> rows;
    std::vector<std::size_t> counts;
    for (const auto& r : runs) {
        const auto best = best_mean_test_accuracy(r.curve);
        if (!best) continue;
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const BestAccuracyRow& row) { return row.method == r.method && row.alpha == r.alpha; });
        if (it == rows.end()) {
            rows.push_back(BestAccuracyRow{r.method, r.alpha, *best});
            counts.push_back(1);
        } else {
            const auto idx = static_cast<std::size_t>(it - rows.begin());
            it->best_mean_test_acc += *best;
            ++counts[idx];
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].best_mean_test_acc /= static_cast<double>(counts[i]);
    return rows;
}

namespace {

std::ostream& fixed(std::ostream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return out << buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> curve) {
    out << "round,mean_val_acc,mean_test_acc,acc_variance,pseudo_label_error_rate,pseudo_label_count,"
           "pseudo_label_wrong,cum_uploads,cum_downloads\n";
    for (const auto& m : curve) {
        out << m.round << ',';
        fixed(out, m.mean_val_acc) << ',';
        fixed(out, m.mean_test_acc) << ',';
        fixed(out, m.acc_variance) << ',';
        fixed(out, m.pseudo_label_error_rate) << ',';
        out << m.pseudo_label_count << ',' << m.pseudo_label_wrong << ',' << m.cum_uploads << ',' << m.cum_downloads << '\n';
    }
}

void write_client_metrics_csv(std::ostream& out, std::span<const RoundMetrics> curve) {
    out << "round,client,val_acc,test_acc\n";
    for (const auto& m : curve) {
        for (std::size_t k = 0; k < m.test_acc.size(); ++k) {
            out << m.round << ',' << k << ',';
            fixed(out, m.val_acc[k]) << ',';
            fixed(out, m.test_acc[k]) << '\n';
        }
    }
}

void write_summary_csv(std::ostream& out, std::span<const ClientState> clients, std::span<const RoundMetrics> curve) {
    out << "client,labeled,unlabeled,validation,test,helpers,final_val_acc,final_test_acc,best_test_acc\n";
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto& c = clients[k];
        double final_val = 0.0;
        double final_test = 0.0;
        double best = 0.0;
        if (curve.empty()) {
            final_val = evaluate_client(c, Split::validation);
            final_test = evaluate_client(c, Split::test);
            best = final_test;
        } else {
            final_val = curve.back().val_acc.at(k);
            final_test = curve.back().test_acc.at(k);
            for (const auto& m : curve) best = std::max(best, m.test_acc.at(k));
        }
        std::string helpers;
        for (std::size_t id : c.helpers.ids()) {
            if (!helpers.empty()) helpers += ' ';
            helpers += std::to_string(id);
        }
        out << c.id << ',' << c.data->labeled_count() << ',' << c.data->unlabeled_count() << ','
            << c.data->validation().size() << ',' << c.data->test().size() << ',' << helpers << ',';
        fixed(out, final_val) << ',';
        fixed(out, final_test) << ',';
        fixed(out, best) << '\n';
    }
}

void write_events_csv(std::ostream& out, std::span<const RoundEvent> events) {
    out << "round,kind,client,peer,model_units\n";
    for (const auto& e : events) {
        out << e.round << ',' << to_string(e.kind) << ',' << e.client << ',';
        if (e.peer) out << *e.peer;
        out << ',' << e.model_units << '\n';
    }
}

}  // namespace pfssl
