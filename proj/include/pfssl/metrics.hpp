#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfssl/data.hpp"
#include "pfssl/federation.hpp"
#include "pfssl/ledger.hpp"

namespace pfssl {

enum class Split { validation, test };

struct RoundMetrics {
    int round = 0;
    std::vector<double> val_acc;   // one per client
    std::vector<double> test_acc;  // one per client
    double mean_val_acc = 0.0;
    double mean_test_acc = 0.0;
    double acc_variance = 0.0;     // population variance of test_acc
    double pseudo_label_error_rate = 0.0;
    std::size_t pseudo_label_count = 0;  // rows behind the error rate; 0 means none were produced
    std::size_t pseudo_label_wrong = 0;
    std::uint64_t cum_uploads = 0;
    std::uint64_t cum_downloads = 0;
};

struct LabelErrorCount {
    std::size_t wrong = 0;
    std::size_t total = 0;

    double rate() const noexcept { return total == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(total); }
    LabelErrorCount& operator+=(const LabelErrorCount& o) noexcept {
        wrong += o.wrong;
        total += o.total;
        return *this;
    }
};

namespace metrics {

// Ground truth of a client's unlabeled rows. Only evaluation code calls this.
std::span<const std::size_t> hidden_truth(const ClientDataset& client);

}  // namespace metrics

// Deterministic-forward argmax accuracy; throws DomainError on an empty set.
double accuracy(const ModelParams& params, const Dataset& data);
double evaluate_client(const ClientState& client, Split split);

// (1/K) sum_k (a_k - mean)^2.
double fairness_variance(std::span<const double> acc);

// Fraction of rows whose pseudo-target argmax differs from the truth; 0 when empty.
double pseudo_label_error(std::span<const PseudoLabel> labels, std::span<const std::size_t> truth);
LabelErrorCount count_label_errors(std::span<const PseudoLabel> labels, const ClientDataset& client);

RoundMetrics summarize_round(int round, std::span<const ClientState> clients, LabelErrorCount pseudo,
                             const CostLedger& ledger, std::size_t threads = 1);

// Max over rounds of the mean per-client test accuracy; nullopt for no rounds.
std::optional<double> best_mean_test_accuracy(std::span<const RoundMetrics> curve);

struct BestAccuracyRow {
    std::string method;
    double alpha = 0.0;
    double best_mean_test_acc = 0.0;
};

struct LabeledCurve {
    std::string method;
    double alpha = 0.0;
    std::span<const RoundMetrics> curve;
};

// One row per distinct (method, alpha), each maximized independently, in first
// appearance order. Several curves with the same key (repeats) are averaged
// over their best values.
std::vector<BestAccuracyRow> best_accuracy_summary(std::span<const LabeledCurve> runs);

// round,mean_val_acc,mean_test_acc,acc_variance,pseudo_label_error_rate,
// pseudo_label_count,pseudo_label_wrong,cum_uploads,cum_downloads
void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> curve);

// round,client,val_acc,test_acc
void write_client_metrics_csv(std::ostream& out, std::span<const RoundMetrics> curve);

// client,labeled,unlabeled,validation,test,helpers,final_val_acc,final_test_acc,best_test_acc
void write_summary_csv(std::ostream& out, std::span<const ClientState> clients, std::span<const RoundMetrics> curve);

// round,kind,client,peer,model_units
void write_events_csv(std::ostream& out, std::span<const RoundEvent> events);

}  // namespace pfssl
