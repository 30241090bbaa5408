#pragma once

// Client and server state plus the per-client steps of a round: helper-weighted
// aggregation, minimum-entropy pseudo-labeling, local training and upload.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "pfssl/data.hpp"
#include "pfssl/events.hpp"
#include "pfssl/nn.hpp"
#include "pfssl/uncertainty.hpp"

namespace pfssl {

inline constexpr double kAggregateWeightFloor = 1e-9;

enum class TrainingObjective {
    sequential,  // supervised pass then unsupervised pass each epoch
    weighted,    // single pass on mu * CE + (1 - mu) * KL
};

std::string_view to_string(TrainingObjective o);
TrainingObjective objective_from_string(std::string_view name);

struct TrainingConfig {
    double learning_rate = 1e-4;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t local_epochs = 5;
    std::size_t warmup_epochs = 5;
    TrainingObjective objective = TrainingObjective::sequential;

    void validate() const;

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct HelperEntry {
    std::size_t client_id = 0;
    ModelParams params;
    CorrScore corr;
    std::uint64_t cached_version = 0;
};

// At most `capacity` entries, owner first and never removed, ids unique.
class HelperList {
public:
    HelperList(std::size_t owner_id, std::size_t capacity, ModelParams owner_params);

    std::size_t owner_id() const noexcept { return owner_; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool full() const noexcept { return entries_.size() >= capacity_; }
    bool contains(std::size_t client_id) const noexcept;

    std::span<const HelperEntry> entries() const noexcept { return entries_; }
    HelperEntry& at(std::size_t slot) { return entries_.at(slot); }
    const HelperEntry& at(std::size_t slot) const { return entries_.at(slot); }
    HelperEntry& self() noexcept { return entries_.front(); }
    const HelperEntry& self() const noexcept { return entries_.front(); }

    void add(HelperEntry entry);
    void replace(std::size_t slot, HelperEntry entry);

    // Throws ProtocolError when any structural invariant is broken.
    void check_invariants() const;

    std::vector<std::size_t> ids() const;

private:
    std::size_t owner_;
    std::size_t capacity_;
    std::vector<HelperEntry> entries_;
};

// Latest uploaded model of every client, with per-client version counters.
class ServerPool {
public:
    explicit ServerPool(std::vector<ModelParams> initial);

    std::size_t size() const noexcept { return models_.size(); }
    const ModelParams& model(std::size_t client_id) const { return models_.at(client_id); }
    std::uint64_t version(std::size_t client_id) const { return versions_.at(client_id); }

    void store(std::size_t client_id, const ModelParams& params);

private:
    std::vector<ModelParams> models_;
    std::vector<std::uint64_t> versions_;
};

struct ClientState {
    std::size_t id = 0;
    ModelParams params;
    OptimState opt;
    std::shared_ptr<const ClientDataset> data;
    HelperList helpers;
    std::uint64_t seed = 0;           // lineage for shuffles and training dropout
    std::uint64_t local_version = 0;  // bumped on every parameter change

    ClientState(std::size_t client_id, ModelParams initial, std::shared_ptr<const ClientDataset> dataset,
                std::size_t helper_capacity, const TrainingConfig& training, std::uint64_t lineage_seed);

    // Publishes the current params to the self helper entry under a new version.
    void touch();
    void set_params(ModelParams p);
};

struct PseudoLabel {
    PredictiveDistribution target;
    std::size_t source_helper = 0;
    double uncertainty = 0.0;
};

// Per-client, per-round cache of MC predictions and accuracies keyed by
// (helper id, version, is-self). Sample seeds depend only on that key and the
// row index, so cached and recomputed values are bit-identical.
class HelperEvaluator {
public:
    HelperEvaluator(const ClientDataset& data, std::size_t mc_samples, std::uint64_t seed, CorrMode mode, int round,
                    std::size_t uncertainty_cap = 0);

    // MC seed base for a helper; rows use point_seed(base, row).
    std::uint64_t helper_seed(std::size_t helper_id, std::uint64_t version, bool is_self) const noexcept;

    const PredictiveDistribution& prediction(const HelperEntry& entry, bool is_self, std::size_t row);
    CorrScore score(const HelperEntry& entry, bool is_self);

    // Rows contributing to the entropy term, ascending.
    std::span<const std::size_t> uncertainty_rows() const noexcept { return rows_; }

private:
    struct Cached {
        std::vector<std::optional<PredictiveDistribution>> preds;
        std::optional<double> accuracy;
    };
    Cached& slot(const HelperEntry& entry, bool is_self);

    const ClientDataset* data_;
    std::size_t samples_;
    std::uint64_t seed_;
    CorrMode mode_;
    int round_;
    std::vector<std::size_t> rows_;
    std::map<std::tuple<std::size_t, std::uint64_t, bool>, Cached> cache_;
};

// Supervised-only training on the labeled set; no-op when it is empty.
void warmup(ClientState& client, const TrainingConfig& cfg);

// sum_j w_j * models_j / sum_j w_j, reduced in list order and clamped to the
// coordinate hull; `fallback` when the weights sum below kAggregateWeightFloor.
ModelParams weighted_average(std::span<const ModelParams* const> models, std::span<const double> weights,
                             const ModelParams& fallback);

// Corr-weighted average over the client's helper list (self included); the
// entries' corr fields must be current.
ModelParams aggregate(const ClientState& client);

// Scores every helper through `eval`, storing the results in the entries.
void score_helpers(ClientState& client, HelperEvaluator& eval);

// Minimum-entropy helper prediction per unlabeled row; ties go to the lowest
// client id.
std::vector<PseudoLabel> select_pseudo_labels(ClientState& client, HelperEvaluator& eval);

void local_train(ClientState& client, std::span<const PseudoLabel> pseudo, std::size_t epochs,
                 const TrainingConfig& cfg, int round);

// Combined objective mu * mean CE(labeled) + (1 - mu) * mean KL(unlabeled),
// evaluated deterministically.
double combined_loss(const ModelParams& params, const ClientDataset& data, std::span<const PseudoLabel> pseudo);

RoundEvent upload(const ClientState& client, ServerPool& pool, int round);

}  // namespace pfssl
