#pragma once

// The round loop: helper search and refresh over the server pool, client
// sampling, the parallel client phase and serialized uploads, plus the two
// comparison schedulers.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pfssl/events.hpp"
#include "pfssl/federation.hpp"
#include "pfssl/ledger.hpp"
#include "pfssl/metrics.hpp"

namespace pfssl {

enum class Method { um_pfssl, fedavg_semi, local_only };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

struct RoundConfig {
    std::size_t clients = 100;        // K
    Rational sample_rate{1, 10};      // tau
    std::size_t helpers = 5;          // M, self included
    std::size_t replacements = 2;     // R
    std::size_t search_rounds = 30;   // F; search runs for rounds t < F
    std::size_t update_period = 10;   // nu
    std::size_t rounds = 200;         // n
    std::size_t local_epochs = 5;     // E
    std::size_t mc_samples = kDefaultMcSamples;
    std::uint64_t seed = 0;
    bool restrict_to_sampled = false;  // search and refresh only this round's sampled clients
    std::size_t uncertainty_cap = 0;   // rows per entropy term; 0 uses every unlabeled row
    std::size_t threads = 1;

    void validate() const;

    std::size_t sampled_count() const;  // ceil(tau * K)

    // Analytic model at the configured tau, and at the tau actually realized
    // by ceil(tau * K) / K.
    CostModel cost_model() const;
    CostModel effective_cost_model() const;

    // Downloads of the one-time helper-list fill: K * min(M - 1, K - 1).
    std::uint64_t fill_allowance() const;

    friend bool operator==(const RoundConfig&, const RoundConfig&) = default;
};

struct Trace {
    std::vector<RoundEvent> events;
    std::vector<RoundMetrics> metrics;  // one per round
    // helper_lists[t - 1][k]: helper ids of client k after round t, owner first
    std::vector<std::vector<std::vector<std::size_t>>> helper_lists;
    CostLedger ledger;

    void record(const RoundEvent& e);
};

struct Federation {
    std::vector<ClientState> clients;
    ServerPool pool;
};

// Identical initial model for every client, supervised warmup, then the pool
// seeded with the warmed models at version 0. Setup moves no model-units.
Federation setup_federation(std::vector<ClientDataset> data, std::shared_ptr<const NetSpec> net,
                            const RoundConfig& cfg, const TrainingConfig& training);

// ceil(tau K) distinct ids, ascending; a pure function of (seed, round).
std::vector<std::size_t> sample_clients(const RoundConfig& cfg, int round);

std::uint64_t evaluator_seed(const RoundConfig& cfg, std::size_t client_id);

// Ranks non-self helpers ascending by (corr, id) and returns the slots of the
// lowest `count`. Entries' corr fields must be current.
std::vector<std::size_t> lowest_ranked_slots(const HelperList& helpers, std::size_t count);

std::vector<RoundEvent> replace_helper(ClientState& client, const ServerPool& pool, std::size_t replacements,
                                       std::uint64_t candidate_seed, HelperEvaluator& eval, int round);
std::vector<RoundEvent> update_helper(ClientState& client, const ServerPool& pool, std::size_t replacements,
                                      HelperEvaluator& eval, int round);
// Downloads random peers until the list is full or no peer is left.
std::vector<RoundEvent> fill_helpers(ClientState& client, const ServerPool& pool, std::uint64_t seed, int round);

Trace run(const RoundConfig& cfg, const TrainingConfig& training, CorrMode mode, std::vector<ClientState>& clients,
          ServerPool& pool);
Trace run_baseline(const RoundConfig& cfg, const TrainingConfig& training, Method kind,
                   std::vector<ClientState>& clients, ServerPool& pool);

struct ProtocolAudit {
    std::vector<std::string> violations;
    std::size_t replace_downloads = 0;
    std::size_t update_downloads = 0;
    std::size_t fill_downloads = 0;

    bool ok() const noexcept { return violations.empty(); }
};

// Schedule gates, list capacity and ownership, upload counts and trace/ledger
// agreement, all read back from the trace alone.
ProtocolAudit audit_trace(const RoundConfig& cfg, Method method, const Trace& trace);

}  // namespace pfssl
