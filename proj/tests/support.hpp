#pragma once

// Independent oracles and small fixtures shared by the unit and acceptance
// suites. Oracles recompute quantities from their defining formulas with
// plain loops and never call the code path they check.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pfssl/data.hpp"
#include "pfssl/federation.hpp"
#include "pfssl/nn.hpp"
#include "pfssl/protocol.hpp"

namespace oracle {

struct ScalarPass {
    std::vector<std::vector<double>> pre;  // pre-activations per layer
    std::vector<double> probs;
};

// keep[l][o] == false zeroes hidden unit o of layer l; kept units are scaled
// by 1 / (1 - rate). An empty `keep` means no dropout.
ScalarPass scalar_forward(const pfssl::NetSpec& spec, std::span<const double> w, std::span<const double> x,
                          const std::vector<std::vector<bool>>& keep = {});

// Keep pattern a dropout pass with `seed` would draw.
std::vector<std::vector<bool>> dropout_pattern(const pfssl::NetSpec& spec, std::uint64_t seed);

struct OracleExample {
    std::vector<double> x;
    std::size_t label = 0;
    std::vector<double> target;  // empty for cross-entropy
    std::vector<std::vector<bool>> keep;
};

double scalar_loss(const pfssl::NetSpec& spec, std::span<const double> w, std::span<const OracleExample> batch);

// Central differences with step h. Coordinates whose +h and -h perturbations
// flip a ReLU on any example are marked unusable.
struct FiniteDiff {
    std::vector<double> grad;
    std::vector<bool> usable;
};
FiniteDiff finite_difference(const pfssl::NetSpec& spec, std::span<const double> w,
                             std::span<const OracleExample> batch, double h = 1e-5);

// ||a - b|| / (||a|| + ||b||) over usable coordinates; 0 when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b, const std::vector<bool>& usable);

// Per coordinate: clamp(sum_j w_j v_j / sum_j w_j, min_j v_j, max_j v_j), with
// the self fallback below 1e-9.
std::vector<double> weighted_mean(const std::vector<std::vector<double>>& models, const std::vector<double>& weights,
                                  const std::vector<double>& fallback);

struct OracleLabel {
    std::vector<double> probs;
    std::size_t source = 0;
};

// Enumerates every (row, helper) MC prediction from the documented seeds and
// takes the per-row entropy argmin, ties to the smallest client id.
std::vector<OracleLabel> pseudo_labels(const pfssl::ClientState& client, const pfssl::HelperEvaluator& eval,
                                       std::size_t mc_samples);

// Mean over clients of the total-variation distance between the client's
// label histogram (all of its rows) and the global histogram.
double mean_label_tv(const pfssl::Dataset& data, const std::vector<pfssl::ClientShard>& shards);

// Welford population variance.
double variance(std::span<const double> xs);

}  // namespace oracle

namespace fixture {

std::shared_ptr<const pfssl::NetSpec> net(std::vector<std::size_t> widths, double dropout = 0.5,
                                          pfssl::Activation act = pfssl::Activation::relu);

pfssl::ModelParams random_params(const std::shared_ptr<const pfssl::NetSpec>& spec, std::uint64_t seed,
                                 double scale = 1.0);

// Client with random features; hidden labels are drawn uniformly.
pfssl::ClientDataset random_client(std::size_t id, std::size_t dim, std::size_t classes, std::size_t labeled,
                                   std::size_t unlabeled, std::uint64_t seed);

// Owner 0 with a full list of `helpers` entries (self included) over `points`
// unlabeled rows. Helper ids are not in ascending slot order; odd seeds turn
// dropout off and duplicate a helper so entropy ties occur.
pfssl::ClientState random_helper_client(std::uint64_t seed, std::size_t helpers, std::size_t points,
                                        std::size_t classes = 3);

// Small synthetic experiment config used across protocol tests.
struct DeskSetup {
    pfssl::RoundConfig round;
    pfssl::TrainingConfig training;
    std::size_t classes = 4;
    std::size_t per_class = 60;
    double alpha = 0.5;
    std::vector<std::size_t> hidden{8};
};

pfssl::Federation make_federation(const DeskSetup& s);

}  // namespace fixture
