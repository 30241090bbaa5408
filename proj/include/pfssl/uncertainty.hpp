#pragma once

// MC-dropout predictive distributions and the Corr data-relation score used to
// rank helper models for a client.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "pfssl/data.hpp"
#include "pfssl/distribution.hpp"
#include "pfssl/nn.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

inline constexpr std::size_t kDefaultMcSamples = 10;

// Mean of `samples` dropout forward passes; pass t uses derive_seed(seed, {t}).
PredictiveDistribution mc_predict(const ModelParams& params, std::span<const double> x, std::size_t samples,
                                  std::uint64_t seed);

// Seed used for row `i` of a set evaluated under `seed`.
inline std::uint64_t point_seed(std::uint64_t seed, std::size_t i) noexcept { return derive_seed(seed, {i}); }

// Sum over rows of the MC predictive entropy of `helper`.
double dataset_uncertainty(const ModelParams& helper, const Matrix& unlabeled, std::size_t samples,
                           std::uint64_t seed);

// 1 - total_entropy / (set_size * ln C), clamped to [0, 1]. One division keeps
// both boundaries exact: 0 gives 1 and set_size * ln C gives 0.
double normalized_residue(double total_entropy, std::size_t set_size, std::size_t class_count);

// Deterministic-forward accuracy on `labeled`; 0 for an empty set.
double helper_accuracy(const ModelParams& helper, const Dataset& labeled);

enum class CorrMode {
    combined,        // (1 - mu) * EN + mu * TA
    entropy_only,    // EN
    accuracy_only,   // TA
    random,          // seeded uniform score; control for helper selection
};

std::string_view to_string(CorrMode m);
CorrMode corr_mode_from_string(std::string_view name);

struct CorrScore {
    double value = 0.0;
    double entropy_term = 0.0;
    double accuracy_term = 0.0;
    int evaluated_round = 0;
    CorrMode mode = CorrMode::combined;
};

// `random_draw` is only read in CorrMode::random.
CorrScore combine_corr(double labeled_ratio, double entropy_term, double accuracy_term, CorrMode mode, int round,
                       double random_draw = 0.0);

// Entropy term over the client's unlabeled rows (all of them, in row order,
// seeded through point_seed) and accuracy term over its labeled rows. With no
// unlabeled rows the entropy term is 0; its weight 1 - mu is then 0 as well.
CorrScore corr(const ClientDataset& client, const ModelParams& helper, std::size_t samples, std::uint64_t seed,
               CorrMode mode = CorrMode::combined, int round = 0);

}  // namespace pfssl
