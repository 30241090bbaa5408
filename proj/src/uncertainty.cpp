#include "pfssl/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pfssl/errors.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

PredictiveDistribution mc_predict(const ModelParams& params, std::span<const double> x, std::size_t samples,
                                  std::uint64_t seed) {
    if (samples == 0) throw DomainError("MC sample count must be at least 1");
    std::vector<double> mean(params.spec().class_count(), 0.0);
    for (std::size_t t = 0; t < samples; ++t) {
        const auto pass = forward(params, x, ForwardMode::dropout_sample(derive_seed(seed, {t})));
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += pass[c];
    }
    const double inv = 1.0 / static_cast<double>(samples);
    for (double& m : mean) m *= inv;
    return PredictiveDistribution(std::move(mean));
}

double dataset_uncertainty(const ModelParams& helper, const Matrix& unlabeled, std::size_t samples,
                           std::uint64_t seed) {
    double total = 0.0;
    for (std::size_t i = 0; i < unlabeled.rows; ++i) {
        total += mc_predict(helper, unlabeled.row(i), samples, point_seed(seed, i)).entropy();
    }
    return total;
}

double normalized_residue(double total_entropy, std::size_t set_size, std::size_t class_count) {
    if (set_size == 0) throw DomainError("normalized residue needs a nonempty set");
    if (class_count < 2) throw DomainError("normalized residue needs at least two classes");
    const double max_total = static_cast<double>(set_size) * std::log(static_cast<double>(class_count));
    return std::clamp(1.0 - total_entropy / max_total, 0.0, 1.0);
}

double helper_accuracy(const ModelParams& helper, const Dataset& labeled) {
    if (labeled.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        if (forward(helper, labeled.features.row(i), ForwardMode::deterministic()).argmax() == labeled.labels[i]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

std::string_view to_string(CorrMode m) {
    switch (m) {
        case CorrMode::combined: return "en+ta";
        case CorrMode::entropy_only: return "en";
        case CorrMode::accuracy_only: return "ta";
        case CorrMode::random: return "random";
    }
    return "en+ta";
}

CorrMode corr_mode_from_string(std::string_view name) {
    if (name == "en+ta") return CorrMode::combined;
    if (name == "en") return CorrMode::entropy_only;
    if (name == "ta") return CorrMode::accuracy_only;
    if (name == "random") return CorrMode::random;
    throw DomainError("unknown ablation mode '" + std::string(name) + "'");
}

CorrScore combine_corr(double labeled_ratio, double entropy_term, double accuracy_term, CorrMode mode, int round,
                       double random_draw) {
    CorrScore s;
    s.entropy_term = entropy_term;
    s.accuracy_term = accuracy_term;
    s.evaluated_round = round;
    s.mode = mode;
    switch (mode) {
        case CorrMode::combined: s.value = (1.0 - labeled_ratio) * entropy_term + labeled_ratio * accuracy_term; break;
        case CorrMode::entropy_only: s.value = entropy_term; break;
        case CorrMode::accuracy_only: s.value = accuracy_term; break;
        case CorrMode::random: s.value = random_draw; break;
    }
    return s;
}

CorrScore corr(const ClientDataset& client, const ModelParams& helper, std::size_t samples, std::uint64_t seed,
               CorrMode mode, int round) {
    const std::size_t n = client.unlabeled_count();
    const double entropy_term =
        n == 0 ? 0.0
               : normalized_residue(dataset_uncertainty(helper, client.unlabeled(), samples, seed), n,
                                    client.class_count());
    const double accuracy_term = helper_accuracy(helper, client.labeled());
    const double draw = mode == CorrMode::random ? Rng(stream_seed(seed, Stream::control)).uniform() : 0.0;
    return combine_corr(client.labeled_ratio(), entropy_term, accuracy_term, mode, round, draw);
}

}  // namespace pfssl
