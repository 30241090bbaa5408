#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pfssl {

// Shannon entropy in nats; zero-probability terms contribute nothing.
inline double entropy_of(std::span<const double> probs) noexcept {
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

// Class-probability vector paired with its entropy.
class PredictiveDistribution {
public:
    PredictiveDistribution() = default;
    explicit PredictiveDistribution(std::vector<double> probs)
        : probs_(std::move(probs)), entropy_(entropy_of(probs_)) {}

    std::span<const double> probs() const noexcept { return probs_; }
    double operator[](std::size_t c) const noexcept { return probs_[c]; }
    std::size_t size() const noexcept { return probs_.size(); }
    double entropy() const noexcept { return entropy_; }

    std::size_t argmax() const noexcept {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs_.size(); ++c) {
            if (probs_[c] > probs_[best]) best = c;
        }
        return best;
    }

    friend bool operator==(const PredictiveDistribution&, const PredictiveDistribution&) = default;

private:
    std::vector<double> probs_;
    double entropy_ = 0.0;
};

}  // namespace pfssl
