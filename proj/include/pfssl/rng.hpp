#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace pfssl {

// SplitMix64 finalizer. Every random draw in the library funnels through it so
// results do not depend on the standard library's distribution implementations.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = mix64(base);
    for (std::uint64_t t : tags) {
        h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    }
    return h;
}

// Independent streams per concern; changing how many draws one concern makes
// never shifts another concern's sequence.
enum class Stream : std::uint64_t {
    synthetic = 1,
    partition = 2,
    label_split = 3,
    init = 4,
    sampling = 5,
    dropout = 6,
    candidates = 7,
    shuffle = 8,
    subset = 9,
    control = 10,
    lineage = 11,
};

constexpr std::uint64_t stream_seed(std::uint64_t base, Stream s) noexcept {
    return derive_seed(base, {static_cast<std::uint64_t>(s)});
}

// Counter-based generator: draw i is a pure function of (key, i).
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return mix64(key_ ^ mix64(counter_++)); }

    // Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x = (*this)();
        while (x >= limit) {
            x = (*this)();
        }
        return x % n;
    }

    double normal() noexcept {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Marsaglia-Tsang; shapes below one use the u^(1/shape) boost.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double u = 1.0 - uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = 1.0 - uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> dirichlet(std::size_t k, double alpha) {
        std::vector<double> out(k);
        double sum = 0.0;
        for (auto& g : out) {
            g = gamma(alpha);
            sum += g;
        }
        if (!(sum > 0.0)) {
            // every gamma draw underflowed; the limit is a one-hot vertex
            std::fill(out.begin(), out.end(), 0.0);
            out[below(k)] = 1.0;
            return out;
        }
        for (auto& g : out) g /= sum;
        return out;
    }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        shuffle(std::span<T>(items));
    }

    // k distinct picks from [0, n) in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + below(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace pfssl
