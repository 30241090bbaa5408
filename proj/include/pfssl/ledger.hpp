#pragma once

// Model-transfer accounting in model-units (one full parameter vector), and
// the closed-form traffic of greedy helper search versus the helper-list
// protocol. All analytic quantities are exact rationals.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfssl/events.hpp"

namespace pfssl {

class Rational {
public:
    constexpr Rational() = default;
    Rational(std::int64_t num, std::int64_t den = 1);

    // Best approximation with denominator <= max_den (exact for short decimals).
    static Rational from_double(double x, std::int64_t max_den = 1'000'000);

    std::int64_t num() const noexcept { return num_; }
    std::int64_t den() const noexcept { return den_; }
    double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

    // Smallest integer >= this value.
    std::int64_t ceil() const noexcept;

    // Decimal string rounded half away from zero to `decimals` places.
    std::string to_decimal(int decimals) const;

    friend Rational operator+(Rational a, Rational b);
    friend Rational operator-(Rational a, Rational b);
    friend Rational operator*(Rational a, Rational b);
    friend Rational operator/(Rational a, Rational b);
    friend bool operator==(Rational a, Rational b) noexcept { return a.num_ == b.num_ && a.den_ == b.den_; }
    friend std::strong_ordering operator<=>(Rational a, Rational b) noexcept;

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

std::ostream& operator<<(std::ostream& os, Rational r);

struct CostModel {
    std::int64_t clients = 100;       // K
    Rational sample_rate{1, 10};      // tau
    std::int64_t rounds = 200;        // n
    std::int64_t helpers = 5;         // M
    std::int64_t replacements = 2;    // R
    std::int64_t search_rounds = 30;  // F
    std::int64_t update_period = 10;  // nu
};

// tau * K^2 * n, in model-units.
Rational cost1(Rational tau, std::int64_t clients, std::int64_t rounds);

// K*M*n/nu + F*R*K + tau*K*n, in model-units.
Rational cost2_bound(std::int64_t clients, std::int64_t helpers, std::int64_t rounds, std::int64_t update_period,
                     std::int64_t search_rounds, std::int64_t replacements, Rational tau);
Rational cost2_bound(const CostModel& m);

struct Savings {
    Rational delta;     // cost1 - cost2_bound
    Rational fraction;  // delta / cost1, or 0 when cost1 is 0
};

Savings savings_delta(const CostModel& m);

struct RoundTraffic {
    int round = 0;
    std::uint64_t uploads = 0;
    std::uint64_t downloads = 0;
    std::uint64_t fill_downloads = 0;  // subset of downloads
};

class CostLedger {
public:
    void record(const RoundEvent& e);

    std::uint64_t uploads() const noexcept { return uploads_; }
    std::uint64_t downloads() const noexcept { return downloads_; }
    std::uint64_t fill_downloads() const noexcept { return fill_downloads_; }
    std::uint64_t total() const noexcept { return uploads_ + downloads_; }
    const std::vector<RoundTraffic>& per_round() const noexcept { return per_round_; }

    std::optional<std::uint64_t> model_unit_bytes;

private:
    RoundTraffic& round_entry(int round);

    std::uint64_t uploads_ = 0;
    std::uint64_t downloads_ = 0;
    std::uint64_t fill_downloads_ = 0;
    std::vector<RoundTraffic> per_round_;
};

struct ReconcileReport {
    std::uint64_t measured = 0;          // uploads + downloads
    std::uint64_t fill_allowance = 0;    // initial helper-list fill, outside the analytic bound
    Rational bound;                      // cost2_bound + fill_allowance
    Rational slack;                      // bound - measured
    bool within_bound = false;
    bool trace_matches = false;          // per-kind trace sums equal the ledger counters
    bool per_round_consistent = false;   // per-round rows sum to the totals
    std::string message;

    bool ok() const noexcept { return within_bound && trace_matches && per_round_consistent; }
};

ReconcileReport reconcile(const CostLedger& ledger, std::span<const RoundEvent> trace, const CostModel& bound_model,
                          std::uint64_t fill_allowance);

// round,uploads,downloads,fill_downloads,cum_uploads,cum_downloads,cum_total,
// cost1,cost2_bound,bound_with_fill,percent_of_bound
void write_costs_csv(std::ostream& out, const CostLedger& ledger, const CostModel& model, std::uint64_t fill_allowance);

}  // namespace pfssl
