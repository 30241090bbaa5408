#include "pfssl/ledger.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pfssl/errors.hpp"

namespace pfssl {

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::replace: return "replace";
        case EventKind::update: return "update";
        case EventKind::sample: return "sample";
        case EventKind::aggregate: return "aggregate";
        case EventKind::pseudo_label: return "pseudo_label";
        case EventKind::train: return "train";
        case EventKind::upload: return "upload";
        case EventKind::skip: return "skip";
        case EventKind::fill: return "fill";
        case EventKind::broadcast: return "broadcast";
    }
    return "skip";
}

EventKind event_kind_from_string(std::string_view name) {
    for (auto k : {EventKind::replace, EventKind::update, EventKind::sample, EventKind::aggregate,
                   EventKind::pseudo_label, EventKind::train, EventKind::upload, EventKind::skip, EventKind::fill,
                   EventKind::broadcast}) {
        if (to_string(k) == name) return k;
    }
    throw DomainError("unknown event kind '" + std::string(name) + "'");
}

namespace {

__extension__ typedef __int128 i128;

std::int64_t narrow(i128 v) {
    if (v > INT64_MAX || v < INT64_MIN) throw DomainError("rational arithmetic overflow");
    return static_cast<std::int64_t>(v);
}

Rational make(i128 num, i128 den) {
    if (den == 0) throw DomainError("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    i128 a = num < 0 ? -num : num;
    i128 b = den;
    while (b != 0) {
        const i128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        num /= a;
        den /= a;
    }
    return Rational(narrow(num), narrow(den));
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den == 0) throw DomainError("rational with zero denominator");
    if (den_ < 0) {
        num_ = -num_;
        den_ = -den_;
    }
    const std::int64_t g = std::gcd(num_, den_);
    if (g > 1) {
        num_ /= g;
        den_ /= g;
    }
}

Rational Rational::from_double(double x, std::int64_t max_den) {
    if (!std::isfinite(x)) throw DomainError("cannot convert a non-finite value to a rational");
    // continued-fraction convergents
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double r = x;
    for (int iter = 0; iter < 64; ++iter) {
        const double a = std::floor(r);
        const auto ai = static_cast<std::int64_t>(a);
        const std::int64_t q2 = q0 + ai * q1;
        if (q2 > max_den) break;
        const std::int64_t p2 = p0 + ai * p1;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        const double frac = r - a;
        if (frac < 1e-12 || std::abs(static_cast<double>(p1) / static_cast<double>(q1) - x) < 1e-15 * std::abs(x)) break;
        r = 1.0 / frac;
    }
    return Rational(p1, q1);
}

std::int64_t Rational::ceil() const noexcept {
    std::int64_t q = num_ / den_;
    if (num_ % den_ != 0 && num_ > 0) ++q;
    return q;
}

std::string Rational::to_decimal(int decimals) const {
    i128 scale = 1;
    for (int i = 0; i < decimals; ++i) scale *= 10;
    const bool negative = num_ < 0;
    const i128 absnum = negative ? -static_cast<i128>(num_) : static_cast<i128>(num_);
    // round half away from zero: floor((2*|num|*scale + den) / (2*den))
    const i128 scaled = (2 * absnum * scale + den_) / (2 * static_cast<i128>(den_));
    const auto whole = static_cast<long long>(scaled / scale);
    const auto frac = static_cast<long long>(scaled % scale);
    std::ostringstream os;
    if (negative && scaled != 0) os << '-';
    os << whole;
    if (decimals > 0) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%0*lld", decimals, frac);
        os << '.' << buf;
    }
    return os.str();
}

Rational operator+(Rational a, Rational b) {
    return make(i128{a.num_} * b.den_ + i128{b.num_} * a.den_, i128{a.den_} * b.den_);
}

Rational operator-(Rational a, Rational b) {
    return make(i128{a.num_} * b.den_ - i128{b.num_} * a.den_, i128{a.den_} * b.den_);
}

Rational operator*(Rational a, Rational b) { return make(i128{a.num_} * b.num_, i128{a.den_} * b.den_); }

Rational operator/(Rational a, Rational b) {
    if (b.num_ == 0) throw DomainError("rational division by zero");
    return make(i128{a.num_} * b.den_, i128{a.den_} * b.num_);
}

std::strong_ordering operator<=>(Rational a, Rational b) noexcept {
    const i128 l = i128{a.num_} * b.den_;
    const i128 r = i128{b.num_} * a.den_;
    if (l < r) return std::strong_ordering::less;
    if (l > r) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
}

std::ostream& operator<<(std::ostream& os, Rational r) {
    os << r.num();
    if (r.den() != 1) os << '/' << r.den();
    return os;
}

Rational cost1(Rational tau, std::int64_t clients, std::int64_t rounds) {
    return tau * Rational(clients) * Rational(clients) * Rational(rounds);
}

Rational cost2_bound(std::int64_t clients, std::int64_t helpers, std::int64_t rounds, std::int64_t update_period,
                     std::int64_t search_rounds, std::int64_t replacements, Rational tau) {
    if (update_period < 1) throw DomainError("update period must be at least 1");
    const Rational k(clients);
    const Rational update = k * Rational(helpers) * Rational(rounds, update_period);
    const Rational search = Rational(search_rounds) * Rational(replacements) * k;
    const Rational train = tau * k * Rational(rounds);
    return update + search + train;
}

Rational cost2_bound(const CostModel& m) {
    return cost2_bound(m.clients, m.helpers, m.rounds, m.update_period, m.search_rounds, m.replacements, m.sample_rate);
}

Savings savings_delta(const CostModel& m) {
    const Rational c1 = cost1(m.sample_rate, m.clients, m.rounds);
    const Rational c2 = cost2_bound(m);
    Savings s;
    s.delta = c1 - c2;
    s.fraction = c1 == Rational(0) ? Rational(0) : s.delta / c1;
    return s;
}

RoundTraffic& CostLedger::round_entry(int round) {
    if (per_round_.empty() || per_round_.back().round != round) {
        if (!per_round_.empty() && per_round_.back().round > round) {
            throw ProtocolError("ledger rounds must be recorded in order");
        }
        per_round_.push_back(RoundTraffic{round, 0, 0, 0});
    }
    return per_round_.back();
}

void CostLedger::record(const RoundEvent& e) {
    if (e.model_units == 0) return;
    auto& r = round_entry(e.round);
    if (e.kind == EventKind::upload) {
        uploads_ += e.model_units;
        r.uploads += e.model_units;
    } else if (is_download(e.kind)) {
        downloads_ += e.model_units;
        r.downloads += e.model_units;
        if (e.kind == EventKind::fill) {
            fill_downloads_ += e.model_units;
            r.fill_downloads += e.model_units;
        }
    } else {
        throw ProtocolError("event kind '" + std::string(to_string(e.kind)) + "' cannot carry model units");
    }
}

ReconcileReport reconcile(const CostLedger& ledger, std::span<const RoundEvent> trace, const CostModel& bound_model,
                          std::uint64_t fill_allowance) {
    ReconcileReport rep;
    std::uint64_t trace_up = 0;
    std::uint64_t trace_down = 0;
    std::uint64_t trace_fill = 0;
    for (const auto& e : trace) {
        if (e.kind == EventKind::upload) trace_up += e.model_units;
        if (is_download(e.kind)) trace_down += e.model_units;
        if (e.kind == EventKind::fill) trace_fill += e.model_units;
    }
    rep.trace_matches =
        trace_up == ledger.uploads() && trace_down == ledger.downloads() && trace_fill == ledger.fill_downloads();

    std::uint64_t sum_up = 0;
    std::uint64_t sum_down = 0;
    for (const auto& r : ledger.per_round()) {
        sum_up += r.uploads;
        sum_down += r.downloads;
    }
    rep.per_round_consistent = sum_up == ledger.uploads() && sum_down == ledger.downloads();

    rep.measured = ledger.total();
    rep.fill_allowance = fill_allowance;
    rep.bound = cost2_bound(bound_model) + Rational(static_cast<std::int64_t>(fill_allowance));
    rep.slack = rep.bound - Rational(static_cast<std::int64_t>(rep.measured));
    rep.within_bound = rep.slack >= Rational(0);

    std::ostringstream msg;
    msg << "measured " << rep.measured << " model-units, bound " << rep.bound << " (fill allowance " << fill_allowance
        << "), slack " << rep.slack;
    if (!rep.within_bound) msg << "; BOUND EXCEEDED";
    if (!rep.trace_matches) msg << "; trace and ledger disagree";
    if (!rep.per_round_consistent) msg << "; per-round rows do not sum to totals";
    rep.message = msg.str();
    return rep;
}

void write_costs_csv(std::ostream& out, const CostLedger& ledger, const CostModel& model, std::uint64_t fill_allowance) {
    const Rational c1 = cost1(model.sample_rate, model.clients, model.rounds);
    const Rational c2 = cost2_bound(model);
    const Rational with_fill = c2 + Rational(static_cast<std::int64_t>(fill_allowance));
    out << "round,uploads,downloads,fill_downloads,cum_uploads,cum_downloads,cum_total,cost1,cost2_bound,"
           "bound_with_fill,percent_of_bound\n";
    std::uint64_t cum_up = 0;
    std::uint64_t cum_down = 0;
    const auto& rows = ledger.per_round();
    std::size_t next = 0;
    for (std::int64_t round = 1; round <= model.rounds; ++round) {
        RoundTraffic r{static_cast<int>(round), 0, 0, 0};
        if (next < rows.size() && rows[next].round == round) r = rows[next++];
        cum_up += r.uploads;
        cum_down += r.downloads;
        const auto cum = static_cast<std::int64_t>(cum_up + cum_down);
        const std::string pct =
            with_fill == Rational(0) ? std::string("0.00") : (Rational(cum) * Rational(100) / with_fill).to_decimal(2);
        out << r.round << ',' << r.uploads << ',' << r.downloads << ',' << r.fill_downloads << ',' << cum_up << ','
            << cum_down << ',' << cum << ',' << c1.to_decimal(2) << ',' << c2.to_decimal(2) << ','
            << with_fill.to_decimal(2) << ',' << pct << '\n';
    }
}

}  // namespace pfssl
