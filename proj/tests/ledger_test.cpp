#include <doctest.h>

#include <sstream>
#include <vector>

#include "pfssl/errors.hpp"
#include "pfssl/events.hpp"
#include "pfssl/ledger.hpp"

using namespace pfssl;

TEST_SUITE("ledger") {

TEST_CASE("rational arithmetic is exact and normalized") {
    CHECK(Rational(1, 3) + Rational(1, 6) == Rational(1, 2));
    CHECK(Rational(2, -4) == Rational(-1, 2));
    CHECK(Rational(3, 4) * Rational(8, 9) == Rational(2, 3));
    CHECK(Rational(1) / Rational(3) - Rational(1, 3) == Rational(0));
    CHECK(Rational(1, 3) < Rational(34, 100));
    CHECK(Rational(7, 2).ceil() == 4);
    CHECK(Rational(-7, 2).ceil() == -3);
    CHECK(Rational(6, 3).ceil() == 2);
    CHECK(Rational::from_double(0.1) == Rational(1, 10));
    CHECK(Rational::from_double(0.05) == Rational(1, 20));
    CHECK(Rational::from_double(15.0) == Rational(15));
    CHECK_THROWS_AS(Rational(1, 0), DomainError);
    CHECK_THROWS_AS(Rational(1) / Rational(0), DomainError);
    CHECK_THROWS_AS(Rational(INT64_MAX) * Rational(2), DomainError);
}

TEST_CASE("decimal rendering rounds half away from zero") {
    CHECK(Rational(1, 4).to_decimal(1) == "0.3");
    CHECK(Rational(-1, 4).to_decimal(1) == "-0.3");
    CHECK(Rational(1, 3).to_decimal(3) == "0.333");
    CHECK(Rational(2, 3).to_decimal(0) == "1");
    CHECK(Rational(5).to_decimal(2) == "5.00");
}

TEST_CASE("default cost model worked example") {
    const CostModel m;
    CHECK(cost1(m.sample_rate, m.clients, m.rounds) / Rational(m.clients) == Rational(2000));
    const Rational per_k = cost2_bound(m) / Rational(m.clients);
    CHECK(per_k == Rational(180));
    CHECK(Rational(m.helpers * m.rounds, m.update_period) == Rational(100));
    CHECK(Rational(m.search_rounds * m.replacements) == Rational(60));
    CHECK(m.sample_rate * Rational(m.rounds) == Rational(20));
    const auto s = savings_delta(m);
    CHECK(s.delta == Rational(182000));
    CHECK(s.fraction == Rational(91, 100));
    CHECK_THROWS_AS(cost2_bound(100, 5, 200, 0, 30, 2, Rational(1, 10)), DomainError);
}

TEST_CASE("ledger counts transfers per round") {
    CostLedger l;
    l.record(RoundEvent{1, EventKind::fill, 0, 1, 1});
    l.record(RoundEvent{1, EventKind::upload, 0, std::nullopt, 1});
    l.record(RoundEvent{1, EventKind::skip, 0, std::nullopt, 0});
    l.record(RoundEvent{3, EventKind::update, 1, 0, 1});
    l.record(RoundEvent{3, EventKind::broadcast, 1, std::nullopt, 1});
    CHECK(l.uploads() == 1);
    CHECK(l.downloads() == 3);
    CHECK(l.fill_downloads() == 1);
    CHECK(l.total() == 4);
    REQUIRE(l.per_round().size() == 2);
    CHECK(l.per_round()[1].round == 3);
    CHECK(l.per_round()[1].downloads == 2);
    CHECK_THROWS_AS(l.record(RoundEvent{2, EventKind::upload, 0, std::nullopt, 1}), ProtocolError);
    CHECK_THROWS_AS(l.record(RoundEvent{3, EventKind::train, 0, std::nullopt, 1}), ProtocolError);
}

TEST_CASE("reconcile compares the ledger with the bound and the trace") {
    CostModel m;
    m.clients = 2;
    m.sample_rate = Rational(1, 2);
    m.rounds = 2;
    m.helpers = 2;
    m.replacements = 1;
    m.search_rounds = 1;
    m.update_period = 2;
    // bound: 2*2*2/2 + 1*1*2 + 1*2 = 8, plus fill 2
    std::vector<RoundEvent> trace{{1, EventKind::fill, 0, 1, 1}, {1, EventKind::upload, 0, std::nullopt, 1},
                                  {2, EventKind::update, 0, 1, 1}, {2, EventKind::upload, 1, std::nullopt, 1}};
    CostLedger l;
    for (const auto& e : trace) l.record(e);
    auto rep = reconcile(l, trace, m, 2);
    CHECK(rep.bound == Rational(10));
    CHECK(rep.measured == 4);
    CHECK(rep.slack == Rational(6));
    CHECK(rep.ok());
    CHECK(reconcile(l, trace, m, 0).ok());
    trace.pop_back();
    CHECK_FALSE(reconcile(l, trace, m, 2).trace_matches);
    m.rounds = 0;
    m.search_rounds = 0;
    CHECK_FALSE(reconcile(l, std::vector<RoundEvent>{}, m, 0).within_bound);
}

TEST_CASE("costs csv has one row per round") {
    CostModel m;
    m.clients = 2;
    m.rounds = 3;
    CostLedger l;
    l.record(RoundEvent{2, EventKind::upload, 0, std::nullopt, 1});
    std::ostringstream out;
    write_costs_csv(out, l, m, 2);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "round,uploads,downloads,fill_downloads,cum_uploads,cum_downloads,cum_total,cost1,cost2_bound,"
          "bound_with_fill,percent_of_bound");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("2,1,0,0,1,0,1,", 0) == 0);
}

TEST_CASE("event kind names round trip") {
    for (auto k : {EventKind::replace, EventKind::update, EventKind::sample, EventKind::aggregate,
                   EventKind::pseudo_label, EventKind::train, EventKind::upload, EventKind::skip, EventKind::fill,
                   EventKind::broadcast}) {
        CHECK(event_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(event_kind_from_string("gossip"), DomainError);
    CHECK(is_download(EventKind::fill));
    CHECK_FALSE(is_download(EventKind::upload));
}

}
