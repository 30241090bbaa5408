#include "pfssl/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <set>

#include "pfssl/errors.hpp"
#include "pfssl/parallel.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::um_pfssl: return "um_pfssl";
        case Method::fedavg_semi: return "fedavg_semi";
        case Method::local_only: return "local_only";
    }
    return "um_pfssl";
}

Method method_from_string(std::string_view name) {
    if (name == "um_pfssl") return Method::um_pfssl;
    if (name == "fedavg_semi") return Method::fedavg_semi;
    if (name == "local_only") return Method::local_only;
    throw DomainError("unknown method '" + std::string(name) + "'");
}

void RoundConfig::validate() const {
    if (clients == 0) throw ConfigError("protocol.clients", "must be at least 1");
    if (!(sample_rate > Rational(0) && sample_rate <= Rational(1))) {
        throw ConfigError("protocol.sample_rate", "must lie in (0, 1]");
    }
    if (helpers == 0) throw ConfigError("protocol.helpers", "must be at least 1 (the client itself)");
    if (replacements >= helpers) {
        throw ConfigError("protocol.replacements", "must be below protocol.helpers; the client itself is never replaced");
    }
    if (update_period == 0) throw ConfigError("protocol.update_period", "must be at least 1");
    if (mc_samples == 0) throw ConfigError("protocol.mc_samples", "must be at least 1");
    if (threads == 0) throw ConfigError("threads", "must be at least 1");
    if (rounds > static_cast<std::size_t>(INT32_MAX)) throw ConfigError("protocol.rounds", "too large");
}

std::size_t RoundConfig::sampled_count() const {
    return static_cast<std::size_t>((sample_rate * Rational(static_cast<std::int64_t>(clients))).ceil());
}

CostModel RoundConfig::cost_model() const {
    CostModel m;
    m.clients = static_cast<std::int64_t>(clients);
    m.sample_rate = sample_rate;
    m.rounds = static_cast<std::int64_t>(rounds);
    m.helpers = static_cast<std::int64_t>(helpers);
    m.replacements = static_cast<std::int64_t>(replacements);
    m.search_rounds = static_cast<std::int64_t>(search_rounds);
    m.update_period = static_cast<std::int64_t>(update_period);
    return m;
}

CostModel RoundConfig::effective_cost_model() const {
    CostModel m = cost_model();
    m.sample_rate = Rational(static_cast<std::int64_t>(sampled_count()), static_cast<std::int64_t>(clients));
    return m;
}

std::uint64_t RoundConfig::fill_allowance() const {
    return static_cast<std::uint64_t>(clients) * std::min(helpers - 1, clients - 1);
}

void Trace::record(const RoundEvent& e) {
    ledger.record(e);
    events.push_back(e);
}

std::uint64_t evaluator_seed(const RoundConfig& cfg, std::size_t client_id) {
    return derive_seed(stream_seed(cfg.seed, Stream::dropout), {client_id});
}

Federation setup_federation(std::vector<ClientDataset> data, std::shared_ptr<const NetSpec> net,
                            const RoundConfig& cfg, const TrainingConfig& training) {
    cfg.validate();
    training.validate();
    if (data.size() != cfg.clients) {
        throw ConsistencyError("expected " + std::to_string(cfg.clients) + " client datasets, got " +
                               std::to_string(data.size()));
    }
    const ModelParams w0 = init_params(net, stream_seed(cfg.seed, Stream::init));
    std::vector<ClientState> clients;
    clients.reserve(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
        if (data[k].id() != k) throw ConsistencyError("client datasets must be ordered by id");
        clients.emplace_back(k, w0, std::make_shared<const ClientDataset>(std::move(data[k])), cfg.helpers, training,
                             derive_seed(stream_seed(cfg.seed, Stream::lineage), {k}));
    }
    parallel_for(clients.size(), cfg.threads, [&](std::size_t k) { warmup(clients[k], training); });
    std::vector<ModelParams> initial;
    initial.reserve(clients.size());
    for (const auto& c : clients) initial.push_back(c.params);
    return Federation{std::move(clients), ServerPool(std::move(initial))};
}

std::vector<std::size_t> sample_clients(const RoundConfig& cfg, int round) {
    Rng rng(derive_seed(stream_seed(cfg.seed, Stream::sampling), {static_cast<std::uint64_t>(round)}));
    auto ids = rng.sample_without_replacement(cfg.clients, cfg.sampled_count());
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::size_t> lowest_ranked_slots(const HelperList& helpers, std::size_t count) {
    std::vector<std::size_t> slots(helpers.size() - 1);
    std::iota(slots.begin(), slots.end(), std::size_t{1});
    std::sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = helpers.at(a);
        const auto& eb = helpers.at(b);
        if (ea.corr.value != eb.corr.value) return ea.corr.value < eb.corr.value;
        return ea.client_id < eb.client_id;
    });
    if (slots.size() > count) slots.resize(count);
    return slots;
}

namespace {

std::vector<std::size_t> peers_outside(const ClientState& client, std::size_t population) {
    std::vector<std::size_t> out;
    for (std::size_t id = 0; id < population; ++id) {
        if (id != client.id && !client.helpers.contains(id)) out.push_back(id);
    }
    return out;
}

RoundEvent event(int round, EventKind kind, std::size_t client, std::optional<std::size_t> peer = std::nullopt,
                 std::uint64_t units = 0) {
    return RoundEvent{round, kind, client, peer, units};
}

void check_population(const RoundConfig& cfg, const std::vector<ClientState>& clients, const ServerPool& pool) {
    if (clients.size() != cfg.clients || pool.size() != cfg.clients) {
        throw ConsistencyError("client and pool sizes must equal protocol.clients");
    }
    for (std::size_t k = 0; k < clients.size(); ++k) {
        if (clients[k].id != k) throw ConsistencyError("clients must be ordered by id");
        if (clients[k].helpers.capacity() != cfg.helpers) {
            throw ConsistencyError("helper list capacity differs from protocol.helpers");
        }
    }
}

std::vector<std::vector<std::size_t>> helper_snapshot(const std::vector<ClientState>& clients) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(clients.size());
    for (const auto& c : clients) out.push_back(c.helpers.ids());
    return out;
}

std::vector<PseudoLabel> self_pseudo_labels(const ClientState& client, HelperEvaluator& eval) {
    std::vector<PseudoLabel> out;
    out.reserve(client.data->unlabeled_count());
    for (std::size_t i = 0; i < client.data->unlabeled_count(); ++i) {
        const auto& pd = eval.prediction(client.helpers.self(), true, i);
        out.push_back(PseudoLabel{pd, client.id, pd.entropy()});
    }
    return out;
}

// Runs `fn(k)` for every listed client in parallel and records the returned
// events in list order.
template <typename Fn>
void phase(Trace& trace, const std::vector<std::size_t>& ids, std::size_t threads, Fn&& fn) {
    std::vector<std::vector<RoundEvent>> per(ids.size());
    parallel_for(ids.size(), threads, [&](std::size_t i) { per[i] = fn(ids[i]); });
    for (const auto& evs : per) {
        for (const auto& e : evs) trace.record(e);
    }
}

}  // namespace

std::vector<RoundEvent> replace_helper(ClientState& client, const ServerPool& pool, std::size_t replacements,
                                       std::uint64_t candidate_seed, HelperEvaluator& eval, int round) {
    std::vector<RoundEvent> events;
    if (replacements == 0) return events;
    score_helpers(client, eval);
    const auto marked = lowest_ranked_slots(client.helpers, replacements);
    if (marked.empty()) {
        events.push_back(event(round, EventKind::skip, client.id));
        return events;
    }
    const auto available = peers_outside(client, pool.size());
    const auto picks = Rng(candidate_seed).sample_without_replacement(available.size(), replacements);
    if (picks.size() < replacements) events.push_back(event(round, EventKind::skip, client.id));

    std::vector<HelperEntry> candidates;
    candidates.reserve(picks.size());
    for (std::size_t p : picks) {
        const std::size_t id = available[p];
        HelperEntry e{id, pool.model(id), {}, pool.version(id)};
        e.corr = eval.score(e, false);
        events.push_back(event(round, EventKind::replace, client.id, id, 1));
        candidates.push_back(std::move(e));
    }
    std::sort(candidates.begin(), candidates.end(), [](const HelperEntry& a, const HelperEntry& b) {
        if (a.corr.value != b.corr.value) return a.corr.value > b.corr.value;
        return a.client_id < b.client_id;
    });
    std::size_t j = 0;
    for (auto& cand : candidates) {
        if (j >= marked.size()) break;
        if (!(cand.corr.value > client.helpers.at(marked[j]).corr.value)) break;
        client.helpers.replace(marked[j], std::move(cand));
        ++j;
    }
    client.helpers.check_invariants();
    return events;
}

std::vector<RoundEvent> update_helper(ClientState& client, const ServerPool& pool, std::size_t replacements,
                                      HelperEvaluator& eval, int round) {
    std::vector<RoundEvent> events;
    score_helpers(client, eval);
    const auto marked = lowest_ranked_slots(client.helpers, replacements);
    for (std::size_t slot = 1; slot < client.helpers.size(); ++slot) {
        if (std::find(marked.begin(), marked.end(), slot) != marked.end()) continue;
        auto& entry = client.helpers.at(slot);
        const std::uint64_t version = pool.version(entry.client_id);
        if (version > entry.cached_version) {
            entry.params = pool.model(entry.client_id);
            entry.cached_version = version;
            events.push_back(event(round, EventKind::update, client.id, entry.client_id, 1));
        } else {
            events.push_back(event(round, EventKind::skip, client.id, entry.client_id));
        }
    }
    return events;
}

std::vector<RoundEvent> fill_helpers(ClientState& client, const ServerPool& pool, std::uint64_t seed, int round) {
    std::vector<RoundEvent> events;
    if (client.helpers.full()) return events;
    const std::size_t need = client.helpers.capacity() - client.helpers.size();
    const auto available = peers_outside(client, pool.size());
    const auto picks = Rng(seed).sample_without_replacement(available.size(), need);
    for (std::size_t p : picks) {
        const std::size_t id = available[p];
        client.helpers.add(HelperEntry{id, pool.model(id), {}, pool.version(id)});
        events.push_back(event(round, EventKind::fill, client.id, id, 1));
    }
    if (picks.size() < need) events.push_back(event(round, EventKind::skip, client.id));
    return events;
}

Trace run(const RoundConfig& cfg, const TrainingConfig& training, CorrMode mode, std::vector<ClientState>& clients,
          ServerPool& pool) {
    cfg.validate();
    training.validate();
    check_population(cfg, clients, pool);
    Trace trace;
    const std::size_t K = clients.size();
    std::vector<std::size_t> everyone(K);
    std::iota(everyone.begin(), everyone.end(), std::size_t{0});
    const std::uint64_t candidates = stream_seed(cfg.seed, Stream::candidates);

    for (int t = 1; t <= static_cast<int>(cfg.rounds); ++t) {
        const auto tt = static_cast<std::uint64_t>(t);
        const auto sampled = sample_clients(cfg, t);
        // Each evaluator is only touched by the task that owns its client.
        std::vector<std::optional<HelperEvaluator>> evals(K);
        auto eval_for = [&](std::size_t k) -> HelperEvaluator& {
            if (!evals[k]) {
                evals[k].emplace(*clients[k].data, cfg.mc_samples, evaluator_seed(cfg, k), mode, t,
                                 cfg.uncertainty_cap);
            }
            return *evals[k];
        };
        const auto& maintained = cfg.restrict_to_sampled ? sampled : everyone;

        if (static_cast<std::size_t>(t) < cfg.search_rounds) {
            phase(trace, maintained, cfg.threads, [&](std::size_t k) {
                return replace_helper(clients[k], pool, cfg.replacements, derive_seed(candidates, {tt, k, 0}),
                                      eval_for(k), t);
            });
        }
        if (t % static_cast<int>(cfg.update_period) == 0) {
            phase(trace, maintained, cfg.threads, [&](std::size_t k) {
                return update_helper(clients[k], pool, cfg.replacements, eval_for(k), t);
            });
        }
        for (std::size_t k : sampled) trace.record(event(t, EventKind::sample, k));

        std::vector<LabelErrorCount> errors(sampled.size());
        std::vector<std::vector<RoundEvent>> per(sampled.size());
        parallel_for(sampled.size(), cfg.threads, [&](std::size_t i) {
            const std::size_t k = sampled[i];
            auto& c = clients[k];
            auto& ev = per[i];
            if (!c.helpers.full()) {
                const auto filled = fill_helpers(c, pool, derive_seed(candidates, {tt, k, 1}), t);
                ev.insert(ev.end(), filled.begin(), filled.end());
            }
            auto& eval = eval_for(k);
            score_helpers(c, eval);
            c.set_params(aggregate(c));
            ev.push_back(event(t, EventKind::aggregate, k));
            const auto labels = select_pseudo_labels(c, eval);
            errors[i] = count_label_errors(labels, *c.data);
            ev.push_back(event(t, EventKind::pseudo_label, k));
            local_train(c, labels, cfg.local_epochs, training, t);
            ev.push_back(event(t, EventKind::train, k));
            c.helpers.check_invariants();
        });
        LabelErrorCount pooled;
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            for (const auto& e : per[i]) trace.record(e);
            pooled += errors[i];
        }
        for (std::size_t k : sampled) trace.record(upload(clients[k], pool, t));

        trace.helper_lists.push_back(helper_snapshot(clients));
        trace.metrics.push_back(summarize_round(t, clients, pooled, trace.ledger, cfg.threads));
    }
    return trace;
}

Trace run_baseline(const RoundConfig& cfg, const TrainingConfig& training, Method kind,
                   std::vector<ClientState>& clients, ServerPool& pool) {
    if (kind == Method::um_pfssl) throw DomainError("run_baseline takes a comparison method");
    cfg.validate();
    training.validate();
    check_population(cfg, clients, pool);
    Trace trace;
    const std::size_t K = clients.size();

    auto mean_of = [&](const std::vector<std::size_t>& ids) {
        std::vector<const ModelParams*> models;
        for (std::size_t k : ids) models.push_back(&clients[k].params);
        const std::vector<double> ones(models.size(), 1.0);
        return weighted_average(models, ones, clients[ids.front()].params);
    };
    std::optional<ModelParams> global;
    if (kind == Method::fedavg_semi) {
        std::vector<std::size_t> all(K);
        std::iota(all.begin(), all.end(), std::size_t{0});
        global = mean_of(all);
    }

    for (int t = 1; t <= static_cast<int>(cfg.rounds); ++t) {
        const auto sampled = sample_clients(cfg, t);
        for (std::size_t k : sampled) trace.record(event(t, EventKind::sample, k));
        if (global) {
            for (std::size_t k : sampled) trace.record(event(t, EventKind::broadcast, k, std::nullopt, 1));
        }

        std::vector<LabelErrorCount> errors(sampled.size());
        std::vector<std::vector<RoundEvent>> per(sampled.size());
        parallel_for(sampled.size(), cfg.threads, [&](std::size_t i) {
            const std::size_t k = sampled[i];
            auto& c = clients[k];
            if (global) c.set_params(*global);
            HelperEvaluator eval(*c.data, cfg.mc_samples, evaluator_seed(cfg, k), CorrMode::combined, t,
                                 cfg.uncertainty_cap);
            const auto labels = self_pseudo_labels(c, eval);
            errors[i] = count_label_errors(labels, *c.data);
            per[i].push_back(event(t, EventKind::pseudo_label, k));
            local_train(c, labels, cfg.local_epochs, training, t);
            per[i].push_back(event(t, EventKind::train, k));
        });
        LabelErrorCount pooled;
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            for (const auto& e : per[i]) trace.record(e);
            pooled += errors[i];
        }
        if (global) {
            for (std::size_t k : sampled) trace.record(upload(clients[k], pool, t));
            global = mean_of(sampled);
        }

        trace.helper_lists.push_back(helper_snapshot(clients));
        trace.metrics.push_back(summarize_round(t, clients, pooled, trace.ledger, cfg.threads));
    }
    return trace;
}

ProtocolAudit audit_trace(const RoundConfig& cfg, Method method, const Trace& trace) {
    ProtocolAudit audit;
    auto fail = [&](std::string msg) { audit.violations.push_back(std::move(msg)); };
    const std::size_t K = cfg.clients;
    const std::size_t n = cfg.rounds;

    std::vector<std::size_t> uploads(n + 1, 0);
    std::vector<std::size_t> samples(n + 1, 0);
    std::vector<std::size_t> fills(K, 0);
    std::uint64_t up = 0;
    std::uint64_t down = 0;
    int last_round = 0;
    for (const auto& e : trace.events) {
        const std::string where = "round " + std::to_string(e.round) + " client " + std::to_string(e.client) + " " +
                                  std::string(to_string(e.kind));
        if (e.round < 1 || static_cast<std::size_t>(e.round) > n) {
            fail(where + ": round outside 1..n");
            continue;
        }
        if (e.round < last_round) fail(where + ": events out of round order");
        last_round = e.round;
        if (e.client >= K) fail(where + ": unknown client");
        if (e.peer && *e.peer == e.client) fail(where + ": client is its own peer");

        const bool transfer = e.kind == EventKind::upload || is_download(e.kind);
        if (transfer && e.model_units != 1) fail(where + ": a transfer moves exactly one model-unit");
        if (!transfer && e.model_units != 0) fail(where + ": only transfers carry model-units");
        if (e.kind == EventKind::upload) up += e.model_units;
        if (is_download(e.kind)) down += e.model_units;

        switch (e.kind) {
            case EventKind::replace:
                ++audit.replace_downloads;
                if (method != Method::um_pfssl) fail(where + ": helper search outside the helper protocol");
                if (static_cast<std::size_t>(e.round) >= cfg.search_rounds) fail(where + ": search at t >= F");
                break;
            case EventKind::update:
                ++audit.update_downloads;
                if (method != Method::um_pfssl) fail(where + ": helper refresh outside the helper protocol");
                if (e.round % static_cast<int>(cfg.update_period) != 0) fail(where + ": refresh off the nu grid");
                break;
            case EventKind::fill:
                ++audit.fill_downloads;
                if (method != Method::um_pfssl) fail(where + ": helper fill outside the helper protocol");
                if (e.client < K) ++fills[e.client];
                break;
            case EventKind::broadcast:
                if (method != Method::fedavg_semi) fail(where + ": broadcast outside the averaging baseline");
                break;
            case EventKind::upload: ++uploads[static_cast<std::size_t>(e.round)]; break;
            case EventKind::sample: ++samples[static_cast<std::size_t>(e.round)]; break;
            default: break;
        }
    }

    const std::size_t per_round_uploads = method == Method::local_only ? 0 : cfg.sampled_count();
    for (std::size_t t = 1; t <= n; ++t) {
        if (samples[t] != cfg.sampled_count()) fail("round " + std::to_string(t) + ": wrong sample count");
        if (uploads[t] != per_round_uploads) fail("round " + std::to_string(t) + ": wrong upload count");
    }
    const std::size_t fill_cap = std::min(cfg.helpers - 1, K - 1);
    for (std::size_t k = 0; k < K; ++k) {
        if (fills[k] > fill_cap) fail("client " + std::to_string(k) + ": fill downloads exceed M - 1");
    }

    if (trace.helper_lists.size() != n) fail("helper-list snapshots missing");
    for (std::size_t t = 0; t < trace.helper_lists.size(); ++t) {
        const auto& lists = trace.helper_lists[t];
        if (lists.size() != K) {
            fail("round " + std::to_string(t + 1) + ": helper snapshot has the wrong client count");
            continue;
        }
        for (std::size_t k = 0; k < K; ++k) {
            const auto& ids = lists[k];
            const std::string where = "round " + std::to_string(t + 1) + " client " + std::to_string(k);
            if (ids.empty() || ids.front() != k) fail(where + ": owner missing from helper list");
            if (ids.size() > cfg.helpers) fail(where + ": helper list exceeds M");
            std::set<std::size_t> unique(ids.begin(), ids.end());
            if (unique.size() != ids.size()) fail(where + ": duplicate helpers");
            if (!unique.empty() && *unique.rbegin() >= K) fail(where + ": unknown helper id");
        }
    }

    if (up != trace.ledger.uploads() || down != trace.ledger.downloads()) fail("trace and ledger disagree");
    if (trace.metrics.size() != n) fail("metrics rows missing");
    return audit;
}

}  // namespace pfssl
