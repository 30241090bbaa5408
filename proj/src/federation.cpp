#include "pfssl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pfssl/errors.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

std::string_view to_string(TrainingObjective o) {
    return o == TrainingObjective::weighted ? "weighted" : "sequential";
}

TrainingObjective objective_from_string(std::string_view name) {
    if (name == "sequential") return TrainingObjective::sequential;
    if (name == "weighted") return TrainingObjective::weighted;
    throw DomainError("unknown training objective '" + std::string(name) + "'");
}

void TrainingConfig::validate() const {
    if (!(std::isfinite(learning_rate) && learning_rate >= 0.0)) {
        throw ConfigError("training.learning_rate", "must be finite and non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("training.momentum", "must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("training.batch_size", "must be at least 1");
}

HelperList::HelperList(std::size_t owner_id, std::size_t capacity, ModelParams owner_params)
    : owner_(owner_id), capacity_(capacity) {
    if (capacity == 0) throw DomainError("helper list capacity must be at least 1");
    entries_.push_back(HelperEntry{owner_id, std::move(owner_params), {}, 0});
}

bool HelperList::contains(std::size_t client_id) const noexcept {
    return std::any_of(entries_.begin(), entries_.end(), [&](const HelperEntry& e) { return e.client_id == client_id; });
}

void HelperList::add(HelperEntry entry) {
    if (full()) throw ProtocolError("helper list of client " + std::to_string(owner_) + " is full");
    if (contains(entry.client_id)) {
        throw ProtocolError("client " + std::to_string(entry.client_id) + " is already a helper of client " +
                            std::to_string(owner_));
    }
    if (!entry.params.same_layout(self().params)) throw ProtocolError("helper parameter layout mismatch");
    entries_.push_back(std::move(entry));
}

void HelperList::replace(std::size_t slot, HelperEntry entry) {
    if (slot == 0) throw ProtocolError("the owner entry cannot be replaced");
    if (slot >= entries_.size()) throw ProtocolError("helper slot out of range");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (i != slot && entries_[i].client_id == entry.client_id) {
            throw ProtocolError("client " + std::to_string(entry.client_id) + " is already a helper of client " +
                                std::to_string(owner_));
        }
    }
    if (!entry.params.same_layout(self().params)) throw ProtocolError("helper parameter layout mismatch");
    entries_[slot] = std::move(entry);
}

void HelperList::check_invariants() const {
    if (entries_.empty() || entries_.size() > capacity_) {
        throw ProtocolError("helper list of client " + std::to_string(owner_) + " has " +
                            std::to_string(entries_.size()) + " entries (capacity " + std::to_string(capacity_) + ")");
    }
    if (entries_.front().client_id != owner_) throw ProtocolError("owner missing from its helper list");
    auto ids = this->ids();
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw ProtocolError("duplicate helper in the list of client " + std::to_string(owner_));
    }
}

std::vector<std::size_t> HelperList::ids() const {
    std::vector<std::size_t> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.client_id);
    return out;
}

ServerPool::ServerPool(std::vector<ModelParams> initial)
    : models_(std::move(initial)), versions_(models_.size(), 0) {}

void ServerPool::store(std::size_t client_id, const ModelParams& params) {
    if (client_id >= models_.size()) throw ProtocolError("upload from unknown client " + std::to_string(client_id));
    if (!params.same_layout(models_[client_id])) throw ProtocolError("uploaded parameter layout mismatch");
    models_[client_id] = params;
    ++versions_[client_id];
}

ClientState::ClientState(std::size_t client_id, ModelParams initial, std::shared_ptr<const ClientDataset> dataset,
                         std::size_t helper_capacity, const TrainingConfig& training, std::uint64_t lineage_seed)
    : id(client_id),
      params(initial),
      opt(initial.size(), training.learning_rate, training.momentum),
      data(std::move(dataset)),
      helpers(client_id, helper_capacity, initial),
      seed(lineage_seed) {}

void ClientState::touch() {
    ++local_version;
    helpers.self().params = params;
    helpers.self().cached_version = local_version;
}

void ClientState::set_params(ModelParams p) {
    if (!p.same_layout(params)) throw ProtocolError("parameter layout mismatch");
    params = std::move(p);
    touch();
}

HelperEvaluator::HelperEvaluator(const ClientDataset& data, std::size_t mc_samples, std::uint64_t seed, CorrMode mode,
                                 int round, std::size_t uncertainty_cap)
    : data_(&data), samples_(mc_samples), seed_(seed), mode_(mode), round_(round) {
    if (mc_samples == 0) throw DomainError("MC sample count must be at least 1");
    const std::size_t n = data.unlabeled_count();
    if (uncertainty_cap == 0 || uncertainty_cap >= n) {
        rows_.resize(n);
        std::iota(rows_.begin(), rows_.end(), std::size_t{0});
    } else {
        rows_ = Rng(stream_seed(seed, Stream::subset)).sample_without_replacement(n, uncertainty_cap);
        std::sort(rows_.begin(), rows_.end());
    }
}

std::uint64_t HelperEvaluator::helper_seed(std::size_t helper_id, std::uint64_t version, bool is_self) const noexcept {
    return derive_seed(seed_, {helper_id, version, is_self ? 1u : 0u});
}

HelperEvaluator::Cached& HelperEvaluator::slot(const HelperEntry& entry, bool is_self) {
    auto& c = cache_[{entry.client_id, entry.cached_version, is_self}];
    if (c.preds.size() != data_->unlabeled_count()) c.preds.resize(data_->unlabeled_count());
    return c;
}

const PredictiveDistribution& HelperEvaluator::prediction(const HelperEntry& entry, bool is_self, std::size_t row) {
    auto& c = slot(entry, is_self);
    auto& p = c.preds.at(row);
    if (!p) {
        const std::uint64_t base = helper_seed(entry.client_id, entry.cached_version, is_self);
        p = mc_predict(entry.params, data_->unlabeled().row(row), samples_, point_seed(base, row));
    }
    return *p;
}

CorrScore HelperEvaluator::score(const HelperEntry& entry, bool is_self) {
    const std::uint64_t base = helper_seed(entry.client_id, entry.cached_version, is_self);
    double entropy_term = 0.0;
    if (!rows_.empty()) {
        double total = 0.0;
        for (std::size_t row : rows_) total += prediction(entry, is_self, row).entropy();
        entropy_term = normalized_residue(total, rows_.size(), data_->class_count());
    }
    auto& c = slot(entry, is_self);
    if (!c.accuracy) c.accuracy = helper_accuracy(entry.params, data_->labeled());
    const double draw = mode_ == CorrMode::random ? Rng(stream_seed(base, Stream::control)).uniform() : 0.0;
    return combine_corr(data_->labeled_ratio(), entropy_term, *c.accuracy, mode_, round_, draw);
}

namespace {

enum class Phase : std::uint64_t { supervised = 0, unsupervised = 1, joint = 2 };

constexpr std::uint64_t kWarmupTag = 0;
constexpr std::uint64_t kTrainTag = 1;

struct PassKey {
    std::uint64_t lineage;
    std::uint64_t context;  // warmup or train
    std::uint64_t round;
    std::uint64_t epoch;

    std::uint64_t shuffle_seed(Phase p) const noexcept {
        return derive_seed(stream_seed(lineage, Stream::shuffle), {context, round, epoch, static_cast<std::uint64_t>(p)});
    }
    std::uint64_t dropout_seed(Phase p, std::size_t position) const noexcept {
        return derive_seed(stream_seed(lineage, Stream::dropout),
                           {context, round, epoch, static_cast<std::uint64_t>(p), position});
    }
};

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(seed).shuffle(order);
    return order;
}

void supervised_pass(ClientState& client, const PassKey& key, std::size_t batch_size) {
    const Dataset& labeled = client.data->labeled();
    if (labeled.empty()) return;
    const auto order = shuffled(labeled.size(), key.shuffle_seed(Phase::supervised));
    std::vector<Example> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batch.clear();
        for (std::size_t pos = start; pos < end; ++pos) {
            const std::size_t i = order[pos];
            batch.push_back(Example{labeled.features.row(i), labeled.labels[i], {},
                                    ForwardMode::dropout_sample(key.dropout_seed(Phase::supervised, pos))});
        }
        const auto g = backward(client.params, batch, LossKind::cross_entropy);
        sgd_step(client.params, g, client.opt);
    }
}

void unsupervised_pass(ClientState& client, std::span<const PseudoLabel> pseudo, const PassKey& key,
                       std::size_t batch_size) {
    const Matrix& unlabeled = client.data->unlabeled();
    if (unlabeled.empty()) return;
    const auto order = shuffled(unlabeled.rows, key.shuffle_seed(Phase::unsupervised));
    std::vector<Example> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batch.clear();
        for (std::size_t pos = start; pos < end; ++pos) {
            const std::size_t i = order[pos];
            batch.push_back(Example{unlabeled.row(i), 0, pseudo[i].target.probs(),
                                    ForwardMode::dropout_sample(key.dropout_seed(Phase::unsupervised, pos))});
        }
        const auto g = backward(client.params, batch, LossKind::kl_divergence);
        sgd_step(client.params, g, client.opt);
    }
}

// One pass of mu * CE + (1 - mu) * KL steps; the shorter set is cycled so both
// terms appear in every step.
void weighted_pass(ClientState& client, std::span<const PseudoLabel> pseudo, const PassKey& key,
                   std::size_t batch_size) {
    const Dataset& labeled = client.data->labeled();
    const Matrix& unlabeled = client.data->unlabeled();
    const std::size_t s = labeled.size();
    const std::size_t u = unlabeled.rows;
    if (s + u == 0) return;
    const double mu = client.data->labeled_ratio();
    const auto order_s = shuffled(s, key.shuffle_seed(Phase::supervised));
    const auto order_u = shuffled(u, key.shuffle_seed(Phase::unsupervised));
    const std::size_t steps = std::max((s + batch_size - 1) / batch_size, (u + batch_size - 1) / batch_size);
    std::vector<Example> bs;
    std::vector<Example> bu;
    std::vector<double> g(client.params.size());
    for (std::size_t step = 0; step < steps; ++step) {
        std::fill(g.begin(), g.end(), 0.0);
        if (s > 0) {
            bs.clear();
            for (std::size_t j = 0; j < std::min(batch_size, s); ++j) {
                const std::size_t pos = (step * batch_size + j) % s;
                const std::size_t i = order_s[pos];
                bs.push_back(Example{labeled.features.row(i), labeled.labels[i], {},
                                     ForwardMode::dropout_sample(key.dropout_seed(Phase::joint, 2 * (step * batch_size + j)))});
            }
            const auto gs = backward(client.params, bs, LossKind::cross_entropy);
            for (std::size_t c = 0; c < g.size(); ++c) g[c] += mu * gs[c];
        }
        if (u > 0) {
            bu.clear();
            for (std::size_t j = 0; j < std::min(batch_size, u); ++j) {
                const std::size_t pos = (step * batch_size + j) % u;
                const std::size_t i = order_u[pos];
                bu.push_back(Example{unlabeled.row(i), 0, pseudo[i].target.probs(),
                                     ForwardMode::dropout_sample(key.dropout_seed(Phase::joint, 2 * (step * batch_size + j) + 1))});
            }
            const auto gu = backward(client.params, bu, LossKind::kl_divergence);
            for (std::size_t c = 0; c < g.size(); ++c) g[c] += (1.0 - mu) * gu[c];
        }
        sgd_step(client.params, g, client.opt);
    }
}

void require_finite(const ClientState& client) {
    if (!client.params.all_finite()) {
        throw NumericError("client " + std::to_string(client.id) + " parameters became non-finite during training");
    }
}

}  // namespace

void warmup(ClientState& client, const TrainingConfig& cfg) {
    if (client.data->labeled().empty() || cfg.warmup_epochs == 0) return;
    for (std::size_t e = 0; e < cfg.warmup_epochs; ++e) {
        supervised_pass(client, PassKey{client.seed, kWarmupTag, 0, e}, cfg.batch_size);
    }
    require_finite(client);
    client.touch();
}

ModelParams weighted_average(std::span<const ModelParams* const> models, std::span<const double> weights,
                             const ModelParams& fallback) {
    if (models.size() != weights.size()) throw ProtocolError("one weight per model is required");
    for (const ModelParams* m : models) {
        if (!m->same_layout(fallback)) throw ProtocolError("aggregated parameter layouts differ");
    }
    double total = 0.0;
    for (double w : weights) total += w;
    if (models.empty() || !(total >= kAggregateWeightFloor)) return fallback;

    std::vector<double> out(fallback.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        double lo = models.front()->values()[c];
        double hi = lo;
        double acc = 0.0;
        for (std::size_t j = 0; j < models.size(); ++j) {
            const double v = models[j]->values()[c];
            acc += weights[j] * v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        // rounding guard: the result stays inside the coordinate hull, so a
        // shared vector is a bitwise fixed point
        out[c] = std::clamp(acc / total, lo, hi);
    }
    return ModelParams(fallback.spec_ptr(), std::move(out));
}

ModelParams aggregate(const ClientState& client) {
    const auto entries = client.helpers.entries();
    std::vector<const ModelParams*> models;
    std::vector<double> weights;
    models.reserve(entries.size());
    weights.reserve(entries.size());
    for (const auto& e : entries) {
        models.push_back(&e.params);
        weights.push_back(e.corr.value);
    }
    return weighted_average(models, weights, client.params);
}

void score_helpers(ClientState& client, HelperEvaluator& eval) {
    for (std::size_t slot = 0; slot < client.helpers.size(); ++slot) {
        auto& e = client.helpers.at(slot);
        e.corr = eval.score(e, slot == 0);
    }
}

std::vector<PseudoLabel> select_pseudo_labels(ClientState& client, HelperEvaluator& eval) {
    const std::size_t n = client.data->unlabeled_count();
    const auto entries = client.helpers.entries();
    std::vector<PseudoLabel> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PredictiveDistribution* best = nullptr;
        std::size_t best_id = 0;
        for (std::size_t slot = 0; slot < entries.size(); ++slot) {
            const auto& pd = eval.prediction(entries[slot], slot == 0, i);
            const std::size_t id = entries[slot].client_id;
            if (best == nullptr || pd.entropy() < best->entropy() ||
                (pd.entropy() == best->entropy() && id < best_id)) {
                best = &pd;
                best_id = id;
            }
        }
        out.push_back(PseudoLabel{*best, best_id, best->entropy()});
    }
    return out;
}

void local_train(ClientState& client, std::span<const PseudoLabel> pseudo, std::size_t epochs,
                 const TrainingConfig& cfg, int round) {
    if (pseudo.size() != client.data->unlabeled_count()) {
        throw ProtocolError("client " + std::to_string(client.id) + " received " + std::to_string(pseudo.size()) +
                            " pseudo-labels for " + std::to_string(client.data->unlabeled_count()) +
                            " unlabeled rows");
    }
    if (epochs == 0) return;
    const auto r = static_cast<std::uint64_t>(round);
    for (std::size_t e = 0; e < epochs; ++e) {
        const PassKey key{client.seed, kTrainTag, r, e};
        if (cfg.objective == TrainingObjective::weighted) {
            weighted_pass(client, pseudo, key, cfg.batch_size);
        } else {
            supervised_pass(client, key, cfg.batch_size);
            unsupervised_pass(client, pseudo, key, cfg.batch_size);
        }
    }
    require_finite(client);
    client.touch();
}

double combined_loss(const ModelParams& params, const ClientDataset& data, std::span<const PseudoLabel> pseudo) {
    const double mu = data.labeled_ratio();
    double sup = 0.0;
    for (std::size_t i = 0; i < data.labeled_count(); ++i) {
        sup += cross_entropy(forward(params, data.labeled().features.row(i), ForwardMode::deterministic()),
                             data.labeled().labels[i]);
    }
    if (data.labeled_count() > 0) sup /= static_cast<double>(data.labeled_count());
    double unsup = 0.0;
    for (std::size_t i = 0; i < data.unlabeled_count(); ++i) {
        unsup += kl_divergence(forward(params, data.unlabeled().row(i), ForwardMode::deterministic()),
                               pseudo[i].target);
    }
    if (data.unlabeled_count() > 0) unsup /= static_cast<double>(data.unlabeled_count());
    return mu * sup + (1.0 - mu) * unsup;
}

RoundEvent upload(const ClientState& client, ServerPool& pool, int round) {
    pool.store(client.id, client.params);
    return RoundEvent{round, EventKind::upload, client.id, std::nullopt, 1};
}

}  // namespace pfssl
