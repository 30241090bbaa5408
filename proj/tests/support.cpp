#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "pfssl/rng.hpp"
#include "pfssl/uncertainty.hpp"

namespace oracle {

using namespace pfssl;

ScalarPass scalar_forward(const NetSpec& spec, std::span<const double> w, std::span<const double> x,
                          const std::vector<std::vector<bool>>& keep) {
    ScalarPass pass;
    std::vector<double> a(x.begin(), x.end());
    std::size_t off = 0;
    const std::size_t layers = spec.layer_widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = spec.layer_widths[l];
        const std::size_t out = spec.layer_widths[l + 1];
        std::vector<double> z(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = w[off + in * out + o];
            for (std::size_t i = 0; i < in; ++i) s += w[off + o * in + i] * a[i];
            z[o] = s;
        }
        off += in * out + out;
        pass.pre.push_back(z);
        if (l + 1 == layers) break;
        std::vector<double> next(out);
        for (std::size_t o = 0; o < out; ++o) {
            double h = z[o];
            if (spec.activation == Activation::relu) h = z[o] > 0.0 ? z[o] : 0.0;
            if (spec.activation == Activation::tanh) h = std::tanh(z[o]);
            double scale = 1.0;
            if (!keep.empty()) scale = keep[l][o] ? 1.0 / (1.0 - spec.dropout_rate) : 0.0;
            next[o] = h * scale;
        }
        a = next;
    }
    const auto& logits = pass.pre.back();
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double sum = 0.0;
    pass.probs.resize(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) {
        pass.probs[c] = std::exp(logits[c] - m);
        sum += pass.probs[c];
    }
    for (double& p : pass.probs) p /= sum;
    return pass;
}

std::vector<std::vector<bool>> dropout_pattern(const NetSpec& spec, std::uint64_t seed) {
    std::vector<std::vector<bool>> keep;
    for (std::size_t l = 0; l + 2 < spec.layer_widths.size(); ++l) {
        std::vector<bool> row(spec.layer_widths[l + 1], true);
        for (std::size_t o = 0; o < row.size(); ++o) {
            if (spec.dropout_rate > 0.0) row[o] = Rng(derive_seed(seed, {l, o})).uniform() >= spec.dropout_rate;
        }
        keep.push_back(row);
    }
    return keep;
}

double scalar_loss(const NetSpec& spec, std::span<const double> w, std::span<const OracleExample> batch) {
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto p = scalar_forward(spec, w, ex.x, ex.keep).probs;
        if (ex.target.empty()) {
            total += -std::log(std::max(p[ex.label], 1e-12));
        } else {
            for (std::size_t c = 0; c < p.size(); ++c) {
                if (ex.target[c] > 0.0) {
                    total += ex.target[c] * (std::log(ex.target[c]) - std::log(std::max(p[c], 1e-12)));
                }
            }
        }
    }
    return total / static_cast<double>(batch.size());
}

namespace {

std::vector<bool> relu_signs(const NetSpec& spec, std::span<const double> w, std::span<const OracleExample> batch) {
    std::vector<bool> signs;
    for (const auto& ex : batch) {
        const auto pass = scalar_forward(spec, w, ex.x, ex.keep);
        for (std::size_t l = 0; l + 1 < pass.pre.size(); ++l) {
            for (double z : pass.pre[l]) signs.push_back(z > 0.0);
        }
    }
    return signs;
}

}  // namespace

FiniteDiff finite_difference(const NetSpec& spec, std::span<const double> w, std::span<const OracleExample> batch,
                             double h) {
    FiniteDiff fd;
    fd.grad.assign(w.size(), 0.0);
    fd.usable.assign(w.size(), true);
    std::vector<double> plus(w.begin(), w.end());
    std::vector<double> minus(w.begin(), w.end());
    for (std::size_t i = 0; i < w.size(); ++i) {
        plus[i] = w[i] + h;
        minus[i] = w[i] - h;
        fd.grad[i] = (scalar_loss(spec, plus, batch) - scalar_loss(spec, minus, batch)) / (2.0 * h);
        if (spec.activation == Activation::relu) {
            fd.usable[i] = relu_signs(spec, plus, batch) == relu_signs(spec, minus, batch);
        }
        plus[i] = w[i];
        minus[i] = w[i];
    }
    return fd;
}

double relative_error(std::span<const double> a, std::span<const double> b, const std::vector<bool>& usable) {
    double diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!usable[i]) continue;
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

std::vector<double> weighted_mean(const std::vector<std::vector<double>>& models, const std::vector<double>& weights,
                                  const std::vector<double>& fallback) {
    double total = 0.0;
    for (double v : weights) total += v;
    if (!(total >= 1e-9)) return fallback;
    std::vector<double> out(fallback.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        double num = 0.0;
        double lo = models[0][c];
        double hi = models[0][c];
        for (std::size_t j = 0; j < models.size(); ++j) {
            num += weights[j] * models[j][c];
            if (models[j][c] < lo) lo = models[j][c];
            if (models[j][c] > hi) hi = models[j][c];
        }
        double v = num / total;
        if (v < lo) v = lo;
        if (v > hi) v = hi;
        out[c] = v;
    }
    return out;
}

std::vector<OracleLabel> pseudo_labels(const ClientState& client, const HelperEvaluator& eval, std::size_t mc_samples) {
    const auto& data = *client.data;
    const auto entries = client.helpers.entries();
    std::vector<OracleLabel> out;
    for (std::size_t i = 0; i < data.unlabeled_count(); ++i) {
        const auto x = data.unlabeled().row(i);
        double best_h = 0.0;
        std::size_t best_id = 0;
        std::vector<double> best_p;
        for (std::size_t slot = 0; slot < entries.size(); ++slot) {
            const auto& e = entries[slot];
            const std::uint64_t base = derive_seed(eval.helper_seed(e.client_id, e.cached_version, slot == 0), {i});
            std::vector<double> mean(e.params.spec().class_count(), 0.0);
            for (std::size_t t = 0; t < mc_samples; ++t) {
                const auto keep = dropout_pattern(e.params.spec(), derive_seed(base, {t}));
                const auto p = scalar_forward(e.params.spec(), e.params.values(), x, keep).probs;
                for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
            }
            const double inv = 1.0 / static_cast<double>(mc_samples);
            for (double& m : mean) m *= inv;
            double h = 0.0;
            for (double p : mean) {
                if (p > 0.0) h -= p * std::log(p);
            }
            const bool better = best_p.empty() || h < best_h || (h == best_h && e.client_id < best_id);
            if (better) {
                best_h = h;
                best_id = e.client_id;
                best_p = mean;
            }
        }
        out.push_back(OracleLabel{best_p, best_id});
    }
    return out;
}

double mean_label_tv(const Dataset& data, const std::vector<ClientShard>& shards) {
    const std::size_t C = data.class_count;
    std::vector<double> global(C, 0.0);
    for (std::size_t y : data.labels) global[y] += 1.0 / static_cast<double>(data.size());
    double total = 0.0;
    for (const auto& s : shards) {
        std::vector<double> hist(C, 0.0);
        std::size_t n = 0;
        for (const auto* rows : {&s.train, &s.validation, &s.test}) {
            for (std::size_t r : *rows) {
                hist[data.labels[r]] += 1.0;
                ++n;
            }
        }
        double tv = 0.0;
        for (std::size_t c = 0; c < C; ++c) tv += std::abs(hist[c] / static_cast<double>(n) - global[c]);
        total += 0.5 * tv;
    }
    return total / static_cast<double>(shards.size());
}

double variance(std::span<const double> xs) {
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t n = 0;
    for (double x : xs) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    return n == 0 ? 0.0 : m2 / static_cast<double>(n);
}

}  // namespace oracle

namespace fixture {

using namespace pfssl;

std::shared_ptr<const NetSpec> net(std::vector<std::size_t> widths, double dropout, Activation act) {
    auto spec = std::make_shared<NetSpec>();
    spec->layer_widths = std::move(widths);
    spec->dropout_rate = dropout;
    spec->activation = act;
    return spec;
}

ModelParams random_params(const std::shared_ptr<const NetSpec>& spec, std::uint64_t seed, double scale) {
    Rng rng(seed);
    std::vector<double> v(spec->parameter_count());
    for (double& x : v) x = scale * rng.normal();
    return ModelParams(spec, std::move(v));
}

ClientDataset random_client(std::size_t id, std::size_t dim, std::size_t classes, std::size_t labeled,
                            std::size_t unlabeled, std::uint64_t seed) {
    Rng rng(seed);
    auto block = [&](std::size_t rows) {
        Dataset d;
        d.class_count = classes;
        d.features = Matrix(rows, dim);
        for (double& v : d.features.values) v = rng.normal();
        for (std::size_t i = 0; i < rows; ++i) d.labels.push_back(rng.below(classes));
        return d;
    };
    Dataset l = block(labeled);
    Dataset u = block(unlabeled);
    Dataset v = block(4);
    Dataset t = block(4);
    return ClientDataset(id, std::move(l), std::move(u.features), std::move(u.labels), std::move(v), std::move(t));
}

ClientState random_helper_client(std::uint64_t seed, std::size_t helpers, std::size_t points, std::size_t classes) {
    const bool ties = seed % 2 == 1;
    const auto spec = net({3, 5, classes}, ties ? 0.0 : 0.5);
    auto data = std::make_shared<const ClientDataset>(random_client(0, 3, classes, 6, points, derive_seed(seed, {0})));
    ClientState client(0, random_params(spec, derive_seed(seed, {1})), data, helpers, TrainingConfig{},
                       derive_seed(seed, {2}));
    Rng rng(derive_seed(seed, {3}));
    std::vector<std::size_t> ids;
    for (std::size_t j = 1; j < helpers; ++j) ids.push_back(j);
    rng.shuffle(ids);
    std::optional<ModelParams> first;
    for (std::size_t id : ids) {
        ModelParams p = random_params(spec, derive_seed(seed, {4, id}), 0.5 + rng.uniform());
        if (ties && first) p = *first;
        if (!first) first = p;
        client.helpers.add(HelperEntry{id, p, {}, rng.below(4)});
    }
    return client;
}

Federation make_federation(const DeskSetup& s) {
    const Dataset data = generate_synthetic(s.classes, s.per_class, 0.35, stream_seed(s.round.seed, Stream::synthetic));
    PartitionSpec ps;
    ps.client_count = s.round.clients;
    ps.alpha = s.alpha;
    ps.seed = stream_seed(s.round.seed, Stream::partition);
    std::vector<std::size_t> widths{data.features.cols};
    widths.insert(widths.end(), s.hidden.begin(), s.hidden.end());
    widths.push_back(s.classes);
    return setup_federation(build_clients(data, ps), net(widths), s.round, s.training);
}

}  // namespace fixture
