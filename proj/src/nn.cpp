#include "pfssl/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pfssl/errors.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "relu";
}

Activation activation_from_string(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity") return Activation::identity;
    throw DomainError("unknown activation '" + std::string(name) + "'");
}

void NetSpec::validate() const {
    if (layer_widths.size() < 2) throw DomainError("network needs at least input and output widths");
    for (std::size_t w : layer_widths) {
        if (w == 0) throw DomainError("layer widths must be positive");
    }
    if (layer_widths.back() < 2) throw DomainError("class count must be at least 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
}

std::size_t NetSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
        n += layer_widths[l + 1] * (layer_widths[l] + 1);
    }
    return n;
}

std::size_t NetSpec::weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) {
        off += layer_widths[l + 1] * (layer_widths[l] + 1);
    }
    return off;
}

ModelParams::ModelParams(std::shared_ptr<const NetSpec> spec) : spec_(std::move(spec)) {
    spec_->validate();
    values_.assign(spec_->parameter_count(), 0.0);
}

ModelParams::ModelParams(std::shared_ptr<const NetSpec> spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
    spec_->validate();
    if (values_.size() != spec_->parameter_count()) {
        throw ShapeError("parameter vector length does not match the network layout");
    }
    if (!all_finite()) throw NumericError("parameter vector contains non-finite entries");
}

bool ModelParams::same_layout(const ModelParams& other) const noexcept {
    return spec_ == other.spec_ || *spec_ == *other.spec_;
}

bool ModelParams::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ModelParams init_params(std::shared_ptr<const NetSpec> spec, std::uint64_t seed) {
    ModelParams params(spec);
    Rng rng(seed);
    auto v = params.values();
    for (std::size_t l = 0; l < spec->layer_count(); ++l) {
        const std::size_t in = spec->layer_widths[l];
        const std::size_t out = spec->layer_widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        const std::size_t off = spec->weight_offset(l);
        for (std::size_t i = 0; i < in * out; ++i) {
            v[off + i] = (2.0 * rng.uniform() - 1.0) * bound;
        }
    }
    return params;
}

bool dropout_keeps(std::uint64_t seed, std::size_t layer, std::size_t unit, double rate) noexcept {
    if (rate <= 0.0) return true;
    Rng rng(derive_seed(seed, {layer, unit}));
    return rng.uniform() >= rate;
}

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through the pre-activation.
double activate_grad(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

// Per-layer intermediate values kept for the backward pass.
struct ForwardTrace {
    std::vector<std::vector<double>> inputs;  // input to layer l (after dropout)
    std::vector<std::vector<double>> pre;     // pre-activation of layer l
    std::vector<std::vector<double>> scale;   // dropout multiplier per hidden unit
    std::vector<double> probs;
};

void check_input(const NetSpec& spec, std::span<const double> x) {
    if (x.size() != spec.input_dim()) {
        throw ShapeError("input has " + std::to_string(x.size()) + " features, network expects " +
                         std::to_string(spec.input_dim()));
    }
}

template <typename ScaleOf>
void run_forward(const ModelParams& params, std::span<const double> x, ScaleOf&& scale_of, ForwardTrace& tr) {
    const NetSpec& spec = params.spec();
    check_input(spec, x);
    const auto v = params.values();
    const std::size_t layers = spec.layer_count();
    tr.inputs.assign(layers, {});
    tr.pre.assign(layers, {});
    tr.scale.assign(layers > 0 ? layers - 1 : 0, {});
    tr.inputs[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = spec.layer_widths[l];
        const std::size_t out = spec.layer_widths[l + 1];
        const std::size_t off = spec.weight_offset(l);
        const double* w = v.data() + off;
        const double* b = w + in * out;
        const auto& a = tr.inputs[l];
        auto& z = tr.pre[l];
        z.resize(out);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* row = w + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += row[i] * a[i];
            if (!std::isfinite(acc)) throw NumericError("non-finite activation in forward pass");
            z[o] = acc;
        }
        if (l + 1 < layers) {
            auto& s = tr.scale[l];
            s.resize(out);
            auto& next = tr.inputs[l + 1];
            next.resize(out);
            for (std::size_t o = 0; o < out; ++o) {
                s[o] = scale_of(l, o);
                next[o] = activate(spec.activation, z[o]) * s[o];
            }
        }
    }
    tr.probs = softmax(tr.pre.back());
}

void forward_with_mode(const ModelParams& params, std::span<const double> x, ForwardMode mode, ForwardTrace& tr) {
    const double rate = params.spec().dropout_rate;
    if (!mode.is_dropout() || rate <= 0.0) {
        run_forward(params, x, [](std::size_t, std::size_t) { return 1.0; }, tr);
        return;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    const std::uint64_t seed = mode.seed();
    run_forward(params, x,
                [&](std::size_t l, std::size_t o) { return dropout_keeps(seed, l, o, rate) ? keep_scale : 0.0; },
                tr);
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        p[c] = std::exp(logits[c] - m);
        sum += p[c];
    }
    for (double& q : p) q /= sum;
    return p;
}

std::vector<double> forward_logits(const ModelParams& params, std::span<const double> x, ForwardMode mode) {
    ForwardTrace tr;
    forward_with_mode(params, x, mode, tr);
    return tr.pre.back();
}

std::vector<double> forward_logits_masked(const ModelParams& params, std::span<const double> x,
                                          const std::vector<std::vector<std::uint8_t>>& masks) {
    const NetSpec& spec = params.spec();
    if (masks.size() + 1 != spec.layer_count()) throw ShapeError("one mask per hidden layer is required");
    for (std::size_t l = 0; l < masks.size(); ++l) {
        if (masks[l].size() != spec.layer_widths[l + 1]) throw ShapeError("mask width mismatch");
    }
    const double keep_scale = 1.0 / (1.0 - spec.dropout_rate);
    ForwardTrace tr;
    run_forward(params, x, [&](std::size_t l, std::size_t o) { return masks[l][o] ? keep_scale : 0.0; }, tr);
    return tr.pre.back();
}

PredictiveDistribution forward(const ModelParams& params, std::span<const double> x, ForwardMode mode) {
    ForwardTrace tr;
    forward_with_mode(params, x, mode, tr);
    return PredictiveDistribution(std::move(tr.probs));
}

double cross_entropy(std::span<const double> pred, std::size_t label) {
    if (label >= pred.size()) throw DomainError("label out of range");
    return -std::log(std::max(pred[label], kLogClamp));
}

double cross_entropy(const PredictiveDistribution& pred, std::size_t label) {
    return cross_entropy(pred.probs(), label);
}

double kl_divergence(std::span<const double> student, std::span<const double> target) {
    if (student.size() != target.size()) throw DomainError("distribution lengths differ");
    double kl = 0.0;
    for (std::size_t c = 0; c < target.size(); ++c) {
        if (target[c] <= 0.0) continue;
        kl += target[c] * (std::log(std::max(target[c], kLogClamp)) - std::log(std::max(student[c], kLogClamp)));
    }
    return kl;
}

double kl_divergence(const PredictiveDistribution& student, const PredictiveDistribution& target) {
    return kl_divergence(student.probs(), target.probs());
}

namespace {

void check_example(const NetSpec& spec, const Example& ex, LossKind kind) {
    if (kind == LossKind::cross_entropy) {
        if (ex.label >= spec.class_count()) throw DomainError("label out of range");
    } else if (ex.target.size() != spec.class_count()) {
        throw DomainError("KL target length does not match class count");
    }
}

}  // namespace

LossGradient loss_and_gradient(const ModelParams& params, std::span<const Example> batch, LossKind kind) {
    if (batch.empty()) throw DomainError("empty batch");
    const NetSpec& spec = params.spec();
    const auto v = params.values();
    const std::size_t layers = spec.layer_count();
    const std::size_t classes = spec.class_count();

    LossGradient out;
    out.gradient.assign(params.size(), 0.0);
    ForwardTrace tr;
    std::vector<double> dz;
    std::vector<double> da;
    std::vector<double> onehot(classes, 0.0);

    for (const Example& ex : batch) {
        check_example(spec, ex, kind);
        forward_with_mode(params, ex.features, ex.mode, tr);
        const auto& p = tr.probs;

        std::span<const double> target;
        if (kind == LossKind::cross_entropy) {
            std::fill(onehot.begin(), onehot.end(), 0.0);
            onehot[ex.label] = 1.0;
            target = onehot;
            out.loss += cross_entropy(p, ex.label);
        } else {
            target = ex.target;
            out.loss += kl_divergence(p, target);
        }

        // d/dz_j of -sum_c t_c log max(p_c, eps): clamped classes carry no gradient.
        double active_mass = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (p[c] > kLogClamp) active_mass += target[c];
        }
        dz.resize(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            dz[c] = p[c] * active_mass - (p[c] > kLogClamp ? target[c] : 0.0);
        }

        for (std::size_t l = layers; l-- > 0;) {
            const std::size_t in = spec.layer_widths[l];
            const std::size_t outw = spec.layer_widths[l + 1];
            const std::size_t off = spec.weight_offset(l);
            double* gw = out.gradient.data() + off;
            double* gb = gw + in * outw;
            const auto& a = tr.inputs[l];
            for (std::size_t o = 0; o < outw; ++o) {
                const double d = dz[o];
                gb[o] += d;
                double* grow = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
            }
            if (l == 0) break;
            const double* w = v.data() + off;
            da.assign(in, 0.0);
            for (std::size_t o = 0; o < outw; ++o) {
                const double d = dz[o];
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) da[i] += row[i] * d;
            }
            const auto& zprev = tr.pre[l - 1];
            const auto& sprev = tr.scale[l - 1];
            dz.resize(in);
            for (std::size_t i = 0; i < in; ++i) {
                dz[i] = da[i] * sprev[i] * activate_grad(spec.activation, zprev[i]);
            }
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    for (double& g : out.gradient) g *= inv;
    return out;
}

std::vector<double> backward(const ModelParams& params, std::span<const Example> batch, LossKind kind) {
    return loss_and_gradient(params, batch, kind).gradient;
}

double batch_loss(const ModelParams& params, std::span<const Example> batch, LossKind kind) {
    if (batch.empty()) throw DomainError("empty batch");
    double total = 0.0;
    for (const Example& ex : batch) {
        check_example(params.spec(), ex, kind);
        const auto pred = forward(params, ex.features, ex.mode);
        total += kind == LossKind::cross_entropy ? cross_entropy(pred, ex.label) : kl_divergence(pred.probs(), ex.target);
    }
    return total / static_cast<double>(batch.size());
}

OptimState::OptimState(std::size_t param_count, double lr, double mom)
    : momentum_buffer(param_count, 0.0), learning_rate(lr), momentum(mom) {}

void sgd_step(ModelParams& params, std::span<const double> grads, OptimState& opt) {
    if (grads.size() != params.size() || opt.momentum_buffer.size() != params.size()) {
        throw DomainError("gradient, momentum buffer and parameters must have equal length");
    }
    auto v = params.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        opt.momentum_buffer[i] = opt.momentum * opt.momentum_buffer[i] + grads[i];
        v[i] -= opt.learning_rate * opt.momentum_buffer[i];
    }
}

}  // namespace pfssl
