#pragma once

// Multilayer perceptron with inverted dropout after every hidden layer and a
// softmax output. Parameters live in one flat vector, layer-major: for each
// layer the weight matrix (out x in, row-major) followed by its bias vector.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfssl/distribution.hpp"

namespace pfssl {

inline constexpr double kLogClamp = 1e-12;

enum class Activation { relu, tanh, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct NetSpec {
    std::vector<std::size_t> layer_widths;
    double dropout_rate = 0.5;
    Activation activation = Activation::relu;

    void validate() const;

    std::size_t input_dim() const { return layer_widths.front(); }
    std::size_t class_count() const { return layer_widths.back(); }
    std::size_t layer_count() const { return layer_widths.size() - 1; }
    std::size_t parameter_count() const;

    // Offset of layer l's weights in the flat vector; its bias follows the
    // out*in weights.
    std::size_t weight_offset(std::size_t layer) const;

    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

class ModelParams {
public:
    explicit ModelParams(std::shared_ptr<const NetSpec> spec);
    ModelParams(std::shared_ptr<const NetSpec> spec, std::vector<double> values);

    const NetSpec& spec() const noexcept { return *spec_; }
    const std::shared_ptr<const NetSpec>& spec_ptr() const noexcept { return spec_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    bool same_layout(const ModelParams& other) const noexcept;
    bool all_finite() const noexcept;

    // Bitwise equality of the values and equal layouts.
    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        return a.same_layout(b) && a.values_ == b.values_;
    }

private:
    std::shared_ptr<const NetSpec> spec_;
    std::vector<double> values_;
};

// Glorot-uniform weights, zero biases.
ModelParams init_params(std::shared_ptr<const NetSpec> spec, std::uint64_t seed);

class ForwardMode {
public:
    static ForwardMode deterministic() noexcept { return ForwardMode(false, 0); }
    static ForwardMode dropout_sample(std::uint64_t seed) noexcept { return ForwardMode(true, seed); }

    bool is_dropout() const noexcept { return dropout_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    ForwardMode(bool d, std::uint64_t s) : dropout_(d), seed_(s) {}
    bool dropout_;
    std::uint64_t seed_;
};

// Whether hidden unit `unit` of hidden layer `layer` survives under `seed`.
bool dropout_keeps(std::uint64_t seed, std::size_t layer, std::size_t unit, double rate) noexcept;

std::vector<double> forward_logits(const ModelParams& params, std::span<const double> x, ForwardMode mode);

// Explicit per-hidden-layer keep masks (1 keep, 0 drop), scaled by 1/(1-rate).
std::vector<double> forward_logits_masked(const ModelParams& params, std::span<const double> x,
                                          const std::vector<std::vector<std::uint8_t>>& masks);

PredictiveDistribution forward(const ModelParams& params, std::span<const double> x, ForwardMode mode);

std::vector<double> softmax(std::span<const double> logits);

double cross_entropy(std::span<const double> pred, std::size_t label);
double cross_entropy(const PredictiveDistribution& pred, std::size_t label);

// Sum_c target[c] * (log target[c] - log student[c]), both logs clamped at 1e-12.
double kl_divergence(std::span<const double> student, std::span<const double> target);
double kl_divergence(const PredictiveDistribution& student, const PredictiveDistribution& target);

enum class LossKind { cross_entropy, kl_divergence };

struct Example {
    std::span<const double> features;
    std::size_t label = 0;             // cross-entropy target
    std::span<const double> target;    // KL target distribution
    ForwardMode mode = ForwardMode::deterministic();
};

struct LossGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

// Mean batch loss and its gradient; samples are reduced in index order.
LossGradient loss_and_gradient(const ModelParams& params, std::span<const Example> batch, LossKind kind);
std::vector<double> backward(const ModelParams& params, std::span<const Example> batch, LossKind kind);
double batch_loss(const ModelParams& params, std::span<const Example> batch, LossKind kind);

struct OptimState {
    std::vector<double> momentum_buffer;
    double learning_rate = 1e-4;
    double momentum = 0.9;

    OptimState() = default;
    OptimState(std::size_t param_count, double lr, double mom);
};

// buffer <- momentum * buffer + grads; params <- params - lr * buffer.
void sgd_step(ModelParams& params, std::span<const double> grads, OptimState& opt);

}  // namespace pfssl
