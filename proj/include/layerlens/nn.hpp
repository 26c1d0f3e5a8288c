#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Fully connected ReLU network: `depth` dense layers, ReLU after every
// layer except the last, hidden layers all of width `hidden_width`.
struct ArchSpec {
    int input_dim = 0;
    int output_dim = 0;   // class count K
    int hidden_width = 0;
    int depth = 5;

    void validate() const {
        if (input_dim < 1 || output_dim < 1 || hidden_width < 1)
            throw DomainError("ArchSpec: all dimensions must be >= 1");
        if (depth < 2) throw DomainError("ArchSpec: depth must be >= 2");
    }

    int layer_in(int layer) const { return layer == 0 ? input_dim : hidden_width; }
    int layer_out(int layer) const { return layer == depth - 1 ? output_dim : hidden_width; }

    bool operator==(const ArchSpec&) const = default;
};

struct Layer {
    Matrix weights;  // out x in
    Vector bias;     // out

    bool operator==(const Layer& other) const {
        return weights.rows() == other.weights.rows() && weights.cols() == other.weights.cols() &&
               bias.size() == other.bias.size() && weights.cwiseEqual(other.weights).all() &&
               bias.cwiseEqual(other.bias).all();
    }
};

struct ModelState {
    ArchSpec arch;
    std::vector<Layer> layers;

    bool operator==(const ModelState&) const = default;
};

// Frozen copy of the parameters at initialization time. Never mutated.
struct InitSnapshot {
    std::vector<Layer> layers;
};

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 1;
    int batch_size = 64;
    std::uint64_t init_seed = 0;
    std::uint64_t shuffle_seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning_rate must be > 0");
        if (epochs < 1) throw DomainError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
    }
};

// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
inline std::pair<ModelState, InitSnapshot> init_model(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 gen(seed);
    ModelState model;
    model.arch = arch;
    model.layers.resize(arch.depth);
    for (int l = 0; l < arch.depth; ++l) {
        const int fan_in = arch.layer_in(l);
        const int fan_out = arch.layer_out(l);
        const double bound = std::sqrt(6.0 / fan_in);
        Matrix w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c)
                w(r, c) = uniform_range(gen, -bound, bound);
        model.layers[l].weights = std::move(w);
        model.layers[l].bias = Vector::Zero(fan_out);
    }
    InitSnapshot snapshot{model.layers};
    return {std::move(model), std::move(snapshot)};
}

// Forward pass over a batch: rows of `features` are samples, returns logits.
inline Matrix forward(const ModelState& model, const Eigen::Ref<const Matrix>& features) {
    if (features.cols() != model.arch.input_dim)
        throw ShapeError("forward: feature width " + std::to_string(features.cols()) +
                         " != input_dim " + std::to_string(model.arch.input_dim));
    Matrix activations = features;
    const int depth = model.arch.depth;
    for (int l = 0; l < depth; ++l) {
        const Layer& layer = model.layers[l];
        activations = (activations * layer.weights.transpose()).rowwise() + layer.bias.transpose();
        if (l != depth - 1) activations = activations.cwiseMax(0.0);
    }
    return activations;
}

namespace detail {

// Row-wise log-softmax, numerically stable.
inline Matrix log_softmax(const Matrix& logits) {
    const Vector row_max = logits.rowwise().maxCoeff();
    Matrix shifted = logits.colwise() - row_max;
    const Vector log_sum = shifted.array().exp().rowwise().sum().log().matrix();
    return shifted.colwise() - log_sum;
}

}  // namespace detail

// Mean softmax cross-entropy and argmax accuracy over a labeled batch.
inline std::pair<double, double> average_loss(const ModelState& model,
                                              const Eigen::Ref<const Matrix>& features,
                                              const std::vector<std::uint16_t>& labels) {
    const auto n = features.rows();
    if (n < 1) throw DomainError("average_loss: empty dataset");
    if (static_cast<std::size_t>(n) != labels.size())
        throw ShapeError("average_loss: feature/label count mismatch");
    const Matrix logits = forward(model, features);
    const Matrix log_probs = detail::log_softmax(logits);
    double loss = 0.0;
    long correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= model.arch.output_dim)
            throw DomainError("average_loss: label out of range");
        loss -= log_probs(i, y);
        Eigen::Index argmax;
        logits.row(i).maxCoeff(&argmax);
        if (argmax == y) ++correct;
    }
    return {loss / static_cast<double>(n),
            static_cast<double>(correct) / static_cast<double>(n)};
}

namespace detail {

// Backprop for softmax cross-entropy through the dense stack. Returns the
// mean batch loss; accumulates gradients into `grads` (same shapes as model).
inline double backward_batch(const ModelState& model,
                             const Eigen::Ref<const Matrix>& features,
                             const std::vector<std::uint16_t>& labels,
                             std::vector<Layer>& grads) {
    const int depth = model.arch.depth;
    const auto n = features.rows();

    // Forward, keeping post-activation outputs of every layer.
    std::vector<Matrix> outputs(depth);
    {
        Matrix a = features;
        for (int l = 0; l < depth; ++l) {
            const Layer& layer = model.layers[l];
            a = (a * layer.weights.transpose()).rowwise() + layer.bias.transpose();
            if (l != depth - 1) a = a.cwiseMax(0.0);
            outputs[l] = a;
        }
    }

    const Matrix log_probs = log_softmax(outputs[depth - 1]);
    double loss = 0.0;
    // dL/dlogits = (softmax - onehot) / n
    Matrix delta = log_probs.array().exp().matrix();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        loss -= log_probs(i, labels[i]);
        delta(i, labels[i]) -= 1.0;
    }
    delta *= inv_n;
    loss *= inv_n;

    for (int l = depth - 1; l >= 0; --l) {
        if (l == 0)
            grads[l].weights.noalias() = delta.transpose() * features;
        else
            grads[l].weights.noalias() = delta.transpose() * outputs[l - 1];
        grads[l].bias.noalias() = delta.colwise().sum().transpose();
        if (l > 0) {
            delta = delta * model.layers[l].weights;
            // ReLU mask from the stored post-activation of the previous layer
            delta = (outputs[l - 1].array() > 0.0).select(delta, 0.0);
        }
    }
    return loss;
}

}  // namespace detail

// One SGD pass over a seeded shuffle of the data in mini-batches. The shuffle
// engine is owned by the caller so consecutive epochs draw distinct orders.
inline double sgd_epoch(ModelState& model,
                        const Eigen::Ref<const Matrix>& features,
                        const std::vector<std::uint16_t>& labels,
                        double learning_rate, int batch_size,
                        std::mt19937_64& shuffle_gen, int epoch_index = 0) {
    const auto n = features.rows();
    if (n < 1) throw DomainError("sgd_epoch: empty dataset");

    std::vector<std::uint32_t> order(n);
    for (Eigen::Index i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    shuffle_in_place(shuffle_gen, order);

    std::vector<Layer> grads(model.arch.depth);
    for (int l = 0; l < model.arch.depth; ++l) {
        grads[l].weights.resize(model.layers[l].weights.rows(), model.layers[l].weights.cols());
        grads[l].bias.resize(model.layers[l].bias.size());
    }

    double loss_sum = 0.0;
    Eigen::Index samples_seen = 0;
    Matrix batch_features;
    std::vector<std::uint16_t> batch_labels;
    for (Eigen::Index start = 0; start < n; start += batch_size) {
        const Eigen::Index count = std::min<Eigen::Index>(batch_size, n - start);
        batch_features.resize(count, features.cols());
        batch_labels.resize(count);
        for (Eigen::Index i = 0; i < count; ++i) {
            batch_features.row(i) = features.row(order[start + i]);
            batch_labels[i] = labels[order[start + i]];
        }
        const double batch_loss =
            detail::backward_batch(model, batch_features, batch_labels, grads);
        if (!std::isfinite(batch_loss)) throw DivergedError(epoch_index);
        for (int l = 0; l < model.arch.depth; ++l) {
            model.layers[l].weights.noalias() -= learning_rate * grads[l].weights;
            model.layers[l].bias.noalias() -= learning_rate * grads[l].bias;
        }
        loss_sum += batch_loss * static_cast<double>(count);
        samples_seen += count;
    }
    const double epoch_loss = loss_sum / static_cast<double>(samples_seen);
    if (!std::isfinite(epoch_loss)) throw DivergedError(epoch_index);
    for (const Layer& layer : model.layers)
        if (!layer.weights.allFinite() || !layer.bias.allFinite())
            throw DivergedError(epoch_index);
    return epoch_loss;
}

// Fixed-budget training loop; history has exactly config.epochs entries.
inline std::vector<double> train(ModelState& model,
                                 const Eigen::Ref<const Matrix>& features,
                                 const std::vector<std::uint16_t>& labels,
                                 const TrainConfig& config) {
    config.validate();
    std::mt19937_64 shuffle_gen(config.shuffle_seed);
    std::vector<double> history;
    history.reserve(config.epochs);
    for (int epoch = 0; epoch < config.epochs; ++epoch)
        history.push_back(sgd_epoch(model, features, labels, config.learning_rate,
                                    config.batch_size, shuffle_gen, epoch));
    return history;
}

// Central finite-difference check of the analytic gradient. Returns the max
// relative error over all parameters, with an absolute fallback when both
// sides vanish. Intended for small nets only.
inline double gradient_check(const ModelState& model,
                             const Eigen::Ref<const Matrix>& features,
                             const std::vector<std::uint16_t>& labels,
                             double epsilon = 1e-5) {
    std::vector<Layer> grads(model.arch.depth);
    for (int l = 0; l < model.arch.depth; ++l) {
        grads[l].weights.resize(model.layers[l].weights.rows(), model.layers[l].weights.cols());
        grads[l].bias.resize(model.layers[l].bias.size());
    }
    detail::backward_batch(model, features, labels, grads);

    ModelState probe = model;
    double max_err = 0.0;
    auto check_param = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + epsilon;
        const double loss_hi = average_loss(probe, features, labels).first;
        param = saved - epsilon;
        const double loss_lo = average_loss(probe, features, labels).first;
        param = saved;
        const double numeric = (loss_hi - loss_lo) / (2.0 * epsilon);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double err = scale < 1e-10 ? std::abs(analytic - numeric)
                                         : std::abs(analytic - numeric) / scale;
        max_err = std::max(max_err, err);
    };
    for (int l = 0; l < model.arch.depth; ++l) {
        Layer& layer = probe.layers[l];
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
                check_param(layer.weights(r, c), grads[l].weights(r, c));
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
            check_param(layer.bias(r), grads[l].bias(r));
    }
    return max_err;
}

}  // namespace layerlens
