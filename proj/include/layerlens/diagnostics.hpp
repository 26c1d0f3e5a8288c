#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/data.hpp"
#include "layerlens/nn.hpp"

namespace layerlens {

enum class MetricKind {
    train_loss,
    test_loss,
    generalization_gap,
    resilience,
    train_accuracy,
    test_accuracy,
};

inline const char* metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::train_loss: return "train_loss";
        case MetricKind::test_loss: return "test_loss";
        case MetricKind::generalization_gap: return "generalization_gap";
        case MetricKind::resilience: return "resilience";
        case MetricKind::train_accuracy: return "train_accuracy";
        case MetricKind::test_accuracy: return "test_accuracy";
    }
    throw DomainError("metric_name: unknown MetricKind");
}

inline constexpr MetricKind kAllMetrics[] = {
    MetricKind::train_loss,       MetricKind::test_loss,
    MetricKind::generalization_gap, MetricKind::resilience,
    MetricKind::train_accuracy,   MetricKind::test_accuracy,
};

struct LayerDiagnostics {
    std::vector<double> utilization;                     // per layer
    std::vector<double> contribution_train_loss;         // per layer
    std::vector<double> contribution_test_loss;          // per layer
    std::vector<double> contribution_resilience;         // per layer
};

// l2 distance of layer `layer`'s trained weight matrix from its snapshot,
// over the flattened entries. Weights only; biases are excluded.
inline double layer_utilization(const ModelState& model, const InitSnapshot& snapshot,
                                int layer) {
    if (layer < 0 || layer >= model.arch.depth)
        throw DomainError("layer_utilization: layer index out of range");
    const Matrix& trained = model.layers[layer].weights;
    const Matrix& initial = snapshot.layers[layer].weights;
    if (trained.rows() != initial.rows() || trained.cols() != initial.cols())
        throw ShapeError("layer_utilization: snapshot shape mismatch");
    return (trained - initial).norm();
}

// Copy of the model with one layer's weights and bias restored from the
// snapshot. The input model is untouched.
inline ModelState reinit_layer(const ModelState& model, const InitSnapshot& snapshot,
                               int layer) {
    if (layer < 0 || layer >= model.arch.depth)
        throw DomainError("reinit_layer: layer index out of range");
    ModelState out = model;
    out.layers[layer] = snapshot.layers[layer];
    return out;
}

// Absolute train/test loss gap.
inline double generalization_gap(const ModelState& model, const LabeledDataset& train_data,
                                 const LabeledDataset& test_data) {
    if (train_data.dim() != test_data.dim() || train_data.class_count != test_data.class_count)
        throw ShapeError("generalization_gap: train/test dataset shape mismatch");
    const double train_loss = average_loss(model, train_data.features, train_data.labels).first;
    const double test_loss = average_loss(model, test_data.features, test_data.labels).first;
    return std::abs(train_loss - test_loss);
}

// Loss of the model on its own training features against the pre-corruption
// labels. Needs no test set.
inline double resilience(const ModelState& model, const LabeledDataset& corrupted_train) {
    return average_loss(model, corrupted_train.features, corrupted_train.recovered_labels).first;
}

// Evaluation context for layer_contribution: the (possibly corrupted)
// training set, and the clean test set for the test-side metrics.
struct EvalData {
    const LabeledDataset* train = nullptr;
    const LabeledDataset* test = nullptr;
};

inline double evaluate_metric(const ModelState& model, MetricKind kind, const EvalData& data) {
    switch (kind) {
        case MetricKind::train_loss:
            if (!data.train) throw DomainError("evaluate_metric: train data required");
            return average_loss(model, data.train->features, data.train->labels).first;
        case MetricKind::train_accuracy:
            if (!data.train) throw DomainError("evaluate_metric: train data required");
            return average_loss(model, data.train->features, data.train->labels).second;
        case MetricKind::test_loss:
            if (!data.test) throw DomainError("evaluate_metric: test data required");
            return average_loss(model, data.test->features, data.test->labels).first;
        case MetricKind::test_accuracy:
            if (!data.test) throw DomainError("evaluate_metric: test data required");
            return average_loss(model, data.test->features, data.test->labels).second;
        case MetricKind::generalization_gap:
            if (!data.train || !data.test)
                throw DomainError("evaluate_metric: train and test data required");
            return generalization_gap(model, *data.train, *data.test);
        case MetricKind::resilience:
            if (!data.train) throw DomainError("evaluate_metric: train data required");
            return resilience(model, *data.train);
    }
    throw DomainError("evaluate_metric: unknown MetricKind");
}

// M(model with layer reinitialized) - M(model). On a loss metric, positive
// means training that layer helped.
inline double layer_contribution(const ModelState& model, const InitSnapshot& snapshot,
                                 int layer, MetricKind metric, const EvalData& data) {
    const ModelState reverted = reinit_layer(model, snapshot, layer);
    return evaluate_metric(reverted, metric, data) - evaluate_metric(model, metric, data);
}

// Largest noise ratio whose mean final train loss is within epsilon; the
// operational estimate of effective model complexity for one architecture.
// Input pairs are (noise_ratio, mean final train loss over seeds).
inline std::optional<double> empirical_emc(
    const std::vector<std::pair<double, double>>& ratio_losses, double epsilon) {
    if (ratio_losses.empty()) throw DomainError("empirical_emc: empty record set");
    std::optional<double> best;
    for (const auto& [ratio, mean_loss] : ratio_losses)
        if (mean_loss <= epsilon && (!best || ratio > *best)) best = ratio;
    return best;
}

// Index of the row maximum; ties go to the smallest index.
inline std::size_t row_argmax(const std::vector<double>& values) {
    if (values.empty()) throw DomainError("row_argmax: empty row");
    for (double v : values)
        if (!std::isfinite(v)) throw DomainError("row_argmax: non-finite value");
    return static_cast<std::size_t>(
        std::max_element(values.begin(), values.end()) - values.begin());
}

// Per-noise-ratio interpolation-threshold trace: the argmax column (width
// index) of each row of a ratio x width metric grid.
inline std::vector<std::size_t> threshold_trace(const std::vector<std::vector<double>>& rows) {
    std::vector<std::size_t> trace;
    trace.reserve(rows.size());
    for (const auto& row : rows) trace.push_back(row_argmax(row));
    return trace;
}

namespace detail {

// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

// Spearman rank correlation (Pearson over average ranks).
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DomainError("spearman: length mismatch");
    if (xs.size() < 3) throw DomainError("spearman: need at least 3 points");
    const std::vector<double> rx = detail::average_ranks(xs);
    const std::vector<double> ry = detail::average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mean = (n + 1.0) / 2.0;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = rx[i] - mean;
        const double dy = ry[i] - mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DomainError("spearman: rank variance is zero (all values equal)");
    return sxy / std::sqrt(sxx * syy);
}

// All per-layer diagnostics for one trained model in one pass.
inline LayerDiagnostics compute_layer_diagnostics(const ModelState& model,
                                                  const InitSnapshot& snapshot,
                                                  const EvalData& data) {
    LayerDiagnostics diag;
    const int depth = model.arch.depth;
    diag.utilization.reserve(depth);
    for (int l = 0; l < depth; ++l)
        diag.utilization.push_back(layer_utilization(model, snapshot, l));

    const double base_train = evaluate_metric(model, MetricKind::train_loss, data);
    const double base_test = data.test ? evaluate_metric(model, MetricKind::test_loss, data) : 0.0;
    const double base_res = evaluate_metric(model, MetricKind::resilience, data);
    for (int l = 0; l < depth; ++l) {
        const ModelState reverted = reinit_layer(model, snapshot, l);
        diag.contribution_train_loss.push_back(
            evaluate_metric(reverted, MetricKind::train_loss, data) - base_train);
        diag.contribution_test_loss.push_back(
            data.test ? evaluate_metric(reverted, MetricKind::test_loss, data) - base_test : 0.0);
        diag.contribution_resilience.push_back(
            evaluate_metric(reverted, MetricKind::resilience, data) - base_res);
    }
    return diag;
}

}  // namespace layerlens
