#pragma once

#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/data.hpp"
#include "layerlens/diagnostics.hpp"
#include "layerlens/nn.hpp"

namespace layerlens {

// Restore the trailing k layers (weights and biases) from the snapshot.
inline ModelState rollback_last_k(const ModelState& model, const InitSnapshot& snapshot, int k) {
    const int depth = model.arch.depth;
    if (k < 0 || k > depth)
        throw DomainError("rollback_last_k: k must be in [0, depth]");
    ModelState out = model;
    for (int l = depth - k; l < depth; ++l) out.layers[l] = snapshot.layers[l];
    return out;
}

struct RollbackSelection {
    int best_k = 0;
    std::vector<double> holdout_losses;  // indexed by k, 0..depth
};

// Evaluate holdout loss for every rollback depth and pick the smallest k
// attaining the minimum.
inline RollbackSelection select_rollback(const ModelState& model, const InitSnapshot& snapshot,
                                         const LabeledDataset& holdout) {
    if (holdout.size() < 1) throw DomainError("select_rollback: empty holdout");
    RollbackSelection sel;
    const int depth = model.arch.depth;
    sel.holdout_losses.reserve(depth + 1);
    for (int k = 0; k <= depth; ++k) {
        const ModelState candidate = rollback_last_k(model, snapshot, k);
        sel.holdout_losses.push_back(
            average_loss(candidate, holdout.features, holdout.labels).first);
    }
    for (int k = 0; k <= depth; ++k)
        if (sel.holdout_losses[k] < sel.holdout_losses[sel.best_k]) sel.best_k = k;
    return sel;
}

}  // namespace layerlens
