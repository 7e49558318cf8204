#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "sparsemask/ops.hpp"

namespace sparsemask {

struct SparseLossConfig {
    double lambda = 0.01;                // balance between task loss and sparse loss
    double clamp_eps = 1e-6;             // log-argument clamp
    std::vector<double> alpha_override;  // optional per-stage sparsity ratios

    void validate() const {
        if (lambda < 0.0) throw std::runtime_error("sparse loss: lambda must be >= 0");
        if (clamp_eps <= 0.0 || clamp_eps > 1e-3) {
            throw std::runtime_error("sparse loss: clamp_eps must be in (0, 1e-3]");
        }
    }
};

// Sparsity ratio for a stage with the given candidate count:
//   alpha = min(2/count, 0.5)
// so that a stage tends to keep about two input features.
inline double alpha_for_stage(int candidate_count) {
    if (candidate_count < 1) {
        throw std::runtime_error("alpha_for_stage: candidate count must be >= 1");
    }
    return std::min(2.0 / static_cast<double>(candidate_count), 0.5);
}

// Per-stage sparse loss over the gate vector w (shape (1,k,1,1)):
//   mean(lm(w, w)) + lm(alpha, mean(w))
// The first term drives each gate toward {0,1}; the second pins the stage
// mean at alpha.
template <typename T>
ad::Var<T> sparse_loss(const ad::Var<T>& gates, double alpha, double clamp_eps = 1e-6) {
    if (!gates.defined() || gates.value().numel() == 0) {
        throw std::runtime_error("sparse_loss: empty gate vector");
    }
    ad::Var<T> binarize = ad::mean(ad::lm(gates, gates, clamp_eps));
    ad::Var<T> mean_term = ad::lm(alpha, ad::mean(gates), clamp_eps);
    return ad::add(binarize, mean_term);
}

// Total objective: task + lambda * sum_l sparse_loss(w_l, alpha_l).
// alpha_l defaults to the candidate-count rule unless overridden.
template <typename T>
ad::Var<T> total_loss(const ad::Var<T>& task, const std::vector<ad::Var<T>>& gates_by_stage,
                      const SparseLossConfig& cfg) {
    cfg.validate();
    if (cfg.lambda == 0.0 || gates_by_stage.empty()) return task;
    if (!cfg.alpha_override.empty() && cfg.alpha_override.size() != gates_by_stage.size()) {
        throw std::runtime_error("total_loss: alpha_override size does not match stage count");
    }
    ad::Var<T> reg;
    for (std::size_t i = 0; i < gates_by_stage.size(); ++i) {
        const int count = static_cast<int>(gates_by_stage[i].value().numel());
        const double alpha =
            cfg.alpha_override.empty() ? alpha_for_stage(count) : cfg.alpha_override[i];
        ad::Var<T> term = sparse_loss(gates_by_stage[i], alpha, cfg.clamp_eps);
        reg = reg.defined() ? ad::add(reg, term) : term;
    }
    return ad::add(task, ad::scale_const(reg, cfg.lambda));
}

// L1 comparison baseline: task + lambda * sum_l mean(|w_l|). Gates live in
// (0,1), so |w| == w; the per-stage mean mirrors the normalization of the
// sparse loss, giving both regularizers the same lambda budget per stage.
template <typename T>
ad::Var<T> total_loss_l1(const ad::Var<T>& task, const std::vector<ad::Var<T>>& gates_by_stage,
                         double lambda) {
    if (lambda == 0.0 || gates_by_stage.empty()) return task;
    ad::Var<T> reg;
    for (const auto& g : gates_by_stage) {
        ad::Var<T> term = ad::mean(g);
        reg = reg.defined() ? ad::add(reg, term) : term;
    }
    return ad::add(task, ad::scale_const(reg, lambda));
}

}  // namespace sparsemask
