#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sparsemask/tensor.hpp"

namespace sparsemask::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    double max_err = 0.0;
    std::string detail;
};

using UpsampleFn = std::function<Tensor<double>(const Tensor<double>&, int, int)>;

// Theorem checks: concat-then-conv against conv-each-then-sum, and the
// order swap of pointwise convolution and bilinear upsampling.
CheckResult check_concat_conv_identity_double(int cases, double tol);
CheckResult check_concat_conv_identity_single(int cases, double tol);
CheckResult check_order_swap_identity_double(int cases, double tol);
CheckResult check_order_swap_identity_single(int cases, double tol);

// Same order-swap check with an injectable upsampling implementation; a
// wrong sampling convention must fail it.
CheckResult check_order_swap_identity_against(const UpsampleFn& upsample, int cases, double tol,
                                   const std::string& name);

// Autodiff gradients against central finite differences in double.
CheckResult check_grad_conv2d(int cases, double tol);
CheckResult check_grad_bilinear(int cases, double tol);
CheckResult check_grad_batch_norm(int cases, double tol);
CheckResult check_grad_global_avg_pool(int cases, double tol);
CheckResult check_grad_sigmoid_gates(int cases, double tol);
CheckResult check_grad_sparse_loss(int cases, double tol);
CheckResult check_grad_task_loss(int cases, double tol);

// Forward oracles and structural properties.
CheckResult check_conv_forward_oracle(int cases, double tol);
CheckResult check_bilinear_forward_oracle(int cases, double tol);
CheckResult check_upsample_identity();
CheckResult check_stage_concat_equivalence(double tol);
CheckResult check_pruner_against_oracle(int graphs);
CheckResult check_lr_schedule();
CheckResult check_candidate_counts();

// The full suite behind `sparsemask verify`.
std::vector<CheckResult> run_all_checks();

}  // namespace sparsemask::verify
