#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sparsemask/encoder_spec.hpp"
#include "sparsemask/gates.hpp"
#include "sparsemask/tensor.hpp"

namespace sparsemask::oracles {

// Brute-force references used by tests and the verification suite. These are
// deliberately separate loop-level implementations; they never touch the
// fast-path code.

// Direct 6-loop convolution, double precision.
Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& kernel,
                            const std::vector<double>& bias, int stride, int padding);

// Per-pixel evaluation of the upsampling formula:
//   in = out/out_size*in_size, corners floor/ceil (ceil clamped), weights
//   (1-frac)/frac per axis.
Tensor<double> naive_bilinear(const Tensor<double>& x, int out_h, int out_w);

// Concatenates the inputs channel-wise and convolves once with the kernel
// assembled from per-input blocks.
Tensor<double> naive_concat_conv(const std::vector<Tensor<double>>& inputs,
                                 const std::vector<Tensor<double>>& block_kernels, int stride,
                                 int padding);

// Central finite differences of a scalar loss, element by element.
Tensor<double> finite_diff(const std::function<double(const Tensor<double>&)>& loss_fn,
                           const Tensor<double>& at, double h = 1e-3);

// Max absolute difference normalized by the overall gradient scale.
double relative_error(const Tensor<double>& a, const Tensor<double>& b);

// ---------------------------------------------------------------------------
// pruning oracle
// ---------------------------------------------------------------------------

// Connectivity result shared with the pruner for equivalence checks.
struct PrunedGraph {
    std::vector<int> stages;                                   // ascending
    std::vector<std::pair<int, FeatureRef>> edges;             // (stage, source)
    int output_stage = 0;

    bool operator==(const PrunedGraph& o) const {
        return stages == o.stages && output_stage == o.output_stage && edges == o.edges;
    }
};

// Exhaustive worklist application of the pruning rules: drop sub-sigma
// edges, then repeatedly drop input-less stages and stages nobody consumes
// (the current output stage counts as consumed). Returns nullopt when every
// stage dies.
std::optional<PrunedGraph> reachability_prune(const GateMatrix& gm, double sigma);

}  // namespace sparsemask::oracles
