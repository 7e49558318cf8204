#include "sparsemask/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sparsemask::oracles {

Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& kernel,
                            const std::vector<double>& bias, int stride, int padding) {
    if (x.c != kernel.c) throw std::runtime_error("naive_conv2d: channel mismatch");
    const int out_h = (x.h + 2 * padding - kernel.h) / stride + 1;
    const int out_w = (x.w + 2 * padding - kernel.w) / stride + 1;
    Tensor<double> out(x.n, kernel.n, out_h, out_w);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < kernel.n; ++co) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (int ci = 0; ci < x.c; ++ci) {
                        for (int ky = 0; ky < kernel.h; ++ky) {
                            for (int kx = 0; kx < kernel.w; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += kernel.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
                            }
                        }
                    }
                    out.at(n, co, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

Tensor<double> naive_bilinear(const Tensor<double>& x, int out_h, int out_w) {
    if (out_h < x.h || out_w < x.w) throw std::runtime_error("naive_bilinear: downsampling");
    Tensor<double> out(x.n, x.c, out_h, out_w);
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            for (int oy = 0; oy < out_h; ++oy) {
                const double py = static_cast<double>(oy) / out_h * x.h;
                const int y0 = std::min(static_cast<int>(std::floor(py)), x.h - 1);
                const int y1 = std::min(static_cast<int>(std::ceil(py)), x.h - 1);
                const double fy = py - std::floor(py);
                for (int ox = 0; ox < out_w; ++ox) {
                    const double px = static_cast<double>(ox) / out_w * x.w;
                    const int x0 = std::min(static_cast<int>(std::floor(px)), x.w - 1);
                    const int x1 = std::min(static_cast<int>(std::ceil(px)), x.w - 1);
                    const double fx = px - std::floor(px);
                    out.at(n, c, oy, ox) =
                        (1.0 - fy) * (1.0 - fx) * x.at(n, c, y0, x0) +
                        (1.0 - fy) * fx * x.at(n, c, y0, x1) +
                        fy * (1.0 - fx) * x.at(n, c, y1, x0) +
                        fy * fx * x.at(n, c, y1, x1);
                }
            }
        }
    }
    return out;
}

Tensor<double> naive_concat_conv(const std::vector<Tensor<double>>& inputs,
                                 const std::vector<Tensor<double>>& block_kernels, int stride,
                                 int padding) {
    if (inputs.empty() || inputs.size() != block_kernels.size()) {
        throw std::runtime_error("naive_concat_conv: need one kernel block per input");
    }
    int total_c = 0;
    for (std::size_t m = 0; m < inputs.size(); ++m) {
        const auto& in = inputs[m];
        const auto& k = block_kernels[m];
        if (in.n != inputs[0].n || in.h != inputs[0].h || in.w != inputs[0].w) {
            throw std::runtime_error("naive_concat_conv: input shape mismatch");
        }
        if (k.c != in.c || k.n != block_kernels[0].n || k.h != block_kernels[0].h ||
            k.w != block_kernels[0].w) {
            throw std::runtime_error("naive_concat_conv: kernel block mismatch");
        }
        total_c += in.c;
    }
    Tensor<double> cat(inputs[0].n, total_c, inputs[0].h, inputs[0].w);
    Tensor<double> kernel(block_kernels[0].n, total_c, block_kernels[0].h, block_kernels[0].w);
    int co = 0;
    for (std::size_t m = 0; m < inputs.size(); ++m) {
        const auto& in = inputs[m];
        const auto& k = block_kernels[m];
        for (int n = 0; n < in.n; ++n) {
            for (int c = 0; c < in.c; ++c) {
                for (int y = 0; y < in.h; ++y) {
                    for (int x = 0; x < in.w; ++x) cat.at(n, co + c, y, x) = in.at(n, c, y, x);
                }
            }
        }
        for (int o = 0; o < k.n; ++o) {
            for (int c = 0; c < k.c; ++c) {
                for (int y = 0; y < k.h; ++y) {
                    for (int x = 0; x < k.w; ++x) kernel.at(o, co + c, y, x) = k.at(o, c, y, x);
                }
            }
        }
        co += in.c;
    }
    return naive_conv2d(cat, kernel, {}, stride, padding);
}

Tensor<double> finite_diff(const std::function<double(const Tensor<double>&)>& loss_fn,
                           const Tensor<double>& at, double h) {
    Tensor<double> grad(at.n, at.c, at.h, at.w);
    Tensor<double> probe = at;
    for (std::size_t i = 0; i < at.numel(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double up = loss_fn(probe);
        probe.data[i] = orig - h;
        const double down = loss_fn(probe);
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
    if (!a.same_shape(b)) throw std::runtime_error("relative_error: shape mismatch");
    double max_diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
        scale = std::max({scale, std::abs(a.data[i]), std::abs(b.data[i])});
    }
    return max_diff / std::max(scale, 1e-6);
}

std::optional<PrunedGraph> reachability_prune(const GateMatrix& gm, double sigma) {
    const int L = gm.num_stages;
    // Rule 1: strict threshold, ties at sigma are kept.
    std::vector<std::pair<int, FeatureRef>> edges;
    for (const auto& e : gm.entries) {
        if (!(e.value < sigma)) edges.emplace_back(e.stage, e.source);
    }
    std::set<int> alive;
    for (int l = 1; l <= L; ++l) alive.insert(l);

    // Rules 2 and 3 rescanned from scratch until a full pass removes nothing.
    // Each pass evaluates every stage against the same alive snapshot and
    // removes the failures together, so the fixpoint has no order dependence.
    while (!alive.empty()) {
        const int output_stage = *alive.begin();
        std::set<int> doomed;
        for (int l : alive) {
            int in_degree = 0;
            int out_degree = 0;
            for (const auto& [stage, src] : edges) {
                if (stage == l &&
                    (src.kind != FeatureKind::decoder || alive.count(src.index))) {
                    ++in_degree;
                }
                if (src.kind == FeatureKind::decoder && src.index == l && alive.count(stage)) {
                    ++out_degree;
                }
            }
            const bool consumed = (l == output_stage) || out_degree > 0;
            if (in_degree == 0 || !consumed) doomed.insert(l);
        }
        if (doomed.empty()) break;
        for (int l : doomed) alive.erase(l);
    }
    if (alive.empty()) return std::nullopt;

    PrunedGraph out;
    out.output_stage = *alive.begin();
    for (int l : alive) out.stages.push_back(l);
    for (const auto& [stage, src] : edges) {
        if (!alive.count(stage)) continue;
        if (src.kind == FeatureKind::decoder && !alive.count(src.index)) continue;
        out.edges.emplace_back(stage, src);
    }
    return out;
}

}  // namespace sparsemask::oracles
