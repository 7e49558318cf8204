#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "sparsemask/autodiff.hpp"
#include "sparsemask/gemm.hpp"
#include "sparsemask/tensor.hpp"
#include "sparsemask/thread_pool.hpp"

namespace sparsemask::ad {

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvGeom {
    int stride = 1;
    int padding = 0;
};

namespace detail {

// Per-thread scratch for im2col patches; persists across calls so the hot
// loop never goes back to the allocator.
template <typename T>
T* scratch(int slot, std::size_t count) {
    thread_local std::vector<T> buffers[2];
    auto& buf = buffers[slot];
    if (buf.size() < count) buf.resize(count);
    return buf.data();
}

// im2col row order is (c_in, kh, kw): channel-major, then kernel position.
// This fixes the reduction order of the convolution sum.
template <typename T>
void im2col(const Tensor<T>& x, int sample, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* col) {
    const int cin = x.c, ih = x.h, iw = x.w;
    const std::size_t plane = static_cast<std::size_t>(ih) * iw;
    const T* base = x.data.data() + static_cast<std::size_t>(sample) * cin * plane;
    std::size_t r = 0;
    for (int c = 0; c < cin; ++c) {
        const T* chan = base + c * plane;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                T* dst = col + r * static_cast<std::size_t>(out_h) * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int sy = oy * stride + ky - pad;
                    if (sy < 0 || sy >= ih) {
                        for (int ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = T(0);
                        continue;
                    }
                    const T* srow = chan + static_cast<std::size_t>(sy) * iw;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int sx = ox * stride + kx - pad;
                        dst[oy * out_w + ox] = (sx >= 0 && sx < iw) ? srow[sx] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int sample, int cin, int ih, int iw, int kh, int kw,
                int stride, int pad, int out_h, int out_w, Tensor<T>& dx) {
    const std::size_t plane = static_cast<std::size_t>(ih) * iw;
    T* base = dx.data.data() + static_cast<std::size_t>(sample) * cin * plane;
    std::size_t r = 0;
    for (int c = 0; c < cin; ++c) {
        T* chan = base + c * plane;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const T* src = col + r * static_cast<std::size_t>(out_h) * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int sy = oy * stride + ky - pad;
                    if (sy < 0 || sy >= ih) continue;
                    T* drow = chan + static_cast<std::size_t>(sy) * iw;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int sx = ox * stride + kx - pad;
                        if (sx >= 0 && sx < iw) drow[sx] += src[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeom geom) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = weight.value();
    if (xv.c != wv.c) {
        throw std::runtime_error("conv2d: input channels do not match kernel, input " +
                                 xv.shape_str() + " vs kernel " + wv.shape_str());
    }
    if (geom.stride < 1 || geom.padding < 0) {
        throw std::runtime_error("conv2d: invalid stride/padding");
    }
    const int kh = wv.h, kw = wv.w, cout = wv.n;
    const int out_h = (xv.h + 2 * geom.padding - kh) / geom.stride + 1;
    const int out_w = (xv.w + 2 * geom.padding - kw) / geom.stride + 1;
    if (out_h < 1 || out_w < 1 || xv.h + 2 * geom.padding < kh || xv.w + 2 * geom.padding < kw) {
        throw std::runtime_error("conv2d: kernel " + wv.shape_str() +
                                 " does not fit input " + xv.shape_str());
    }
    if (bias.defined() && bias.value().numel() != static_cast<std::size_t>(cout)) {
        throw std::runtime_error("conv2d: bias size does not match output channels");
    }

    const int ksize = xv.c * kh * kw;
    const int pixels = out_h * out_w;
    Tensor<T> out(xv.n, cout, out_h, out_w);

    parallel_for(0, xv.n, [&](int s) {
        T* col = detail::scratch<T>(0, static_cast<std::size_t>(ksize) * pixels);
        detail::im2col(xv, s, kh, kw, geom.stride, geom.padding, out_h, out_w, col);
        T* dst = out.data.data() + static_cast<std::size_t>(s) * cout * pixels;
        gemm_ab(cout, ksize, pixels, wv.data.data(), col, dst);
        if (bias.defined()) {
            const Tensor<T>& bv = bias.value();
            for (int co = 0; co < cout; ++co) {
                const T bval = bv.data[co];
                T* row = dst + static_cast<std::size_t>(co) * pixels;
                for (int p = 0; p < pixels; ++p) row[p] += bval;
            }
        }
    });

    std::vector<std::shared_ptr<Node<T>>> parents = {x.ptr(), weight.ptr()};
    if (bias.defined()) parents.push_back(bias.ptr());
    ConvGeom g = geom;
    return make_op<T>(std::move(out), std::move(parents), [g, kh, kw, cout, ksize, pixels,
                                                           out_h, out_w](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        Node<T>* wn = n.parents[1].get();
        Node<T>* bn = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        const Tensor<T>& xv = xn->value;
        const Tensor<T>& wv = wn->value;
        const Tensor<T>& gy = n.grad;
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        const bool need_db = bn && bn->requires_grad;
        if (need_dx) xn->ensure_grad();

        // Per-sample weight-gradient partials are reduced in sample order so
        // the result is independent of the worker count.
        std::vector<std::vector<T>> dw_part;
        if (need_dw) dw_part.assign(xv.n, std::vector<T>(wv.numel(), T(0)));

        parallel_for(0, xv.n, [&](int s) {
            const std::size_t patch = static_cast<std::size_t>(ksize) * pixels;
            T* col = detail::scratch<T>(0, patch);
            detail::im2col(xv, s, kh, kw, g.stride, g.padding, out_h, out_w, col);
            const T* gslice = gy.data.data() + static_cast<std::size_t>(s) * cout * pixels;
            if (need_dw) {
                gemm_abt(cout, pixels, ksize, gslice, col, dw_part[s].data());
            }
            if (need_dx) {
                T* dcol = detail::scratch<T>(1, patch);
                std::fill(dcol, dcol + patch, T(0));
                gemm_atb(cout, ksize, pixels, wv.data.data(), gslice, dcol);
                detail::col2im_add(dcol, s, xv.c, xv.h, xv.w, kh, kw, g.stride,
                                   g.padding, out_h, out_w, xn->grad);
            }
        });

        if (need_dw) {
            Tensor<T>& dw = wn->grad;
            for (int s = 0; s < xv.n; ++s) {
                for (std::size_t i = 0; i < dw.numel(); ++i) dw.data[i] += dw_part[s][i];
            }
        }
        if (need_db) {
            Tensor<T>& db = bn->grad;
            for (int s = 0; s < xv.n; ++s) {
                const T* gslice = gy.data.data() + static_cast<std::size_t>(s) * cout * pixels;
                for (int co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* row = gslice + static_cast<std::size_t>(co) * pixels;
                    for (int p = 0; p < pixels; ++p) acc += row[p];
                    db.data[co] += acc;
                }
            }
        }
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, ConvGeom geom) {
    return conv2d(x, weight, Var<T>(), geom);
}

// ---------------------------------------------------------------------------
// bilinear_upsample
// ---------------------------------------------------------------------------

namespace detail {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> frac;
};

// Source coordinate convention: in = out / out_size * in_size, corners at
// floor/ceil with the ceil index clamped to the last valid row/column.
inline LerpAxis lerp_axis(int in_size, int out_size) {
    LerpAxis ax;
    ax.i0.resize(out_size);
    ax.i1.resize(out_size);
    ax.frac.resize(out_size);
    for (int o = 0; o < out_size; ++o) {
        const double pos = static_cast<double>(o) / out_size * in_size;
        int lo = static_cast<int>(std::floor(pos));
        int hi = static_cast<int>(std::ceil(pos));
        if (lo > in_size - 1) lo = in_size - 1;
        if (hi > in_size - 1) hi = in_size - 1;
        ax.i0[o] = lo;
        ax.i1[o] = hi;
        ax.frac[o] = pos - std::floor(pos);
    }
    return ax;
}

}  // namespace detail

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int out_h, int out_w) {
    const Tensor<T>& xv = x.value();
    if (out_h < xv.h || out_w < xv.w) {
        std::ostringstream os;
        os << "bilinear_upsample: downsampling unsupported, input " << xv.shape_str()
           << " to " << out_h << "x" << out_w;
        throw std::runtime_error(os.str());
    }
    detail::LerpAxis ay = detail::lerp_axis(xv.h, out_h);
    detail::LerpAxis axx = detail::lerp_axis(xv.w, out_w);

    Tensor<T> out(xv.n, xv.c, out_h, out_w);
    const std::size_t in_plane = static_cast<std::size_t>(xv.h) * xv.w;
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int nc = 0; nc < xv.n * xv.c; ++nc) {
        const T* src = xv.data.data() + nc * in_plane;
        T* dst = out.data.data() + nc * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay.i0[oy], y1 = ay.i1[oy];
            const double fy = ay.frac[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = axx.i0[ox], x1 = axx.i1[ox];
                const double fx = axx.frac[ox];
                const double v = (1.0 - fy) * ((1.0 - fx) * src[y0 * xv.w + x0] +
                                               fx * src[y0 * xv.w + x1]) +
                                 fy * ((1.0 - fx) * src[y1 * xv.w + x0] +
                                       fx * src[y1 * xv.w + x1]);
                dst[oy * out_w + ox] = static_cast<T>(v);
            }
        }
    }

    const int in_h = xv.h, in_w = xv.w, nches = xv.n * xv.c;
    return make_op<T>(std::move(out), {x.ptr()},
                      [ay, axx, in_h, in_w, out_h, out_w, nches, in_plane, out_plane](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int nc = 0; nc < nches; ++nc) {
            const T* g = n.grad.data.data() + nc * out_plane;
            T* dst = xn->grad.data.data() + nc * in_plane;
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ay.i0[oy], y1 = ay.i1[oy];
                const double fy = ay.frac[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = axx.i0[ox], x1 = axx.i1[ox];
                    const double fx = axx.frac[ox];
                    const double gv = static_cast<double>(g[oy * out_w + ox]);
                    dst[y0 * in_w + x0] += static_cast<T>((1.0 - fy) * (1.0 - fx) * gv);
                    dst[y0 * in_w + x1] += static_cast<T>((1.0 - fy) * fx * gv);
                    dst[y1 * in_w + x0] += static_cast<T>(fy * (1.0 - fx) * gv);
                    dst[y1 * in_w + x1] += static_cast<T>(fy * fx * gv);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// batch_norm
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    Var<T> gamma;  // (1,C,1,1)
    Var<T> beta;   // (1,C,1,1)
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);

    static BatchNormState create(int channels, const std::string& name) {
        BatchNormState st;
        Tensor<T> g(1, channels, 1, 1), b(1, channels, 1, 1);
        g.fill(T(1));
        st.gamma = Var<T>::leaf(std::move(g), true, name + ".gamma");
        st.beta = Var<T>::leaf(std::move(b), true, name + ".beta");
        st.running_mean.assign(channels, T(0));
        st.running_var.assign(channels, T(1));
        return st;
    }
    int channels() const { return static_cast<int>(running_mean.size()); }
};

template <typename T>
Var<T> batch_norm(const Var<T>& x, BatchNormState<T>& state, bool training) {
    const Tensor<T>& xv = x.value();
    if (xv.c != state.channels()) {
        throw std::runtime_error("batch_norm: input " + xv.shape_str() + " has " +
                                 std::to_string(xv.c) + " channels, state has " +
                                 std::to_string(state.channels()));
    }
    const int C = xv.c;
    const std::size_t cnt = static_cast<std::size_t>(xv.n) * xv.h * xv.w;
    const std::size_t plane = static_cast<std::size_t>(xv.h) * xv.w;
    const double eps = static_cast<double>(state.eps);

    std::vector<double> mean(C), invstd(C);
    if (training) {
        if (cnt <= 1) {
            throw std::runtime_error(
                "batch_norm: batch*spatial extent of 1 leaves variance undefined, input " +
                xv.shape_str());
        }
        for (int c = 0; c < C; ++c) {
            double sum = 0.0, sumsq = 0.0;
            for (int s = 0; s < xv.n; ++s) {
                const T* p = xv.data.data() + (static_cast<std::size_t>(s) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(p[i]);
                    sum += v;
                    sumsq += v * v;
                }
            }
            const double m = sum / static_cast<double>(cnt);
            double var = sumsq / static_cast<double>(cnt) - m * m;
            if (var < 0.0) var = 0.0;
            mean[c] = m;
            invstd[c] = 1.0 / std::sqrt(var + eps);
            const double mom = static_cast<double>(state.momentum);
            const double unbiased = var * static_cast<double>(cnt) / static_cast<double>(cnt - 1);
            state.running_mean[c] = static_cast<T>((1.0 - mom) * state.running_mean[c] + mom * m);
            state.running_var[c] =
                static_cast<T>((1.0 - mom) * state.running_var[c] + mom * unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = static_cast<double>(state.running_mean[c]);
            invstd[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + eps);
        }
    }

    const Tensor<T>& gv = state.gamma.value();
    const Tensor<T>& bv = state.beta.value();
    Tensor<T> out(xv.n, C, xv.h, xv.w);
    for (int s = 0; s < xv.n; ++s) {
        for (int c = 0; c < C; ++c) {
            const T* p = xv.data.data() + (static_cast<std::size_t>(s) * C + c) * plane;
            T* q = out.data.data() + (static_cast<std::size_t>(s) * C + c) * plane;
            const double g = static_cast<double>(gv.data[c]);
            const double b = static_cast<double>(bv.data[c]);
            for (std::size_t i = 0; i < plane; ++i) {
                q[i] = static_cast<T>(g * ((static_cast<double>(p[i]) - mean[c]) * invstd[c]) + b);
            }
        }
    }

    const int N = xv.n, H = xv.h, W = xv.w;
    return make_op<T>(
        std::move(out), {x.ptr(), state.gamma.ptr(), state.beta.ptr()},
        [mean, invstd, training, N, C, H, W, plane, cnt](Node<T>& n) {
            Node<T>* xn = n.parents[0].get();
            Node<T>* gn = n.parents[1].get();
            Node<T>* bn = n.parents[2].get();
            const Tensor<T>& xv = xn->value;
            const Tensor<T>& gy = n.grad;
            const Tensor<T>& gv = gn->value;

            for (int c = 0; c < C; ++c) {
                const double m = mean[c], is = invstd[c];
                const double gamma = static_cast<double>(gv.data[c]);
                double sum_g = 0.0, sum_g_xhat = 0.0;
                for (int s = 0; s < N; ++s) {
                    const std::size_t off = (static_cast<std::size_t>(s) * C + c) * plane;
                    const T* xp = xv.data.data() + off;
                    const T* gp = gy.data.data() + off;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double xhat = (static_cast<double>(xp[i]) - m) * is;
                        sum_g += static_cast<double>(gp[i]);
                        sum_g_xhat += static_cast<double>(gp[i]) * xhat;
                    }
                }
                if (gn->requires_grad) gn->grad.data[c] += static_cast<T>(sum_g_xhat);
                if (bn->requires_grad) bn->grad.data[c] += static_cast<T>(sum_g);
                if (!xn->requires_grad) continue;
                xn->ensure_grad();
                if (training) {
                    // Batch statistics depend on x; the projection terms
                    // remove the mean and the xhat component of the gradient.
                    const double inv_cnt = 1.0 / static_cast<double>(cnt);
                    for (int s = 0; s < N; ++s) {
                        const std::size_t off = (static_cast<std::size_t>(s) * C + c) * plane;
                        const T* xp = xv.data.data() + off;
                        const T* gp = gy.data.data() + off;
                        T* dx = xn->grad.data.data() + off;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xhat = (static_cast<double>(xp[i]) - m) * is;
                            const double v = gamma * is *
                                             (static_cast<double>(gp[i]) - sum_g * inv_cnt -
                                              xhat * sum_g_xhat * inv_cnt);
                            dx[i] += static_cast<T>(v);
                        }
                    }
                } else {
                    for (int s = 0; s < N; ++s) {
                        const std::size_t off = (static_cast<std::size_t>(s) * C + c) * plane;
                        const T* gp = gy.data.data() + off;
                        T* dx = xn->grad.data.data() + off;
                        for (std::size_t i = 0; i < plane; ++i) {
                            dx[i] += static_cast<T>(gamma * is * static_cast<double>(gp[i]));
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// pooling / concat / elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    if (xv.h < 1 || xv.w < 1) throw std::runtime_error("global_avg_pool: empty spatial dims");
    const std::size_t plane = static_cast<std::size_t>(xv.h) * xv.w;
    Tensor<T> out(xv.n, xv.c, 1, 1);
    for (int nc = 0; nc < xv.n * xv.c; ++nc) {
        const T* p = xv.data.data() + nc * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
        out.data[nc] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return make_op<T>(std::move(out), {x.ptr()}, [plane](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double scale = 1.0 / static_cast<double>(plane);
        const int nch = xn->value.n * xn->value.c;
        for (int nc = 0; nc < nch; ++nc) {
            const T g = static_cast<T>(static_cast<double>(n.grad.data[nc]) * scale);
            T* dst = xn->grad.data.data() + nc * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += g;
        }
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& inputs) {
    if (inputs.empty()) throw std::runtime_error("concat_channels: no inputs");
    const Tensor<T>& first = inputs[0].value();
    int total_c = 0;
    for (const auto& v : inputs) {
        const Tensor<T>& t = v.value();
        if (t.n != first.n || t.h != first.h || t.w != first.w) {
            throw std::runtime_error("concat_channels: shape mismatch, " + first.shape_str() +
                                     " vs " + t.shape_str());
        }
        total_c += t.c;
    }
    const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
    Tensor<T> out(first.n, total_c, first.h, first.w);
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::vector<int> channels;
    for (const auto& v : inputs) {
        parents.push_back(v.ptr());
        channels.push_back(v.value().c);
    }
    for (int s = 0; s < first.n; ++s) {
        int co = 0;
        for (const auto& v : inputs) {
            const Tensor<T>& t = v.value();
            const T* src = t.data.data() + static_cast<std::size_t>(s) * t.c * plane;
            T* dst = out.data.data() + (static_cast<std::size_t>(s) * total_c + co) * plane;
            std::copy(src, src + static_cast<std::size_t>(t.c) * plane, dst);
            co += t.c;
        }
    }
    const int N = first.n;
    return make_op<T>(std::move(out), std::move(parents), [channels, N, plane, total_c](Node<T>& n) {
        for (int s = 0; s < N; ++s) {
            int co = 0;
            for (std::size_t k = 0; k < n.parents.size(); ++k) {
                Node<T>* p = n.parents[k].get();
                const int pc = channels[k];
                if (p->requires_grad) {
                    p->ensure_grad();
                    const T* src =
                        n.grad.data.data() + (static_cast<std::size_t>(s) * total_c + co) * plane;
                    T* dst = p->grad.data.data() + static_cast<std::size_t>(s) * pc * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(pc) * plane; ++i) {
                        dst[i] += src[i];
                    }
                }
                co += pc;
            }
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.n, xv.c, xv.h, xv.w);
    for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    return make_op<T>(std::move(out), {x.ptr()}, [](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (xn->value.data[i] > T(0)) xn->grad.data[i] += n.grad.data[i];
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.n, xv.c, xv.h, xv.w);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out.data[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xv.data[i]))));
    }
    return make_op<T>(std::move(out), {x.ptr()}, [](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const T y = n.value.data[i];
            xn->grad.data[i] += n.grad.data[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::runtime_error("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor<T> out(av.n, av.c, av.h, av.w);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return make_op<T>(std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            Node<T>* p = n.parents[k].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) p->grad.data[i] += n.grad.data[i];
        }
    });
}

// out = s * x with s a scalar variable (a connection gate).
template <typename T>
Var<T> scale(const Var<T>& x, const Var<T>& s) {
    if (!s.value().is_scalar()) throw std::runtime_error("scale: scale factor must be scalar");
    const Tensor<T>& xv = x.value();
    const T sv = s.value().data[0];
    Tensor<T> out(xv.n, xv.c, xv.h, xv.w);
    for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = sv * xv.data[i];
    return make_op<T>(std::move(out), {x.ptr(), s.ptr()}, [](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        Node<T>* sn = n.parents[1].get();
        const T sv = sn->value.data[0];
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                xn->grad.data[i] += sv * n.grad.data[i];
            }
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                acc += static_cast<double>(n.grad.data[i]) * static_cast<double>(xn->value.data[i]);
            }
            sn->grad.data[0] += static_cast<T>(acc);
        }
    });
}

template <typename T>
Var<T> mul_elem(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::runtime_error("mul_elem: shape mismatch " + av.shape_str() + " vs " +
                                 bv.shape_str());
    }
    Tensor<T> out(av.n, av.c, av.h, av.w);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return make_op<T>(std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& n) {
        Node<T>* an = n.parents[0].get();
        Node<T>* bn = n.parents[1].get();
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                an->grad.data[i] += n.grad.data[i] * bn->value.data[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                bn->grad.data[i] += n.grad.data[i] * an->value.data[i];
            }
        }
    });
}

template <typename T>
Var<T> scale_const(const Var<T>& x, double c) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.n, xv.c, xv.h, xv.w);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out.data[i] = static_cast<T>(c * static_cast<double>(xv.data[i]));
    }
    return make_op<T>(std::move(out), {x.ptr()}, [c](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            xn->grad.data[i] += static_cast<T>(c * static_cast<double>(n.grad.data[i]));
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
    double acc = 0.0;
    for (const T& v : x.value().data) acc += static_cast<double>(v);
    return make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {x.ptr()}, [](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = n.grad.data[0];
        for (std::size_t i = 0; i < xn->grad.numel(); ++i) xn->grad.data[i] += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const std::size_t count = x.value().numel();
    if (count == 0) throw std::runtime_error("mean: empty tensor");
    double acc = 0.0;
    for (const T& v : x.value().data) acc += static_cast<double>(v);
    return make_op<T>(Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(count))),
                      {x.ptr()}, [count](Node<T>& n) {
        Node<T>* xn = n.parents[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = static_cast<T>(static_cast<double>(n.grad.data[0]) / static_cast<double>(count));
        for (std::size_t i = 0; i < xn->grad.numel(); ++i) xn->grad.data[i] += g;
    });
}

// Packs scalar variables into a (1,k,1,1) vector; used for per-stage gate
// vectors feeding the sparse loss.
template <typename T>
Var<T> concat_scalars(const std::vector<Var<T>>& scalars) {
    if (scalars.empty()) throw std::runtime_error("concat_scalars: no inputs");
    Tensor<T> out(1, static_cast<int>(scalars.size()), 1, 1);
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (!scalars[i].value().is_scalar()) {
            throw std::runtime_error("concat_scalars: input " + std::to_string(i) + " not scalar");
        }
        out.data[i] = scalars[i].value().data[0];
        parents.push_back(scalars[i].ptr());
    }
    return make_op<T>(std::move(out), std::move(parents), [](Node<T>& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node<T>* p = n.parents[i].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad.data[0] += n.grad.data[i];
        }
    });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Elementwise cross-entropy between distributions p and q:
//   -p*log(q) - (1-p)*log(1-q)
// q is clamped away from {0,1} before the logs; gradient is cut where the
// clamp is active.
template <typename T>
Var<T> lm(const Var<T>& p, const Var<T>& q, double clamp_eps) {
    const Tensor<T>& pv = p.value();
    const Tensor<T>& qv = q.value();
    if (!pv.same_shape(qv)) {
        throw std::runtime_error("lm: shape mismatch " + pv.shape_str() + " vs " + qv.shape_str());
    }
    Tensor<T> out(qv.n, qv.c, qv.h, qv.w);
    for (std::size_t i = 0; i < qv.numel(); ++i) {
        const double pd = static_cast<double>(pv.data[i]);
        double qd = static_cast<double>(qv.data[i]);
        qd = std::min(std::max(qd, clamp_eps), 1.0 - clamp_eps);
        out.data[i] = static_cast<T>(-pd * std::log(qd) - (1.0 - pd) * std::log(1.0 - qd));
    }
    return make_op<T>(std::move(out), {p.ptr(), q.ptr()}, [clamp_eps](Node<T>& n) {
        Node<T>* pn = n.parents[0].get();
        Node<T>* qn = n.parents[1].get();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const double g = static_cast<double>(n.grad.data[i]);
            const double pd = static_cast<double>(pn->value.data[i]);
            const double qraw = static_cast<double>(qn->value.data[i]);
            const double qd = std::min(std::max(qraw, clamp_eps), 1.0 - clamp_eps);
            if (pn->requires_grad) {
                pn->ensure_grad();
                pn->grad.data[i] += static_cast<T>(g * std::log((1.0 - qd) / qd));
            }
            if (qn->requires_grad && qraw > clamp_eps && qraw < 1.0 - clamp_eps) {
                qn->ensure_grad();
                qn->grad.data[i] += static_cast<T>(g * (-pd / qd + (1.0 - pd) / (1.0 - qd)));
            }
        }
    });
}

template <typename T>
Var<T> lm(double p, const Var<T>& q, double clamp_eps) {
    Tensor<T> pt(q.value().n, q.value().c, q.value().h, q.value().w);
    pt.fill(static_cast<T>(p));
    return lm(Var<T>::leaf(std::move(pt)), q, clamp_eps);
}

// Mean softmax cross-entropy over non-ignored pixels.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const LabelMap& labels, int ignore_id) {
    const Tensor<T>& lv = logits.value();
    if (lv.n != labels.n || lv.h != labels.h || lv.w != labels.w) {
        throw std::runtime_error("softmax_cross_entropy: logits " + lv.shape_str() +
                                 " do not match labels (" + std::to_string(labels.n) + "," +
                                 std::to_string(labels.h) + "," + std::to_string(labels.w) + ")");
    }
    const int K = lv.c;
    const std::size_t plane = static_cast<std::size_t>(lv.h) * lv.w;
    auto probs = std::make_shared<Tensor<T>>(lv.n, K, lv.h, lv.w);
    double loss_acc = 0.0;
    std::size_t counted = 0;
    for (int s = 0; s < lv.n; ++s) {
        for (std::size_t px = 0; px < plane; ++px) {
            const std::int32_t label = labels.ids[static_cast<std::size_t>(s) * plane + px];
            double maxv = -1e300;
            for (int k = 0; k < K; ++k) {
                maxv = std::max(maxv, static_cast<double>(
                                          lv.data[(static_cast<std::size_t>(s) * K + k) * plane + px]));
            }
            double z = 0.0;
            for (int k = 0; k < K; ++k) {
                const double e = std::exp(
                    static_cast<double>(lv.data[(static_cast<std::size_t>(s) * K + k) * plane + px]) -
                    maxv);
                probs->data[(static_cast<std::size_t>(s) * K + k) * plane + px] = static_cast<T>(e);
                z += e;
            }
            for (int k = 0; k < K; ++k) {
                T& pr = probs->data[(static_cast<std::size_t>(s) * K + k) * plane + px];
                pr = static_cast<T>(static_cast<double>(pr) / z);
            }
            if (label == ignore_id) continue;
            if (label < 0 || label >= K) {
                throw std::runtime_error("softmax_cross_entropy: class id " +
                                         std::to_string(label) + " out of range [0," +
                                         std::to_string(K) + ")");
            }
            const double p = static_cast<double>(
                probs->data[(static_cast<std::size_t>(s) * K + label) * plane + px]);
            loss_acc += -std::log(std::max(p, 1e-300));
            ++counted;
        }
    }
    if (counted == 0) throw std::runtime_error("softmax_cross_entropy: no labeled pixels");
    const double loss = loss_acc / static_cast<double>(counted);

    LabelMap labels_copy = labels;
    return make_op<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits.ptr()},
                      [probs, labels_copy, ignore_id, K, plane, counted](Node<T>& n) {
        Node<T>* ln = n.parents[0].get();
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const double g = static_cast<double>(n.grad.data[0]) / static_cast<double>(counted);
        const int N = ln->value.n;
        for (int s = 0; s < N; ++s) {
            for (std::size_t px = 0; px < plane; ++px) {
                const std::int32_t label = labels_copy.ids[static_cast<std::size_t>(s) * plane + px];
                if (label == ignore_id) continue;
                for (int k = 0; k < K; ++k) {
                    const std::size_t idx = (static_cast<std::size_t>(s) * K + k) * plane + px;
                    double d = static_cast<double>(probs->data[idx]);
                    if (k == label) d -= 1.0;
                    ln->grad.data[idx] += static_cast<T>(g * d);
                }
            }
        }
    });
}

}  // namespace sparsemask::ad
