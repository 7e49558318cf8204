#include "sparsemask/verify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sparsemask/fdn.hpp"
#include "sparsemask/metrics.hpp"
#include "sparsemask/optimizer.hpp"
#include "sparsemask/oracles.hpp"
#include "sparsemask/ops.hpp"
#include "sparsemask/pruner.hpp"
#include "sparsemask/rng.hpp"
#include "sparsemask/sparse_loss.hpp"

namespace sparsemask::verify {

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
    Tensor<T> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-scale, scale));
    return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double max_abs_diff_f(const Tensor<float>& a, const Tensor<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    }
    return m;
}

CheckResult report(const std::string& name, double max_err, double tol,
                   const std::string& detail = "") {
    CheckResult r;
    r.name = name;
    r.max_err = max_err;
    r.pass = max_err <= tol;
    r.detail = detail.empty() ? ("tol " + std::to_string(tol)) : detail;
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// fusion identities
// ---------------------------------------------------------------------------

CheckResult check_concat_conv_identity_double(int cases, double tol) {
    Rng rng(101);
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
        const int m = 2 + static_cast<int>(rng.below(2));
        const int cout = 1 + static_cast<int>(rng.below(4));
        const int h = 4 + static_cast<int>(rng.below(5));
        const int w = 4 + static_cast<int>(rng.below(5));
        std::vector<Tensor<double>> inputs, kernels;
        Tensor<double> summed;
        for (int i = 0; i < m; ++i) {
            const int cin = 1 + static_cast<int>(rng.below(4));
            inputs.push_back(random_tensor<double>(rng, 1, cin, h, w));
            kernels.push_back(random_tensor<double>(rng, cout, cin, 3, 3));
            // conv each then sum, production path
            ad::Var<double> y = ad::conv2d(ad::Var<double>::leaf(inputs.back()),
                                           ad::Var<double>::leaf(kernels.back()),
                                           ad::ConvGeom{1, 1});
            if (i == 0) summed = y.value();
            else {
                for (std::size_t k = 0; k < summed.numel(); ++k) {
                    summed.data[k] += y.value().data[k];
                }
            }
        }
        const Tensor<double> cat = oracles::naive_concat_conv(inputs, kernels, 1, 1);
        worst = std::max(worst, max_abs_diff(cat, summed));
    }
    return report("conv of concat == sum of convs (double)", worst, tol);
}

CheckResult check_concat_conv_identity_single(int cases, double tol) {
    Rng rng(102);
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
        const int m = 2 + static_cast<int>(rng.below(2));
        const int cout = 1 + static_cast<int>(rng.below(4));
        const int h = 4 + static_cast<int>(rng.below(5));
        const int w = 4 + static_cast<int>(rng.below(5));
        std::vector<ad::Var<float>> inputs;
        std::vector<Tensor<float>> kernels;
        Tensor<float> summed;
        int total_c = 0;
        for (int i = 0; i < m; ++i) {
            const int cin = 1 + static_cast<int>(rng.below(4));
            total_c += cin;
            inputs.push_back(ad::Var<float>::leaf(random_tensor<float>(rng, 1, cin, h, w)));
            kernels.push_back(random_tensor<float>(rng, cout, cin, 3, 3));
            ad::Var<float> y =
                ad::conv2d(inputs.back(), ad::Var<float>::leaf(kernels[i]), ad::ConvGeom{1, 1});
            if (i == 0) summed = y.value();
            else {
                for (std::size_t k = 0; k < summed.numel(); ++k) {
                    summed.data[k] += y.value().data[k];
                }
            }
        }
        // assemble the block kernel and convolve the concatenation once
        Tensor<float> block(cout, total_c, 3, 3);
        int co = 0;
        for (const auto& k : kernels) {
            for (int o = 0; o < cout; ++o) {
                for (int c = 0; c < k.c; ++c) {
                    for (int y2 = 0; y2 < 3; ++y2) {
                        for (int x2 = 0; x2 < 3; ++x2) {
                            block.at(o, co + c, y2, x2) = k.at(o, c, y2, x2);
                        }
                    }
                }
            }
            co += k.c;
        }
        ad::Var<float> cat = ad::concat_channels(inputs);
        ad::Var<float> one =
            ad::conv2d(cat, ad::Var<float>::leaf(std::move(block)), ad::ConvGeom{1, 1});
        worst = std::max(worst, max_abs_diff_f(one.value(), summed));
    }
    return report("conv of concat == sum of convs (single)", worst, tol);
}

CheckResult check_order_swap_identity_against(const UpsampleFn& upsample, int cases, double tol,
                                   const std::string& name) {
    Rng rng(103);
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(4));
        const int h = 2 + static_cast<int>(rng.below(7));
        const int w = 2 + static_cast<int>(rng.below(7));
        Tensor<double> x = random_tensor<double>(rng, 1, cin, h, w);
        Tensor<double> k = random_tensor<double>(rng, cout, cin, 1, 1);
        // conv after upsampling, production ops
        ad::Var<double> up =
            ad::bilinear_upsample(ad::Var<double>::leaf(x), 2 * h, 2 * w);
        ad::Var<double> conv_after =
            ad::conv2d(up, ad::Var<double>::leaf(k), ad::ConvGeom{1, 0});
        // upsample after conv, injected implementation
        const Tensor<double> conv_first = oracles::naive_conv2d(x, k, {}, 1, 0);
        const Tensor<double> up_after = upsample(conv_first, 2 * h, 2 * w);
        worst = std::max(worst, max_abs_diff(conv_after.value(), up_after));
    }
    return report(name, worst, tol);
}

CheckResult check_order_swap_identity_double(int cases, double tol) {
    return check_order_swap_identity_against(
        [](const Tensor<double>& x, int oh, int ow) { return oracles::naive_bilinear(x, oh, ow); },
        cases, tol, "1x1-conv/upsample order swap (double)");
}

CheckResult check_order_swap_identity_single(int cases, double tol) {
    Rng rng(104);
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(4));
        const int h = 2 + static_cast<int>(rng.below(7));
        const int w = 2 + static_cast<int>(rng.below(7));
        ad::Var<float> x = ad::Var<float>::leaf(random_tensor<float>(rng, 1, cin, h, w));
        ad::Var<float> k = ad::Var<float>::leaf(random_tensor<float>(rng, cout, cin, 1, 1));
        ad::Var<float> a =
            ad::conv2d(ad::bilinear_upsample(x, 2 * h, 2 * w), k, ad::ConvGeom{1, 0});
        ad::Var<float> b =
            ad::bilinear_upsample(ad::conv2d(x, k, ad::ConvGeom{1, 0}), 2 * h, 2 * w);
        worst = std::max(worst, max_abs_diff_f(a.value(), b.value()));
    }
    return report("1x1-conv/upsample order swap (single)", worst, tol);
}

// ---------------------------------------------------------------------------
// gradients
// ---------------------------------------------------------------------------

namespace {

// Projected-sum loss: sum(P * f(x)), giving a dense, nontrivial gradient.
double projected(const Tensor<double>& out, const Tensor<double>& proj) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += out.data[i] * proj.data[i];
    return acc;
}

CheckResult grad_check(const std::string& name, int cases, double tol,
                       const std::function<double(Rng&)>& one_case) {
    Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(name)));
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) worst = std::max(worst, one_case(rng));
    return report(name, worst, tol);
}

}  // namespace

CheckResult check_grad_conv2d(int cases, double tol) {
    return grad_check("grad conv2d vs finite diff", cases, tol, [](Rng& rng) {
        const int cin = 1 + static_cast<int>(rng.below(3));
        const int cout = 1 + static_cast<int>(rng.below(3));
        const int h = 3 + static_cast<int>(rng.below(2));
        const int w = 3 + static_cast<int>(rng.below(2));
        Tensor<double> x = random_tensor<double>(rng, 2, cin, h, w);
        Tensor<double> k = random_tensor<double>(rng, cout, cin, 3, 3);
        Tensor<double> bias = random_tensor<double>(rng, 1, cout, 1, 1);
        Tensor<double> proj = random_tensor<double>(rng, 2, cout, h, w);

        auto loss_at = [&](const Tensor<double>& xv, const Tensor<double>& kv,
                           const Tensor<double>& bv) {
            ad::Var<double> out =
                ad::conv2d(ad::Var<double>::leaf(xv), ad::Var<double>::leaf(kv),
                           ad::Var<double>::leaf(bv), ad::ConvGeom{1, 1});
            return projected(out.value(), proj);
        };

        ad::Var<double> xv = ad::Var<double>::leaf(x, true, "x");
        ad::Var<double> kv = ad::Var<double>::leaf(k, true, "k");
        ad::Var<double> bv = ad::Var<double>::leaf(bias, true, "b");
        ad::Var<double> out = ad::conv2d(xv, kv, bv, ad::ConvGeom{1, 1});
        ad::Var<double> loss = ad::sum(ad::mul_elem(out, ad::Var<double>::leaf(proj)));
        ad::backward(loss);

        double err = 0.0;
        err = std::max(err, oracles::relative_error(xv.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return loss_at(p, k, bias); }, x)));
        err = std::max(err, oracles::relative_error(kv.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return loss_at(x, p, bias); }, k)));
        err = std::max(err, oracles::relative_error(bv.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return loss_at(x, k, p); }, bias)));
        return err;
    });
}

CheckResult check_grad_bilinear(int cases, double tol) {
    return grad_check("grad bilinear_upsample vs finite diff", cases, tol, [](Rng& rng) {
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 2 + static_cast<int>(rng.below(3));
        const int w = 2 + static_cast<int>(rng.below(3));
        const int oh = h + 1 + static_cast<int>(rng.below(5));
        const int ow = w + 1 + static_cast<int>(rng.below(5));
        Tensor<double> x = random_tensor<double>(rng, 1, c, h, w);
        Tensor<double> proj = random_tensor<double>(rng, 1, c, oh, ow);

        ad::Var<double> xv = ad::Var<double>::leaf(x, true, "x");
        ad::Var<double> loss =
            ad::sum(ad::mul_elem(ad::bilinear_upsample(xv, oh, ow), ad::Var<double>::leaf(proj)));
        ad::backward(loss);
        return oracles::relative_error(
            xv.grad(),
            oracles::finite_diff(
                [&](const Tensor<double>& p) {
                    ad::Var<double> out = ad::bilinear_upsample(ad::Var<double>::leaf(p), oh, ow);
                    return projected(out.value(), proj);
                },
                x));
    });
}

CheckResult check_grad_batch_norm(int cases, double tol) {
    return grad_check("grad batch_norm vs finite diff", cases, tol, [](Rng& rng) {
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 2 + static_cast<int>(rng.below(3));
        Tensor<double> x = random_tensor<double>(rng, 3, c, h, h);
        Tensor<double> gamma = random_tensor<double>(rng, 1, c, 1, 1);
        Tensor<double> beta = random_tensor<double>(rng, 1, c, 1, 1);
        for (auto& v : gamma.data) v += 1.5;  // keep gamma away from 0
        Tensor<double> proj = random_tensor<double>(rng, 3, c, h, h);

        auto run = [&](const Tensor<double>& xv, const Tensor<double>& gv,
                       const Tensor<double>& bv, ad::Var<double>* gx, ad::Var<double>* gg,
                       ad::Var<double>* gb) {
            ad::BatchNormState<double> st;
            st.gamma = ad::Var<double>::leaf(gv, gx != nullptr, "gamma");
            st.beta = ad::Var<double>::leaf(bv, gx != nullptr, "beta");
            st.running_mean.assign(c, 0.0);
            st.running_var.assign(c, 1.0);
            ad::Var<double> in = ad::Var<double>::leaf(xv, gx != nullptr, "x");
            ad::Var<double> out = ad::batch_norm(in, st, true);
            if (gx) {
                ad::Var<double> loss = ad::sum(ad::mul_elem(out, ad::Var<double>::leaf(proj)));
                ad::backward(loss);
                *gx = in;
                *gg = st.gamma;
                *gb = st.beta;
                return 0.0;
            }
            return projected(out.value(), proj);
        };

        ad::Var<double> gx, gg, gb;
        run(x, gamma, beta, &gx, &gg, &gb);
        double err = 0.0;
        err = std::max(err, oracles::relative_error(gx.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return run(p, gamma, beta, nullptr, nullptr, nullptr); }, x)));
        err = std::max(err, oracles::relative_error(gg.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return run(x, p, beta, nullptr, nullptr, nullptr); }, gamma)));
        err = std::max(err, oracles::relative_error(gb.grad(), oracles::finite_diff(
            [&](const Tensor<double>& p) { return run(x, gamma, p, nullptr, nullptr, nullptr); }, beta)));
        return err;
    });
}

CheckResult check_grad_global_avg_pool(int cases, double tol) {
    return grad_check("grad global_avg_pool vs finite diff", cases, tol, [](Rng& rng) {
        const int c = 1 + static_cast<int>(rng.below(4));
        const int h = 1 + static_cast<int>(rng.below(4));
        Tensor<double> x = random_tensor<double>(rng, 2, c, h, h);
        Tensor<double> proj = random_tensor<double>(rng, 2, c, 1, 1);
        ad::Var<double> xv = ad::Var<double>::leaf(x, true, "x");
        ad::Var<double> loss =
            ad::sum(ad::mul_elem(ad::global_avg_pool(xv), ad::Var<double>::leaf(proj)));
        ad::backward(loss);
        return oracles::relative_error(
            xv.grad(), oracles::finite_diff(
                           [&](const Tensor<double>& p) {
                               ad::Var<double> out = ad::global_avg_pool(ad::Var<double>::leaf(p));
                               return projected(out.value(), proj);
                           },
                           x));
    });
}

CheckResult check_grad_sigmoid_gates(int cases, double tol) {
    return grad_check("grad sigmoid gates vs finite diff", cases, tol, [](Rng& rng) {
        const int k = 2 + static_cast<int>(rng.below(7));
        Tensor<double> theta = random_tensor<double>(rng, 1, k, 1, 1, 2.5);
        Tensor<double> proj = random_tensor<double>(rng, 1, k, 1, 1);
        ad::Var<double> tv = ad::Var<double>::leaf(theta, true, "theta");
        ad::Var<double> loss = ad::sum(ad::mul_elem(ad::sigmoid(tv), ad::Var<double>::leaf(proj)));
        ad::backward(loss);
        return oracles::relative_error(
            tv.grad(), oracles::finite_diff(
                           [&](const Tensor<double>& p) {
                               ad::Var<double> out = ad::sigmoid(ad::Var<double>::leaf(p));
                               return projected(out.value(), proj);
                           },
                           theta));
    });
}

CheckResult check_grad_sparse_loss(int cases, double tol) {
    return grad_check("grad sparse_loss vs finite diff", cases, tol, [](Rng& rng) {
        const int k = 2 + static_cast<int>(rng.below(7));
        const double alpha = alpha_for_stage(k);
        // gates inside (0.05, 0.95): away from the clamp region
        Tensor<double> w(1, k, 1, 1);
        for (auto& v : w.data) v = rng.uniform(0.05, 0.95);
        ad::Var<double> wv = ad::Var<double>::leaf(w, true, "w");
        ad::Var<double> loss = sparse_loss(wv, alpha);
        ad::backward(loss);
        return oracles::relative_error(
            wv.grad(), oracles::finite_diff(
                           [&](const Tensor<double>& p) {
                               ad::Var<double> out = sparse_loss(ad::Var<double>::leaf(p), alpha);
                               return out.value().data[0];
                           },
                           w, 1e-5));
    });
}

CheckResult check_grad_task_loss(int cases, double tol) {
    return grad_check("grad task_loss vs finite diff", cases, tol, [](Rng& rng) {
        const int kk = 2 + static_cast<int>(rng.below(3));
        const int h = 2 + static_cast<int>(rng.below(3));
        Tensor<double> logits = random_tensor<double>(rng, 2, kk, h, h, 2.0);
        LabelMap labels(2, h, h);
        for (auto& id : labels.ids) {
            id = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(kk) + 1));
            if (id == kk) id = kIgnoreLabel;  // exercise the ignore path
        }
        labels.ids[0] = 0;  // at least one labeled pixel
        ad::Var<double> lv = ad::Var<double>::leaf(logits, true, "logits");
        ad::Var<double> loss = ad::softmax_cross_entropy(lv, labels, kIgnoreLabel);
        ad::backward(loss);
        return oracles::relative_error(
            lv.grad(), oracles::finite_diff(
                           [&](const Tensor<double>& p) {
                               ad::Var<double> out = ad::softmax_cross_entropy(
                                   ad::Var<double>::leaf(p), labels, kIgnoreLabel);
                               return out.value().data[0];
                           },
                           logits));
    });
}

// ---------------------------------------------------------------------------
// forward oracles and structure
// ---------------------------------------------------------------------------

CheckResult check_conv_forward_oracle(int cases, double tol) {
    Rng rng(105);
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(4));
        const int h = 3 + static_cast<int>(rng.below(6));
        const int w = 3 + static_cast<int>(rng.below(6));
        const int k = rng.below(2) == 0 ? 1 : 3;
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = k == 3 ? static_cast<int>(rng.below(2)) : 0;
        Tensor<double> x = random_tensor<double>(rng, 2, cin, h, w);
        Tensor<double> kern = random_tensor<double>(rng, cout, cin, k, k);
        if ((h + 2 * pad - k) / stride + 1 < 1) continue;
        ad::Var<double> out = ad::conv2d(ad::Var<double>::leaf(x), ad::Var<double>::leaf(kern),
                                         ad::ConvGeom{stride, pad});
        worst = std::max(worst,
                         max_abs_diff(out.value(), oracles::naive_conv2d(x, kern, {}, stride, pad)));
    }
    return report("conv2d forward vs naive oracle", worst, tol);
}

CheckResult check_bilinear_forward_oracle(int cases, double tol) {
    Rng rng(106);
    double worst = 0.0;
    // the hand-evaluated case: [0,4] upsampled 1x2 -> 1x4 gives [0,2,4,4]
    Tensor<double> tiny(1, 1, 1, 2);
    tiny.data = {0.0, 4.0};
    ad::Var<double> up = ad::bilinear_upsample(ad::Var<double>::leaf(tiny), 1, 4);
    const double expected[4] = {0.0, 2.0, 4.0, 4.0};
    for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(up.value().data[i] - expected[i]));

    for (int t = 0; t < cases; ++t) {
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 1 + static_cast<int>(rng.below(6));
        const int w = 1 + static_cast<int>(rng.below(6));
        const int oh = h + static_cast<int>(rng.below(9));
        const int ow = w + static_cast<int>(rng.below(9));
        Tensor<double> x = random_tensor<double>(rng, 1, c, h, w);
        ad::Var<double> out = ad::bilinear_upsample(ad::Var<double>::leaf(x), oh, ow);
        worst = std::max(worst, max_abs_diff(out.value(), oracles::naive_bilinear(x, oh, ow)));
    }
    return report("bilinear forward vs naive oracle", worst, tol);
}

CheckResult check_upsample_identity() {
    Rng rng(107);
    Tensor<double> x = random_tensor<double>(rng, 2, 3, 5, 7);
    ad::Var<double> out = ad::bilinear_upsample(ad::Var<double>::leaf(x), 5, 7);
    return report("bilinear same-size identity", max_abs_diff(out.value(), x), 0.0);
}

CheckResult check_stage_concat_equivalence(double tol) {
    // Pointwise FDN stage in eval mode against the one-shot form: upsample
    // every input, concatenate, convolve once with gate- and BN-folded
    // kernel blocks.
    Rng rng(108);
    EncoderSpec spec;
    spec.name = "equiv3";
    spec.stages = {{4, 2}, {6, 4}, {8, 8}};
    FdnOptions opt;
    opt.num_classes = 2;
    opt.activation = DecoderActivation::relu;
    opt.pointwise = true;
    Fdn fdn = Fdn::build(spec, 5, opt, 42);

    const int target_h = 8, target_w = 8;  // stage 1 at stride 2 of a 16x16 input
    FeatureMap feats;
    feats[FeatureRef::encoder(1)] = VarF::leaf(random_tensor<float>(rng, 2, 4, 8, 8));
    feats[FeatureRef::encoder(2)] = VarF::leaf(random_tensor<float>(rng, 2, 6, 4, 4));
    feats[FeatureRef::encoder(3)] = VarF::leaf(random_tensor<float>(rng, 2, 8, 2, 2));
    feats[FeatureRef::decoder(2)] = VarF::leaf(random_tensor<float>(rng, 2, 5, 4, 4));
    feats[FeatureRef::decoder(3)] = VarF::leaf(random_tensor<float>(rng, 2, 5, 2, 2));
    feats[FeatureRef::global()] = VarF::leaf(random_tensor<float>(rng, 2, 8, 1, 1));

    // randomize gates and BN statistics so the folding is non-trivial
    DecoderStageNet& stage = fdn.stage(1);
    for (Branch& b : stage.branches) {
        b.theta.value().data[0] = static_cast<float>(rng.uniform(-2.0, 2.0));
        for (int c = 0; c < 5; ++c) {
            b.bn.gamma.value().data[c] = static_cast<float>(rng.uniform(0.5, 1.5));
            b.bn.beta.value().data[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
            b.bn.running_mean[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
            b.bn.running_var[c] = static_cast<float>(rng.uniform(0.5, 2.0));
        }
    }

    const Tensor<float> branch_form = fdn.decoder_stage_forward(1, feats, false).value();

    std::vector<Tensor<double>> upsampled;
    std::vector<Tensor<double>> blocks;
    Tensor<double> bias_sum(1, 5, 1, 1);
    for (Branch& b : stage.branches) {
        const Tensor<double> src = feats.at(b.source).value().cast<double>();
        upsampled.push_back(src.h == target_h && src.w == target_w
                                ? src
                                : oracles::naive_bilinear(src, target_h, target_w));
        const double gate =
            1.0 / (1.0 + std::exp(-static_cast<double>(b.theta.value().data[0])));
        Tensor<double> block(5, src.c, 1, 1);
        for (int co = 0; co < 5; ++co) {
            const double inv_std =
                1.0 / std::sqrt(static_cast<double>(b.bn.running_var[co]) + 1e-5);
            const double a = static_cast<double>(b.bn.gamma.value().data[co]) * inv_std;
            for (int ci = 0; ci < src.c; ++ci) {
                block.at(co, ci, 0, 0) =
                    gate * a * static_cast<double>(b.conv_w.value().at(co, ci, 0, 0));
            }
            bias_sum.data[co] +=
                gate * (static_cast<double>(b.bn.beta.value().data[co]) -
                        static_cast<double>(b.bn.gamma.value().data[co]) * inv_std *
                            static_cast<double>(b.bn.running_mean[co]));
        }
        blocks.push_back(std::move(block));
    }
    Tensor<double> one_shot = oracles::naive_concat_conv(upsampled, blocks, 1, 0);
    for (int n = 0; n < one_shot.n; ++n) {
        for (int c = 0; c < one_shot.c; ++c) {
            for (int y = 0; y < one_shot.h; ++y) {
                for (int x = 0; x < one_shot.w; ++x) {
                    double v = one_shot.at(n, c, y, x) + bias_sum.data[c];
                    one_shot.at(n, c, y, x) = v > 0.0 ? v : 0.0;  // stage activation
                }
            }
        }
    }
    return report("decoder stage == concat-then-conv oracle",
                  max_abs_diff(branch_form.cast<double>(), one_shot), tol);
}

CheckResult check_pruner_against_oracle(int graphs) {
    Rng rng(109);
    const double sigmas[3] = {1e-3, 0.1, 0.5};
    int mismatches = 0, idempotence_fails = 0, monotone_fails = 0;
    for (int g = 0; g < graphs; ++g) {
        const int L = 2 + static_cast<int>(rng.below(5));
        GateMatrix gm;
        gm.num_stages = L;
        for (int l = 1; l <= L; ++l) {
            for (const auto& src : candidate_sources(L, l)) {
                gm.entries.push_back({l, src, rng.uniform()});
            }
        }
        PruneContext ctx;
        ctx.encoder.name = "rand";
        for (int l = 1; l <= L; ++l) ctx.encoder.stages.push_back({4, 1 << l});
        ctx.decoder_channels = 4;

        std::vector<std::set<std::pair<int, std::string>>> kept_sets;
        for (double sigma : sigmas) {
            std::optional<oracles::PrunedGraph> got;
            try {
                got = prune(gm, sigma, ctx).graph();
            } catch (const std::runtime_error&) {
                got = std::nullopt;
            }
            const std::optional<oracles::PrunedGraph> want = oracles::reachability_prune(gm, sigma);
            if (got.has_value() != want.has_value() ||
                (got.has_value() && !(*got == *want))) {
                ++mismatches;
            }
            std::set<std::pair<int, std::string>> kept;
            if (got) {
                for (const auto& [stage, src] : got->edges) kept.insert({stage, src.str()});
                // idempotence: re-pruning the kept graph at gate 1.0 changes nothing
                GateMatrix again;
                again.num_stages = L;
                for (const auto& [stage, src] : got->edges) {
                    again.entries.push_back({stage, src, 1.0});
                }
                const auto twice = prune(again, sigma, ctx).graph();
                if (!(twice == *got)) ++idempotence_fails;
            }
            kept_sets.push_back(std::move(kept));
        }
        // sigma monotonicity: larger sigma keeps a subset
        for (std::size_t i = 0; i + 1 < kept_sets.size(); ++i) {
            for (const auto& e : kept_sets[i + 1]) {
                if (!kept_sets[i].count(e)) ++monotone_fails;
            }
        }
    }
    CheckResult r;
    r.name = "pruner == reachability oracle (" + std::to_string(graphs) + " graphs)";
    r.max_err = static_cast<double>(mismatches + idempotence_fails + monotone_fails);
    r.pass = r.max_err == 0.0;
    r.detail = std::to_string(mismatches) + " mismatches, " + std::to_string(idempotence_fails) +
               " idempotence, " + std::to_string(monotone_fails) + " monotonicity";
    return r;
}

CheckResult check_lr_schedule() {
    double err = 0.0;
    err = std::max(err, std::abs(poly_lr(0.05, 0, 100, 0.9) - 0.05));
    err = std::max(err, std::abs(poly_lr(0.05, 100, 100, 0.9)));
    err = std::max(err, std::abs(poly_lr(1.0, 50, 100, 0.9) - std::pow(0.5, 0.9)));
    double prev = 1e9;
    for (int s = 0; s <= 100; ++s) {
        const double lr = poly_lr(0.05, s, 100, 0.9);
        if (lr > prev + 1e-15) err = std::max(err, lr - prev);
        prev = lr;
    }
    return report("poly lr schedule endpoints and monotonicity", err, 1e-12);
}

CheckResult check_candidate_counts() {
    int bad = 0;
    for (int L = 2; L <= 9; ++L) {
        int total = 0;
        for (int l = 1; l <= L; ++l) {
            const int size = static_cast<int>(candidate_sources(L, l).size());
            if (size != 2 * (L - l) + 2) ++bad;
            total += size;
        }
        if (total != total_gate_count(L)) ++bad;
    }
    if (total_gate_count(5) != 30) ++bad;
    if (total_gate_count(9) != 90) ++bad;
    CheckResult r;
    r.name = "candidate set counting identities";
    r.max_err = bad;
    r.pass = bad == 0;
    r.detail = "|w_l| = 2(L-l)+2, total = L(L+1); L=5 -> 30, L=9 -> 90";
    return r;
}

std::vector<CheckResult> run_all_checks() {
    std::vector<CheckResult> out;
    out.push_back(check_concat_conv_identity_double(100, 1e-9));
    out.push_back(check_concat_conv_identity_single(100, 1e-4));
    out.push_back(check_order_swap_identity_double(100, 1e-9));
    out.push_back(check_order_swap_identity_single(100, 1e-4));
    out.push_back(check_grad_conv2d(20, 1e-3));
    out.push_back(check_grad_bilinear(20, 1e-3));
    out.push_back(check_grad_batch_norm(20, 1e-3));
    out.push_back(check_grad_global_avg_pool(20, 1e-3));
    out.push_back(check_grad_sigmoid_gates(20, 1e-3));
    out.push_back(check_grad_sparse_loss(20, 1e-3));
    out.push_back(check_grad_task_loss(20, 1e-3));
    out.push_back(check_conv_forward_oracle(50, 1e-9));
    out.push_back(check_bilinear_forward_oracle(50, 1e-12));
    out.push_back(check_upsample_identity());
    out.push_back(check_stage_concat_equivalence(1e-4));
    out.push_back(check_pruner_against_oracle(200));
    out.push_back(check_lr_schedule());
    out.push_back(check_candidate_counts());
    return out;
}

}  // namespace sparsemask::verify
