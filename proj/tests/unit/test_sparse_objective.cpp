#include <doctest.h>

#include <cmath>

#include "sparsemask/metrics.hpp"
#include "sparsemask/rng.hpp"
#include "sparsemask/ops.hpp"
#include "sparsemask/sparse_loss.hpp"

using namespace sparsemask;
using ad::Var;

namespace {

Var<double> gate_vec(std::initializer_list<double> vals) {
    Tensor<double> t(1, static_cast<int>(vals.size()), 1, 1);
    int i = 0;
    for (double v : vals) t.data[i++] = v;
    return Var<double>::leaf(std::move(t));
}

double lm_value(double p, double q) {
    auto out = ad::lm(p, Var<double>::leaf(Tensor<double>::scalar(q)), 1e-6);
    return out.value().data[0];
}

}  // namespace

TEST_CASE("lm at the symmetric point is ln 2") {
    CHECK(lm_value(0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("lm endpoint reductions") {
    for (double q : {0.2, 0.5, 0.9}) {
        CHECK(lm_value(1.0, q) == doctest::Approx(-std::log(q)).epsilon(1e-9));
        CHECK(lm_value(0.0, q) == doctest::Approx(-std::log(1.0 - q)).epsilon(1e-9));
    }
}

TEST_CASE("lm(0.3, 0.7) direct evaluation") {
    const double expect = -0.3 * std::log(0.7) - 0.7 * std::log(0.3);
    CHECK(lm_value(0.3, 0.7) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(lm_value(0.3, 0.7) == doctest::Approx(0.9498).epsilon(1e-4));
}

TEST_CASE("sparse_loss at all-0.5 gates with alpha 0.5 is 2 ln 2") {
    auto loss = sparse_loss(gate_vec({0.5, 0.5}), 0.5);
    CHECK(loss.value().data[0] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("sparse_loss floor at near-binary gates with mean alpha") {
    // 1 of 4 gates on: mean 0.25 = alpha; binarization term ~0 at the clamp
    // boundaries, so the floor is lm(alpha, alpha).
    const double eps = 1e-6;
    auto loss = sparse_loss(gate_vec({1.0 - eps, eps, eps, eps}), 0.25, eps);
    const double floor = -0.25 * std::log(0.25) - 0.75 * std::log(0.75);
    CHECK(loss.value().data[0] == doctest::Approx(floor).epsilon(1e-3));
}

TEST_CASE("binarization-term gradient pushes a low gate toward zero") {
    // With the mean term held at its stationary point, the remaining
    // gradient on a sub-0.5 gate is log((1-w)/w)/k > 0.
    const int k = 4;
    Tensor<double> w(1, k, 1, 1);
    w.data = {0.3, 0.26, 0.26, 0.26};  // mean != alpha on purpose for part 2
    Var<double> wv = Var<double>::leaf(w, true, "w");
    ad::backward(ad::mean(ad::lm(wv, wv, 1e-6)));
    CHECK(wv.grad().data[0] == doctest::Approx(std::log(0.7 / 0.3) / k).epsilon(1e-9));
    CHECK(wv.grad().data[0] > 0.0);  // descent decreases w
}

TEST_CASE("mean term is stationary at mu(w) = alpha") {
    const double alpha = 0.3;
    Tensor<double> mu = Tensor<double>::scalar(alpha);
    Var<double> mv = Var<double>::leaf(mu, true, "mu");
    ad::backward(ad::lm(alpha, mv, 1e-6));
    CHECK(std::abs(mv.grad().data[0]) < 1e-12);
}

TEST_CASE("sparse_loss is non-negative") {
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
        const int k = 2 + static_cast<int>(rng.below(8));
        Tensor<double> w(1, k, 1, 1);
        for (auto& v : w.data) v = rng.uniform(1e-6, 1.0 - 1e-6);
        auto loss = sparse_loss(Var<double>::leaf(w), alpha_for_stage(k));
        CHECK(loss.value().data[0] >= -1e-12);
    }
}

TEST_CASE("binarization term is maximized at w == 0.5") {
    auto value = [](double w) {
        return ad::mean(ad::lm(gate_vec({w, w, w}), gate_vec({w, w, w}), 1e-6)).value().data[0];
    };
    const double mid = value(0.5);
    for (double w : {0.01, 0.2, 0.4, 0.6, 0.8, 0.99}) CHECK(value(w) < mid);
    CHECK(value(1e-6) == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("alpha_for_stage evaluates min(2/count, 0.5)") {
    CHECK(alpha_for_stage(4) == doctest::Approx(0.5));
    CHECK(alpha_for_stage(2) == doctest::Approx(0.5));
    CHECK(alpha_for_stage(18) == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
    CHECK_THROWS_AS(alpha_for_stage(0), std::runtime_error);
}

TEST_CASE("total_loss composition") {
    Var<double> task = Var<double>::leaf(Tensor<double>::scalar(1.5));
    std::vector<Var<double>> gates = {gate_vec({0.5, 0.5})};

    SparseLossConfig off;
    off.lambda = 0.0;
    CHECK(total_loss(task, gates, off).value().data[0] == doctest::Approx(1.5));

    SparseLossConfig on;
    on.lambda = 0.01;  // the default
    on.alpha_override = {0.5};
    const double expect = 1.5 + 0.01 * 2.0 * std::log(2.0);
    CHECK(total_loss(task, gates, on).value().data[0] == doctest::Approx(expect).epsilon(1e-9));

    SparseLossConfig defaults;
    CHECK(defaults.lambda == doctest::Approx(0.01));
}

TEST_CASE("total_loss is monotone non-decreasing in lambda") {
    Var<double> task = Var<double>::leaf(Tensor<double>::scalar(0.2));
    std::vector<Var<double>> gates = {gate_vec({0.4, 0.7, 0.1})};
    double prev = -1.0;
    for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
        SparseLossConfig cfg;
        cfg.lambda = lambda;
        const double v = total_loss(task, gates, cfg).value().data[0];
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("task_loss examples") {
    // logits hugely favoring the true class -> loss ~ 0
    Tensor<double> good(1, 3, 2, 2);
    LabelMap labels(1, 2, 2);
    for (int i = 0; i < 4; ++i) {
        labels.ids[i] = i % 3;
        good.data[static_cast<std::size_t>(labels.ids[i]) * 4 + i] = 50.0;
    }
    CHECK(ad::softmax_cross_entropy(Var<double>::leaf(good), labels, kIgnoreLabel)
              .value()
              .data[0] == doctest::Approx(0.0).epsilon(1e-6));

    // uniform logits over K classes -> ln K
    Tensor<double> uniform(1, 4, 2, 2);
    CHECK(ad::softmax_cross_entropy(Var<double>::leaf(uniform), labels, kIgnoreLabel)
              .value()
              .data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    // hand-computed random 2-class 2x2 case
    Tensor<double> l(1, 2, 2, 2);
    l.data = {0.3, -0.2, 1.0, 0.5, -0.1, 0.4, -0.3, 0.2};
    LabelMap y(1, 2, 2);
    y.ids = {0, 1, 1, 0};
    double expect = 0.0;
    for (int px = 0; px < 4; ++px) {
        const double a = l.data[px], b = l.data[4 + px];
        const double z = std::exp(a) + std::exp(b);
        expect += -std::log(std::exp(y.ids[px] == 0 ? a : b) / z);
    }
    expect /= 4.0;
    CHECK(ad::softmax_cross_entropy(Var<double>::leaf(l), y, kIgnoreLabel).value().data[0] ==
          doctest::Approx(expect).epsilon(1e-6));

    // out-of-range class id
    LabelMap bad(1, 2, 2);
    bad.ids = {0, 1, 5, 0};
    CHECK_THROWS_AS(ad::softmax_cross_entropy(Var<double>::leaf(l), bad, kIgnoreLabel),
                    std::runtime_error);

    // ignored pixels are excluded from the mean
    LabelMap ign(1, 2, 2);
    ign.ids = {0, kIgnoreLabel, kIgnoreLabel, 0};
    const double full =
        ad::softmax_cross_entropy(Var<double>::leaf(l), ign, kIgnoreLabel).value().data[0];
    double expect2 = 0.0;
    for (int px : {0, 3}) {
        const double a = l.data[px], b = l.data[4 + px];
        expect2 += -std::log(std::exp(a) / (std::exp(a) + std::exp(b)));
    }
    CHECK(full == doctest::Approx(expect2 / 2.0).epsilon(1e-9));
}
