#include <doctest.h>

#include <cmath>

#include "sparsemask/ops.hpp"
#include "sparsemask/oracles.hpp"
#include "sparsemask/rng.hpp"

using namespace sparsemask;
using ad::ConvGeom;
using ad::Var;

namespace {

Tensor<double> random_tensor(Rng& rng, int n, int c, int h, int w) {
    Tensor<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d scalar product") {
    Tensor<double> x(1, 1, 1, 1);
    x.data[0] = 3.0;
    Tensor<double> k(1, 1, 1, 1);
    k.data[0] = 2.0;
    auto y = ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(k), ConvGeom{1, 0});
    CHECK(y.value().data[0] == doctest::Approx(6.0));
}

TEST_CASE("conv2d identity kernel preserves input") {
    Rng rng(11);
    Tensor<double> x = random_tensor(rng, 1, 1, 3, 3);
    Tensor<double> k(1, 1, 3, 3);
    k.at(0, 0, 1, 1) = 1.0;  // delta kernel
    auto y = ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(k), ConvGeom{1, 1});
    CHECK(max_abs_diff(y.value(), x) == doctest::Approx(0.0));
}

TEST_CASE("conv2d matches naive 6-loop reference") {
    Rng rng(12);
    Tensor<double> x = random_tensor(rng, 1, 2, 4, 4);
    Tensor<double> k = random_tensor(rng, 3, 2, 3, 3);
    auto y = ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(k), ConvGeom{1, 1});
    CHECK(max_abs_diff(y.value(), oracles::naive_conv2d(x, k, {}, 1, 1)) < 1e-5);
}

TEST_CASE("conv2d stride 1 same-padding preserves spatial dims for odd k") {
    Rng rng(13);
    for (int k : {1, 3, 5}) {
        Tensor<double> x = random_tensor(rng, 1, 2, 6, 7);
        Tensor<double> w = random_tensor(rng, 2, 2, k, k);
        auto y = ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(w), ConvGeom{1, (k - 1) / 2});
        CHECK(y.value().h == 6);
        CHECK(y.value().w == 7);
    }
}

TEST_CASE("conv2d shape mismatch names both shapes") {
    Tensor<double> x(1, 2, 4, 4);
    Tensor<double> k(1, 3, 3, 3);
    CHECK_THROWS_WITH_AS(
        ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(k), ConvGeom{1, 1}),
        doctest::Contains("(1,2,4,4)"), std::runtime_error);
}

TEST_CASE("bilinear_upsample of constant is constant") {
    Tensor<double> x(1, 2, 3, 3);
    x.fill(2.75);
    auto y = ad::bilinear_upsample(Var<double>::leaf(x), 7, 9);
    for (double v : y.value().data) CHECK(v == doctest::Approx(2.75));
}

TEST_CASE("bilinear_upsample hand-evaluated 1x2 -> 1x4") {
    Tensor<double> x(1, 1, 1, 2);
    x.data = {0.0, 4.0};
    auto y = ad::bilinear_upsample(Var<double>::leaf(x), 1, 4);
    const double expect[4] = {0.0, 2.0, 4.0, 4.0};
    for (int i = 0; i < 4; ++i) CHECK(y.value().data[i] == doctest::Approx(expect[i]));
}

TEST_CASE("bilinear_upsample matches per-pixel reference on 4x4 -> 8x8") {
    Rng rng(14);
    Tensor<double> x = random_tensor(rng, 1, 3, 4, 4);
    auto y = ad::bilinear_upsample(Var<double>::leaf(x), 8, 8);
    CHECK(max_abs_diff(y.value(), oracles::naive_bilinear(x, 8, 8)) < 1e-6);
}

TEST_CASE("bilinear_upsample to same size is identity") {
    Rng rng(15);
    Tensor<double> x = random_tensor(rng, 2, 2, 5, 4);
    auto y = ad::bilinear_upsample(Var<double>::leaf(x), 5, 4);
    CHECK(max_abs_diff(y.value(), x) == 0.0);
}

TEST_CASE("bilinear_upsample rejects downsampling") {
    Tensor<double> x(1, 1, 4, 4);
    CHECK_THROWS_AS(ad::bilinear_upsample(Var<double>::leaf(x), 2, 4), std::runtime_error);
}

TEST_CASE("batch_norm leaves normalized input fixed") {
    // per-channel zero mean, unit variance already
    Tensor<double> x(1, 1, 1, 4);
    x.data = {-1.0, 1.0, -1.0, 1.0};
    auto st = ad::BatchNormState<double>::create(1, "bn");
    auto y = ad::batch_norm(Var<double>::leaf(x), st, true);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(y.value().data[i] - x.data[i]) < 1e-4);
    }
}

TEST_CASE("batch_norm maps constant channel to zero") {
    Tensor<double> x(2, 2, 3, 3);
    for (int s = 0; s < 2; ++s) {
        for (int c = 0; c < 2; ++c) {
            for (int i = 0; i < 9; ++i) x.at(s, c, i / 3, i % 3) = 3.0 + c;
        }
    }
    auto st = ad::BatchNormState<double>::create(2, "bn");
    auto y = ad::batch_norm(Var<double>::leaf(x), st, true);
    for (double v : y.value().data) CHECK(std::abs(v) < 1e-4);
}

TEST_CASE("batch_norm training statistics are unit scale") {
    Rng rng(16);
    Tensor<double> x = random_tensor(rng, 4, 2, 3, 3);
    for (auto& v : x.data) v = v * 2.0 + 0.7;
    auto st = ad::BatchNormState<double>::create(2, "bn");
    auto y = ad::batch_norm(Var<double>::leaf(x), st, true);
    const std::size_t cnt = 4 * 3 * 3;
    for (int c = 0; c < 2; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (int s = 0; s < 4; ++s) {
            for (int i = 0; i < 9; ++i) {
                const double v = y.value().at(s, c, i / 3, i % 3);
                sum += v;
                sumsq += v * v;
            }
        }
        const double mean = sum / cnt;
        const double var = sumsq / cnt - mean * mean;
        CHECK(std::abs(mean) <= 1e-5);
        CHECK(std::abs(var - 1.0) <= 1e-3);
    }
}

TEST_CASE("batch_norm rejects single-element extent in training") {
    Tensor<double> x(1, 3, 1, 1);
    auto st = ad::BatchNormState<double>::create(3, "bn");
    CHECK_THROWS_AS(ad::batch_norm(Var<double>::leaf(x), st, true), std::runtime_error);
    CHECK_NOTHROW(ad::batch_norm(Var<double>::leaf(x), st, false));
}

TEST_CASE("global_avg_pool examples") {
    Tensor<double> c(2, 3, 4, 5);
    c.fill(1.25);
    auto y = ad::global_avg_pool(Var<double>::leaf(c));
    CHECK(y.value().h == 1);
    CHECK(y.value().w == 1);
    for (double v : y.value().data) CHECK(v == doctest::Approx(1.25));

    Tensor<double> x(1, 1, 2, 2);
    x.data = {1.0, 3.0, 5.0, 7.0};
    CHECK(ad::global_avg_pool(Var<double>::leaf(x)).value().data[0] == doctest::Approx(4.0));

    Rng rng(17);
    Tensor<double> r = random_tensor(rng, 2, 3, 6, 6);
    auto p = ad::global_avg_pool(Var<double>::leaf(r));
    for (int s = 0; s < 2; ++s) {
        for (int ch = 0; ch < 3; ++ch) {
            double acc = 0.0;
            for (int i = 0; i < 36; ++i) acc += r.at(s, ch, i / 6, i % 6);
            CHECK(std::abs(p.value().at(s, ch, 0, 0) - acc / 36.0) < 1e-6);
        }
    }
}

TEST_CASE("concat_channels ordering and round trip") {
    Rng rng(18);
    Tensor<double> a = random_tensor(rng, 1, 2, 3, 3);
    Tensor<double> b = random_tensor(rng, 1, 1, 3, 3);
    Tensor<double> c = random_tensor(rng, 1, 3, 3, 3);
    auto cat = ad::concat_channels<double>(
        {Var<double>::leaf(a), Var<double>::leaf(b), Var<double>::leaf(c)});
    CHECK(cat.value().c == 6);
    // split back by channel blocks reproduces the inputs exactly
    const Tensor<double>* parts[3] = {&a, &b, &c};
    int co = 0;
    for (const Tensor<double>* part : parts) {
        for (int ch = 0; ch < part->c; ++ch) {
            for (int i = 0; i < 9; ++i) {
                CHECK(cat.value().at(0, co + ch, i / 3, i % 3) == part->at(0, ch, i / 3, i % 3));
            }
        }
        co += part->c;
    }

    auto single = ad::concat_channels<double>({Var<double>::leaf(a)});
    CHECK(max_abs_diff(single.value(), a) == 0.0);

    Tensor<double> sa(1, 1, 1, 1), sb(1, 1, 1, 1);
    sa.data[0] = 3.5;
    sb.data[0] = -1.5;
    auto two = ad::concat_channels<double>({Var<double>::leaf(sa), Var<double>::leaf(sb)});
    CHECK(two.value().c == 2);
    CHECK(two.value().data[0] == 3.5);
    CHECK(two.value().data[1] == -1.5);

    Tensor<double> bad(1, 1, 2, 3);
    CHECK_THROWS_AS(
        ad::concat_channels<double>({Var<double>::leaf(a), Var<double>::leaf(bad)}),
        std::runtime_error);
}

TEST_CASE("elementwise examples") {
    Tensor<double> x(1, 1, 1, 2);
    x.data = {-1.0, 2.0};
    auto r = ad::relu(Var<double>::leaf(x));
    CHECK(r.value().data[0] == 0.0);
    CHECK(r.value().data[1] == 2.0);

    CHECK(ad::sigmoid(Var<double>::leaf(Tensor<double>::scalar(0.0))).value().data[0] ==
          doctest::Approx(0.5));

    Rng rng(19);
    Tensor<double> any = random_tensor(rng, 1, 2, 3, 3);
    auto zeroed = ad::scale(Var<double>::leaf(any), Var<double>::leaf(Tensor<double>::scalar(0.0)));
    for (double v : zeroed.value().data) CHECK(v == 0.0);

    Tensor<double> mismatched(1, 2, 3, 4);
    CHECK_THROWS_AS(ad::add(Var<double>::leaf(any), Var<double>::leaf(mismatched)),
                    std::runtime_error);
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(20);
    Tensor<double> x = random_tensor(rng, 2, 3, 8, 8);
    Tensor<double> k = random_tensor(rng, 4, 3, 3, 3);
    auto st = ad::BatchNormState<double>::create(4, "bn");
    auto y = ad::batch_norm(
        ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(k), ConvGeom{1, 1}), st, true);
    y = ad::bilinear_upsample(ad::relu(y), 12, 12);
    y = ad::sigmoid(y);
    CHECK(y.value().all_finite());
}
