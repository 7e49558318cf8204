// Self-timed micro-benchmarks for the training hot path. Run with an
// optional substring filter: ./sparsemask_bench [filter] [--reps N]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "sparsemask/config.hpp"
#include "sparsemask/fdn.hpp"
#include "sparsemask/metrics.hpp"
#include "sparsemask/ops.hpp"
#include "sparsemask/rng.hpp"
#include "sparsemask/sparse_loss.hpp"
#include "sparsemask/tasks.hpp"

using namespace sparsemask;

namespace {

struct Bench {
    std::string name;
    std::function<void()> fn;
};

std::vector<Bench>& registry() {
    static std::vector<Bench> r;
    return r;
}

void bench(const std::string& name, std::function<void()> fn) {
    registry().push_back({name, std::move(fn)});
}

Tensor<float> random_input(int n, int c, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    std::string filter;
    int reps = 10;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
        else filter = argv[i];
    }

    // conv2d shapes from the default decoder/encoder
    const struct { int cin, cout, h, w, k; } conv_shapes[] = {
        {16, 16, 32, 32, 3},  // encoder stage 1 residual
        {16, 32, 32, 32, 3},  // decoder branch on E_1
        {96, 32, 4, 4, 3},    // decoder branch on E_4
        {32, 5, 32, 32, 1},   // head
    };
    for (const auto& s : conv_shapes) {
        char name[96];
        std::snprintf(name, sizeof(name), "conv2d fwd+bwd %dx%dx%dx%d k%d", s.cin, s.cout, s.h,
                      s.w, s.k);
        const auto shape = s;
        bench(name, [shape] {
            Tensor<float> x = random_input(8, shape.cin, shape.h, shape.w, 1);
            Rng rng(2);
            Tensor<float> k(shape.cout, shape.cin, shape.k, shape.k);
            for (auto& v : k.data) v = static_cast<float>(rng.normal(0.0, 0.05));
            VarF xv = VarF::leaf(std::move(x), true, "x");
            VarF kv = VarF::leaf(std::move(k), true, "k");
            VarF loss = ad::sum(ad::conv2d(xv, kv, ad::ConvGeom{1, (shape.k - 1) / 2}));
            ad::backward(loss);
        });
    }

    bench("bilinear_upsample fwd 8x32x16x16 -> 32x32", [] {
        VarF x = VarF::leaf(random_input(8, 32, 16, 16, 3), true, "x");
        VarF loss = ad::sum(ad::bilinear_upsample(x, 32, 32));
        ad::backward(loss);
    });

    bench("batch_norm fwd+bwd 8x32x16x16", [] {
        VarF x = VarF::leaf(random_input(8, 32, 16, 16, 4), true, "x");
        auto st = ad::BatchNormState<float>::create(32, "bn");
        VarF loss = ad::sum(ad::batch_norm(x, st, true));
        ad::backward(loss);
    });

    bench("dataset generate 64x64", [] {
        SyntheticTaskSpec spec;
        static int idx = 0;
        (void)generate(spec, idx++ % spec.total_samples());
    });

    {
        static Config cfg = default_config();
        static Fdn fdn = Fdn::build(cfg.encoder, cfg.decoder_channels, cfg.fdn_options(), 9);
        static Tensor<float> images = random_input(8, 3, 64, 64, 5);
        static LabelMap labels(8, 64, 64);
        for (std::size_t i = 0; i < labels.numel(); ++i) {
            labels.ids[i] = static_cast<std::int32_t>(i % cfg.task.num_classes);
        }
        bench("fdn full train step (fwd+loss+bwd, batch 8)", [] {
            VarF logits = fdn.forward(images, true);
            VarF task = ad::softmax_cross_entropy(logits, labels, kIgnoreLabel);
            SparseLossConfig lc;
            VarF loss = total_loss(task, fdn.gate_vectors(), lc);
            ad::backward(loss);
        });
        bench("fdn forward only (batch 8)", [] {
            (void)fdn.forward(images, false);
        });
    }

    for (const auto& b : registry()) {
        if (!filter.empty() && b.name.find(filter) == std::string::npos) continue;
        b.fn();  // warmup
        const auto start = std::chrono::steady_clock::now();
        for (int i = 0; i < reps; ++i) b.fn();
        const auto end = std::chrono::steady_clock::now();
        const double ms =
            std::chrono::duration_cast<std::chrono::microseconds>(end - start).count() /
            (1000.0 * reps);
        std::printf("%-55s %10.3f ms/iter\n", b.name.c_str(), ms);
    }
    return 0;
}
