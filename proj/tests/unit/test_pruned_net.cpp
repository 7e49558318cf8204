#include <doctest.h>

#include "sparsemask/fdn.hpp"
#include "sparsemask/rng.hpp"

using namespace sparsemask;

namespace {

EncoderSpec spec3() {
    EncoderSpec spec;
    spec.name = "t3";
    spec.stages = {{6, 2}, {8, 4}, {10, 8}};
    return spec;
}

FdnOptions opts() {
    FdnOptions o;
    o.num_classes = 3;
    return o;
}

}  // namespace

TEST_CASE("instantiating the unpruned graph mirrors the dense topology without gates/BN") {
    Fdn fdn = Fdn::build(spec3(), 8, opts(), 21);
    const PrunedArchitecture full = fdn.full_topology();
    PrunedNet net = PrunedNet::instantiate(full, opts(), 21);

    // same connectivity: one conv branch per candidate edge
    int fdn_branches = 0;
    for (const auto& e : fdn.read_gates().entries) {
        (void)e;
        ++fdn_branches;
    }
    int pruned_convs = 0;
    bool has_gate_or_branch_bn = false;
    for (const auto& [name, v] : net.named_params()) {
        if (name.rfind("dec.", 0) == 0) {
            if (name.find(".w") != std::string::npos) ++pruned_convs;
            // per-branch gates and BN must be gone; the stage-level out_bn
            // is not the removed bn_l^t
            if (name.find("theta") != std::string::npos ||
                (name.find(".bn") != std::string::npos &&
                 name.find("out_bn") == std::string::npos)) {
                has_gate_or_branch_bn = true;
            }
        }
    }
    CHECK(pruned_convs == fdn_branches);
    CHECK(!has_gate_or_branch_bn);
}

TEST_CASE("pruned net forward keeps the input resolution") {
    Fdn fdn = Fdn::build(spec3(), 8, opts(), 22);
    PrunedNet net = PrunedNet::instantiate(fdn.full_topology(), opts(), 22);
    Rng rng(1);
    Tensor<float> image(2, 3, 16, 16);
    for (auto& v : image.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor<float> logits = net.forward(image, true).value();
    CHECK(logits.n == 2);
    CHECK(logits.c == 3);
    CHECK(logits.h == 16);
    CHECK(logits.w == 16);
    CHECK(logits.all_finite());
}

TEST_CASE("dropping edges strictly reduces the parameter count") {
    Fdn fdn = Fdn::build(spec3(), 8, opts(), 23);
    const PrunedArchitecture full = fdn.full_topology();
    PrunedNet full_net = PrunedNet::instantiate(full, opts(), 23);

    PrunedArchitecture sparse = full;
    sparse.stages[0].inputs = {FeatureRef::encoder(1), FeatureRef::decoder(2)};
    sparse.validate();
    PrunedNet sparse_net = PrunedNet::instantiate(sparse, opts(), 23);
    CHECK(sparse_net.param_count() < full_net.param_count());
}

TEST_CASE("pruned net honors the fallback output stage") {
    PrunedArchitecture arch;
    arch.encoder = spec3();
    arch.decoder_channels = 8;
    arch.output_stage = 2;
    arch.sigma = 0.01;
    ArchStage s2;
    s2.l = 2;
    s2.inputs = {FeatureRef::encoder(2), FeatureRef::decoder(3)};
    ArchStage s3;
    s3.l = 3;
    s3.inputs = {FeatureRef::encoder(3), FeatureRef::global()};
    arch.stages = {s2, s3};
    arch.validate();

    PrunedNet net = PrunedNet::instantiate(arch, opts(), 24);
    Tensor<float> image(1, 3, 16, 16);
    const Tensor<float> logits = net.forward(image, false).value();
    CHECK(logits.h == 16);  // head upsamples from the stride-4 stage
    CHECK(logits.w == 16);
}
