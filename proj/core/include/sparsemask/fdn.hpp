#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sparsemask/encoder_spec.hpp"
#include "sparsemask/gates.hpp"
#include "sparsemask/ops.hpp"
#include "sparsemask/pruner.hpp"
#include "sparsemask/rng.hpp"

namespace sparsemask {

using VarF = ad::Var<float>;
using FeatureMap = std::map<FeatureRef, VarF>;

enum class DecoderActivation { relu, none };

struct FdnOptions {
    int num_classes = 2;
    DecoderActivation activation = DecoderActivation::relu;
    bool pointwise = false;  // 1x1 branch convs instead of 3x3
};

struct ConvBnBlock {
    VarF weight;
    ad::BatchNormState<float> bn;
    int stride = 1;
    int padding = 1;
};

struct EncoderStageNet {
    std::vector<ConvBnBlock> down;  // resolution-reducing convs
    ConvBnBlock res;                // one 3x3 residual block
};

// Small trainable conv stack standing in for a pre-trained classifier:
// per stage a stride-2 3x3 conv + BN + relu chain, then a residual block.
struct EncoderNet {
    EncoderSpec spec;
    std::vector<EncoderStageNet> stages;

    static EncoderNet build(const EncoderSpec& spec, int in_channels, Rng& rng);
    std::vector<VarF> forward(const VarF& image, bool training);
    void named_params(std::vector<std::pair<std::string, VarF>>& out) const;
    void named_buffers(std::vector<std::pair<std::string, std::vector<float>*>>& out);
};

// One gated connection of the dense decoder: conv -> BN -> (upsample) scaled
// by w = sigmoid(theta).
struct Branch {
    FeatureRef source;
    VarF conv_w;
    ad::BatchNormState<float> bn;
    VarF theta;
};

struct DecoderStageNet {
    int l = 0;
    std::vector<Branch> branches;  // candidate order
};

struct HeadNet {
    VarF weight;
    VarF bias;
};

// The searchable Fully Dense Network: every decoder stage connected to all
// of its candidate features through gated branches.
class Fdn {
public:
    static Fdn build(const EncoderSpec& spec, int decoder_channels, const FdnOptions& options,
                     std::uint64_t seed);

    // Full forward pass to logits at input resolution.
    VarF forward(const Tensor<float>& image, bool training);

    // D_l = act( sum_t sigmoid(theta_l^t) * up(bn(conv(t))) ); features must
    // contain every candidate source of stage l.
    VarF decoder_stage_forward(int l, const FeatureMap& features, bool training);

    GateMatrix read_gates() const;
    std::vector<VarF> gate_vectors() const;  // per stage, ascending l

    std::vector<VarF> encoder_params() const;
    std::vector<VarF> decoder_params() const;  // branch convs + BN + head
    std::vector<VarF> gate_params() const;
    std::vector<std::pair<std::string, VarF>> named_params() const;
    std::vector<std::pair<std::string, std::vector<float>*>> named_buffers();

    PrunedArchitecture full_topology() const;
    std::size_t param_count() const;

    int num_stages() const { return spec_.num_stages(); }
    const EncoderSpec& spec() const { return spec_; }
    int decoder_channels() const { return decoder_channels_; }
    const FdnOptions& options() const { return options_; }
    std::uint64_t seed() const { return seed_; }

    // Test hook: overwrite one gate logit (e.g. -inf forces w = 0 exactly).
    void set_gate_logit(int l, const FeatureRef& source, float logit);
    DecoderStageNet& stage(int l);

private:
    EncoderSpec spec_;
    int decoder_channels_ = 0;
    FdnOptions options_;
    std::uint64_t seed_ = 0;
    EncoderNet encoder_;
    std::vector<DecoderStageNet> decoder_;  // ascending l
    HeadNet head_;
};

// The discovered architecture instantiated for retraining: per kept edge a
// biased conv branch, no gates, no branch BN.
class PrunedNet {
public:
    static PrunedNet instantiate(const PrunedArchitecture& arch, const FdnOptions& options,
                                 std::uint64_t seed);

    VarF forward(const Tensor<float>& image, bool training);

    std::vector<VarF> encoder_params() const;
    std::vector<VarF> decoder_params() const;
    std::vector<std::pair<std::string, VarF>> named_params() const;
    std::vector<std::pair<std::string, std::vector<float>*>> named_buffers();
    std::size_t param_count() const;

    const PrunedArchitecture& arch() const { return arch_; }

private:
    struct PrunedBranch {
        FeatureRef source;
        VarF weight;
    };
    // Branch sums are renormalized once per stage (the per-branch BN of the
    // search phase is gone with the gates).
    struct PrunedStageNet {
        int l = 0;
        std::vector<PrunedBranch> branches;
        ad::BatchNormState<float> out_bn;
    };

    PrunedArchitecture arch_;
    FdnOptions options_;
    EncoderNet encoder_;
    std::vector<PrunedStageNet> decoder_;  // ascending l
    HeadNet head_;
};

}  // namespace sparsemask
