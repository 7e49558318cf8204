#include <cmath>
#include <stdexcept>

#include "sparsemask/fdn.hpp"

namespace sparsemask {

namespace {

VarF he_conv_scaled(int cout, int cin, int kh, int kw, double gain, Rng& rng,
                    const std::string& name) {
    Tensor<float> w(cout, cin, kh, kw);
    const double stddev = gain * std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw));
    for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, stddev));
    return VarF::leaf(std::move(w), true, name);
}

}  // namespace

PrunedNet PrunedNet::instantiate(const PrunedArchitecture& arch, const FdnOptions& options,
                                 std::uint64_t seed) {
    arch.validate();
    PrunedNet net;
    net.arch_ = arch;
    net.options_ = options;

    Rng rng(mix_seed(seed, 0x9421));
    net.encoder_ = EncoderNet::build(arch.encoder, 3, rng);

    const int L = arch.encoder.num_stages();
    const int k = options.pointwise ? 1 : 3;
    for (const auto& st : arch.stages) {
        PrunedStageNet stage;
        stage.l = st.l;
        // Branch outputs are summed raw (no gate, no BN); scaling the init
        // by 1/sqrt(#branches) keeps stage variance independent of fan-in.
        const double gain = 1.0 / std::sqrt(static_cast<double>(st.inputs.size()));
        for (const FeatureRef& src : st.inputs) {
            PrunedBranch b;
            b.source = src;
            int src_c = 0;
            switch (src.kind) {
                case FeatureKind::encoder: src_c = arch.encoder.stages[src.index - 1].channels; break;
                case FeatureKind::decoder: src_c = arch.decoder_channels; break;
                case FeatureKind::global: src_c = arch.encoder.stages[L - 1].channels; break;
            }
            const std::string base = "dec.l" + std::to_string(st.l) + "." + src.str();
            b.weight = he_conv_scaled(arch.decoder_channels, src_c, k, k, gain, rng, base + ".w");
            stage.branches.push_back(std::move(b));
        }
        stage.out_bn = ad::BatchNormState<float>::create(
            arch.decoder_channels, "dec.l" + std::to_string(st.l) + ".out_bn");
        net.decoder_.push_back(std::move(stage));
    }

    net.head_.weight =
        he_conv_scaled(options.num_classes, arch.decoder_channels, 1, 1, 1.0, rng, "head.w");
    net.head_.bias = VarF::leaf(Tensor<float>(1, options.num_classes, 1, 1), true, "head.b");
    return net;
}

VarF PrunedNet::forward(const Tensor<float>& image, bool training) {
    const int ms = arch_.encoder.max_stride();
    if (image.h % ms != 0 || image.w % ms != 0) {
        throw std::runtime_error("pruned net forward: input " + image.shape_str() +
                                 " not divisible by encoder stride " + std::to_string(ms));
    }
    VarF x = VarF::leaf(image);
    std::vector<VarF> enc = encoder_.forward(x, training);

    FeatureMap features;
    const int L = arch_.encoder.num_stages();
    for (int l = 1; l <= L; ++l) features[FeatureRef::encoder(l)] = enc[l - 1];
    features[FeatureRef::global()] = ad::global_avg_pool(enc[L - 1]);

    for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
        PrunedStageNet& stage = *it;
        const VarF& target = features.at(FeatureRef::encoder(stage.l));
        const int th = target.value().h, tw = target.value().w;
        VarF acc;
        for (PrunedBranch& b : stage.branches) {
            auto fit = features.find(b.source);
            if (fit == features.end()) {
                throw std::runtime_error("pruned net: stage " + std::to_string(stage.l) +
                                         " missing feature " + b.source.str());
            }
            VarF y = ad::conv2d(fit->second, b.weight,
                                ad::ConvGeom{1, options_.pointwise ? 0 : 1});
            if (y.value().h != th || y.value().w != tw) y = ad::bilinear_upsample(y, th, tw);
            acc = acc.defined() ? ad::add(acc, y) : y;
        }
        acc = ad::batch_norm(acc, stage.out_bn, training);
        if (options_.activation == DecoderActivation::relu) acc = ad::relu(acc);
        features[FeatureRef::decoder(stage.l)] = acc;
    }

    VarF out_feature = features.at(FeatureRef::decoder(arch_.output_stage));
    VarF logits = ad::conv2d(out_feature, head_.weight, head_.bias, ad::ConvGeom{1, 0});
    if (logits.value().h != image.h || logits.value().w != image.w) {
        logits = ad::bilinear_upsample(logits, image.h, image.w);
    }
    return logits;
}

std::vector<VarF> PrunedNet::encoder_params() const {
    std::vector<std::pair<std::string, VarF>> named;
    encoder_.named_params(named);
    std::vector<VarF> out;
    for (auto& [n, v] : named) out.push_back(v);
    return out;
}

std::vector<VarF> PrunedNet::decoder_params() const {
    std::vector<VarF> out;
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) out.push_back(b.weight);
        out.push_back(stage.out_bn.gamma);
        out.push_back(stage.out_bn.beta);
    }
    out.push_back(head_.weight);
    out.push_back(head_.bias);
    return out;
}

std::vector<std::pair<std::string, VarF>> PrunedNet::named_params() const {
    std::vector<std::pair<std::string, VarF>> out;
    encoder_.named_params(out);
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) out.emplace_back(b.weight.name(), b.weight);
        out.emplace_back(stage.out_bn.gamma.name(), stage.out_bn.gamma);
        out.emplace_back(stage.out_bn.beta.name(), stage.out_bn.beta);
    }
    out.emplace_back("head.w", head_.weight);
    out.emplace_back("head.b", head_.bias);
    return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> PrunedNet::named_buffers() {
    std::vector<std::pair<std::string, std::vector<float>*>> out;
    encoder_.named_buffers(out);
    for (auto& stage : decoder_) {
        const std::string base = "dec.l" + std::to_string(stage.l) + ".out_bn";
        out.emplace_back(base + ".running_mean", &stage.out_bn.running_mean);
        out.emplace_back(base + ".running_var", &stage.out_bn.running_var);
    }
    return out;
}

std::size_t PrunedNet::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : named_params()) n += v.value().numel();
    return n;
}

}  // namespace sparsemask
