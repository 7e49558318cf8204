#include "sparsemask/fdn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sparsemask {

namespace {

VarF he_conv(int cout, int cin, int kh, int kw, Rng& rng, const std::string& name,
             double gain = 1.0) {
    Tensor<float> w(cout, cin, kh, kw);
    const double stddev = gain * std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw));
    for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, stddev));
    return VarF::leaf(std::move(w), true, name);
}

ConvBnBlock make_conv_bn(int cout, int cin, int k, int stride, Rng& rng,
                         const std::string& name) {
    ConvBnBlock b;
    b.weight = he_conv(cout, cin, k, k, rng, name + ".w");
    b.bn = ad::BatchNormState<float>::create(cout, name + ".bn");
    b.stride = stride;
    b.padding = (k - 1) / 2;
    return b;
}

VarF conv_bn_relu(const VarF& x, ConvBnBlock& blk, bool training) {
    VarF y = ad::conv2d(x, blk.weight, ad::ConvGeom{blk.stride, blk.padding});
    y = ad::batch_norm(y, blk.bn, training);
    return ad::relu(y);
}

int log2_exact(int v) {
    int p = 0;
    while ((1 << p) < v) ++p;
    return p;
}

void bn_buffers(ad::BatchNormState<float>& bn, const std::string& name,
                std::vector<std::pair<std::string, std::vector<float>*>>& out) {
    out.emplace_back(name + ".running_mean", &bn.running_mean);
    out.emplace_back(name + ".running_var", &bn.running_var);
}

}  // namespace

// ---------------------------------------------------------------------------
// EncoderNet
// ---------------------------------------------------------------------------

EncoderNet EncoderNet::build(const EncoderSpec& spec, int in_channels, Rng& rng) {
    spec.validate();
    EncoderNet net;
    net.spec = spec;
    int prev_c = in_channels;
    int prev_stride = 1;
    for (int l = 1; l <= spec.num_stages(); ++l) {
        const auto& st = spec.stages[l - 1];
        EncoderStageNet stage;
        const int ratio = st.stride / prev_stride;
        const int steps = std::max(1, log2_exact(ratio));
        for (int k = 0; k < steps; ++k) {
            const int cin = (k == 0) ? prev_c : st.channels;
            const int stride = (ratio == 1) ? 1 : 2;
            stage.down.push_back(make_conv_bn(st.channels, cin, 3, stride, rng,
                                              "enc.s" + std::to_string(l) + ".down" +
                                                  std::to_string(k)));
        }
        stage.res = make_conv_bn(st.channels, st.channels, 3, 1, rng,
                                 "enc.s" + std::to_string(l) + ".res");
        net.stages.push_back(std::move(stage));
        prev_c = st.channels;
        prev_stride = st.stride;
    }
    return net;
}

std::vector<VarF> EncoderNet::forward(const VarF& image, bool training) {
    std::vector<VarF> features;
    VarF x = image;
    for (auto& stage : stages) {
        for (auto& blk : stage.down) x = conv_bn_relu(x, blk, training);
        VarF r = ad::conv2d(x, stage.res.weight, ad::ConvGeom{1, stage.res.padding});
        r = ad::batch_norm(r, stage.res.bn, training);
        x = ad::relu(ad::add(x, r));
        features.push_back(x);
    }
    return features;
}

void EncoderNet::named_params(std::vector<std::pair<std::string, VarF>>& out) const {
    for (const auto& stage : stages) {
        for (const auto& blk : stage.down) {
            out.emplace_back(blk.weight.name(), blk.weight);
            out.emplace_back(blk.bn.gamma.name(), blk.bn.gamma);
            out.emplace_back(blk.bn.beta.name(), blk.bn.beta);
        }
        out.emplace_back(stage.res.weight.name(), stage.res.weight);
        out.emplace_back(stage.res.bn.gamma.name(), stage.res.bn.gamma);
        out.emplace_back(stage.res.bn.beta.name(), stage.res.bn.beta);
    }
}

void EncoderNet::named_buffers(std::vector<std::pair<std::string, std::vector<float>*>>& out) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const std::string base = "enc.s" + std::to_string(i + 1);
        for (std::size_t k = 0; k < stages[i].down.size(); ++k) {
            bn_buffers(stages[i].down[k].bn, base + ".down" + std::to_string(k) + ".bn", out);
        }
        bn_buffers(stages[i].res.bn, base + ".res.bn", out);
    }
}

// ---------------------------------------------------------------------------
// Fdn
// ---------------------------------------------------------------------------

Fdn Fdn::build(const EncoderSpec& spec, int decoder_channels, const FdnOptions& options,
               std::uint64_t seed) {
    spec.validate();
    if (decoder_channels < 1) throw std::runtime_error("build_fdn: decoder_channels must be >= 1");
    if (options.num_classes < 2) throw std::runtime_error("build_fdn: need at least 2 classes");

    Fdn fdn;
    fdn.spec_ = spec;
    fdn.decoder_channels_ = decoder_channels;
    fdn.options_ = options;
    fdn.seed_ = seed;

    Rng rng(mix_seed(seed, 0xfd17));
    fdn.encoder_ = EncoderNet::build(spec, 3, rng);

    const int L = spec.num_stages();
    const int k = options.pointwise ? 1 : 3;
    for (int l = 1; l <= L; ++l) {
        DecoderStageNet stage;
        stage.l = l;
        for (const FeatureRef& src : candidate_sources(L, l)) {
            Branch b;
            b.source = src;
            int src_c = 0;
            switch (src.kind) {
                case FeatureKind::encoder: src_c = spec.stages[src.index - 1].channels; break;
                case FeatureKind::decoder: src_c = decoder_channels; break;
                case FeatureKind::global: src_c = spec.stages[L - 1].channels; break;
            }
            const std::string base = "dec.l" + std::to_string(l) + "." + src.str();
            b.conv_w = he_conv(decoder_channels, src_c, k, k, rng, base + ".conv.w");
            b.bn = ad::BatchNormState<float>::create(decoder_channels, base + ".bn");
            b.theta = VarF::leaf(Tensor<float>::scalar(0.0f), true, base + ".theta");
            stage.branches.push_back(std::move(b));
        }
        fdn.decoder_.push_back(std::move(stage));
    }

    fdn.head_.weight = he_conv(options.num_classes, decoder_channels, 1, 1, rng, "head.w");
    fdn.head_.bias = VarF::leaf(Tensor<float>(1, options.num_classes, 1, 1), true, "head.b");
    return fdn;
}

DecoderStageNet& Fdn::stage(int l) {
    for (auto& s : decoder_) {
        if (s.l == l) return s;
    }
    throw std::runtime_error("fdn: no decoder stage " + std::to_string(l));
}

VarF Fdn::decoder_stage_forward(int l, const FeatureMap& features, bool training) {
    DecoderStageNet& stage = this->stage(l);
    auto target_it = features.find(FeatureRef::encoder(l));
    if (target_it == features.end()) {
        throw std::runtime_error("decoder stage " + std::to_string(l) + ": missing feature E" +
                                 std::to_string(l));
    }
    const int th = target_it->second.value().h;
    const int tw = target_it->second.value().w;

    VarF acc;
    for (Branch& b : stage.branches) {
        auto it = features.find(b.source);
        if (it == features.end()) {
            throw std::runtime_error("decoder stage " + std::to_string(l) +
                                     ": missing feature " + b.source.str());
        }
        VarF y = ad::conv2d(it->second, b.conv_w,
                            ad::ConvGeom{1, options_.pointwise ? 0 : 1});
        y = ad::batch_norm(y, b.bn, training);
        if (y.value().h != th || y.value().w != tw) y = ad::bilinear_upsample(y, th, tw);
        y = ad::scale(y, ad::sigmoid(b.theta));
        acc = acc.defined() ? ad::add(acc, y) : y;
    }
    if (options_.activation == DecoderActivation::relu) acc = ad::relu(acc);
    return acc;
}

VarF Fdn::forward(const Tensor<float>& image, bool training) {
    const int ms = spec_.max_stride();
    if (image.h % ms != 0 || image.w % ms != 0) {
        throw std::runtime_error("fdn forward: input " + image.shape_str() +
                                 " not divisible by encoder stride " + std::to_string(ms));
    }
    VarF x = VarF::leaf(image);
    std::vector<VarF> enc = encoder_.forward(x, training);

    FeatureMap features;
    const int L = spec_.num_stages();
    for (int l = 1; l <= L; ++l) features[FeatureRef::encoder(l)] = enc[l - 1];
    features[FeatureRef::global()] = ad::global_avg_pool(enc[L - 1]);
    for (int l = L; l >= 1; --l) {
        features[FeatureRef::decoder(l)] = decoder_stage_forward(l, features, training);
    }

    VarF logits = ad::conv2d(features[FeatureRef::decoder(1)], head_.weight, head_.bias,
                             ad::ConvGeom{1, 0});
    if (logits.value().h != image.h || logits.value().w != image.w) {
        logits = ad::bilinear_upsample(logits, image.h, image.w);
    }
    return logits;
}

GateMatrix Fdn::read_gates() const {
    GateMatrix gm;
    gm.num_stages = num_stages();
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) {
            GateEntry e;
            e.stage = stage.l;
            e.source = b.source;
            // Read in double so finite logits stay strictly inside (0,1).
            e.value = 1.0 / (1.0 + std::exp(-static_cast<double>(b.theta.value().data[0])));
            gm.entries.push_back(e);
        }
    }
    return gm;
}

std::vector<VarF> Fdn::gate_vectors() const {
    std::vector<VarF> out;
    for (const auto& stage : decoder_) {
        std::vector<VarF> gates;
        for (const auto& b : stage.branches) gates.push_back(ad::sigmoid(b.theta));
        out.push_back(ad::concat_scalars(gates));
    }
    return out;
}

std::vector<VarF> Fdn::encoder_params() const {
    std::vector<std::pair<std::string, VarF>> named;
    encoder_.named_params(named);
    std::vector<VarF> out;
    for (auto& [n, v] : named) out.push_back(v);
    return out;
}

std::vector<VarF> Fdn::decoder_params() const {
    std::vector<VarF> out;
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) {
            out.push_back(b.conv_w);
            out.push_back(b.bn.gamma);
            out.push_back(b.bn.beta);
        }
    }
    out.push_back(head_.weight);
    out.push_back(head_.bias);
    return out;
}

std::vector<VarF> Fdn::gate_params() const {
    std::vector<VarF> out;
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) out.push_back(b.theta);
    }
    return out;
}

std::vector<std::pair<std::string, VarF>> Fdn::named_params() const {
    std::vector<std::pair<std::string, VarF>> out;
    encoder_.named_params(out);
    for (const auto& stage : decoder_) {
        for (const auto& b : stage.branches) {
            out.emplace_back(b.conv_w.name(), b.conv_w);
            out.emplace_back(b.bn.gamma.name(), b.bn.gamma);
            out.emplace_back(b.bn.beta.name(), b.bn.beta);
            out.emplace_back(b.theta.name(), b.theta);
        }
    }
    out.emplace_back("head.w", head_.weight);
    out.emplace_back("head.b", head_.bias);
    return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> Fdn::named_buffers() {
    std::vector<std::pair<std::string, std::vector<float>*>> out;
    encoder_.named_buffers(out);
    for (auto& stage : decoder_) {
        for (auto& b : stage.branches) {
            bn_buffers(b.bn, "dec.l" + std::to_string(stage.l) + "." + b.source.str() + ".bn",
                       out);
        }
    }
    return out;
}

PrunedArchitecture Fdn::full_topology() const {
    PruneContext ctx;
    ctx.encoder = spec_;
    ctx.decoder_channels = decoder_channels_;
    ctx.seed = static_cast<long>(seed_);
    return full_architecture(num_stages(), ctx);
}

std::size_t Fdn::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : named_params()) n += v.value().numel();
    return n;
}

void Fdn::set_gate_logit(int l, const FeatureRef& source, float logit) {
    for (Branch& b : stage(l).branches) {
        if (b.source == source) {
            b.theta.value().data[0] = logit;
            return;
        }
    }
    throw std::runtime_error("fdn: stage " + std::to_string(l) + " has no source " +
                             source.str());
}

}  // namespace sparsemask
