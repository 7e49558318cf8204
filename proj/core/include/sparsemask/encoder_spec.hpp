#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sparsemask {

struct EncoderStageSpec {
    int channels = 0;
    int stride = 0;  // stride to the network input, power of two
};

// Declarative description of the encoder stages E_1..E_L plus the pooled
// feature G (always present).
struct EncoderSpec {
    std::string name;
    std::vector<EncoderStageSpec> stages;

    int num_stages() const { return static_cast<int>(stages.size()); }
    int max_stride() const { return stages.empty() ? 1 : stages.back().stride; }

    void validate() const {
        if (num_stages() < 2) {
            throw std::runtime_error("encoder spec '" + name + "': needs at least 2 stages");
        }
        int prev = 1;
        for (int i = 0; i < num_stages(); ++i) {
            const auto& s = stages[i];
            if (s.channels < 1) {
                throw std::runtime_error("encoder spec '" + name + "': stage " +
                                         std::to_string(i + 1) + " has no channels");
            }
            if (s.stride < 1 || (s.stride & (s.stride - 1)) != 0) {
                throw std::runtime_error("encoder spec '" + name + "': stage " +
                                         std::to_string(i + 1) + " stride " +
                                         std::to_string(s.stride) + " is not a power of two");
            }
            if (s.stride < prev) {
                throw std::runtime_error("encoder spec '" + name +
                                         "': strides must be non-decreasing");
            }
            prev = s.stride;
        }
    }
};

enum class FeatureKind { encoder, decoder, global };

// Addresses one node of the search space: E_l, D_l or G.
struct FeatureRef {
    FeatureKind kind = FeatureKind::encoder;
    int index = 0;  // 1-based stage index; 0 for the global feature

    static FeatureRef encoder(int l) { return {FeatureKind::encoder, l}; }
    static FeatureRef decoder(int l) { return {FeatureKind::decoder, l}; }
    static FeatureRef global() { return {FeatureKind::global, 0}; }

    bool operator==(const FeatureRef& o) const { return kind == o.kind && index == o.index; }
    bool operator<(const FeatureRef& o) const {
        if (kind != o.kind) return static_cast<int>(kind) < static_cast<int>(o.kind);
        return index < o.index;
    }

    std::string str() const {
        switch (kind) {
            case FeatureKind::encoder: return "E" + std::to_string(index);
            case FeatureKind::decoder: return "D" + std::to_string(index);
            case FeatureKind::global: return "G";
        }
        return "?";
    }
};

// Input feature set of decoder stage l:
//   {E_i | i >= l} u {D_i | i > l} u {G}
// in that order. Size is 2(L-l)+2.
inline std::vector<FeatureRef> candidate_sources(int num_stages, int l) {
    if (l < 1 || l > num_stages) {
        throw std::runtime_error("candidate_sources: stage " + std::to_string(l) +
                                 " out of range 1.." + std::to_string(num_stages));
    }
    std::vector<FeatureRef> out;
    for (int i = l; i <= num_stages; ++i) out.push_back(FeatureRef::encoder(i));
    for (int i = l + 1; i <= num_stages; ++i) out.push_back(FeatureRef::decoder(i));
    out.push_back(FeatureRef::global());
    return out;
}

// Total connection count over all stages: L(L+1).
inline int total_gate_count(int num_stages) { return num_stages * (num_stages + 1); }

}  // namespace sparsemask
