#include "sparsemask/transfer.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace sparsemask {

namespace {

// Candidate ordering inside a stage: E ascending, D ascending, G last.
bool candidate_order(const FeatureRef& a, const FeatureRef& b) {
    auto rank = [](const FeatureRef& r) {
        switch (r.kind) {
            case FeatureKind::encoder: return 0;
            case FeatureKind::decoder: return 1;
            case FeatureKind::global: return 2;
        }
        return 3;
    };
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    return a.index < b.index;
}

}  // namespace

PrunedArchitecture transfer_connectivity(const PrunedArchitecture& arch,
                                         const EncoderSpec& target,
                                         std::vector<TransferRow>* mapping) {
    arch.validate();
    target.validate();

    // Stride -> target stage; when several target stages share a stride the
    // deepest one wins.
    std::map<int, int> target_by_stride;
    for (int j = 1; j <= target.num_stages(); ++j) {
        target_by_stride[target.stages[j - 1].stride] = j;
    }

    const int source_count = arch.encoder.num_stages();
    std::vector<int> enc_map(source_count + 1, 0);
    int matched = 0;
    for (int i = 1; i <= source_count; ++i) {
        auto it = target_by_stride.find(arch.encoder.stages[i - 1].stride);
        if (it != target_by_stride.end()) {
            enc_map[i] = it->second;
            ++matched;
        }
    }
    if (matched == 0) {
        throw std::runtime_error("transfer: no stage of '" + arch.encoder.name +
                                 "' matches any stride of '" + target.name + "'");
    }

    if (mapping) {
        mapping->clear();
        for (const auto& s : arch.stages) {
            TransferRow row;
            row.source_stage = s.l;
            row.source_stride = arch.encoder.stages[s.l - 1].stride;
            row.target_stage = enc_map[s.l];
            mapping->push_back(row);
        }
    }

    // Remap decoder stages and their edges; stages mapping to the same
    // target merge, failed matches drop.
    std::map<int, std::set<FeatureRef>> merged;
    for (const auto& s : arch.stages) {
        const int j = enc_map[s.l];
        if (j == 0) continue;
        for (const auto& in : s.inputs) {
            FeatureRef out = in;
            switch (in.kind) {
                case FeatureKind::encoder:
                    if (enc_map[in.index] == 0) continue;
                    out.index = enc_map[in.index];
                    if (out.index < j) continue;
                    break;
                case FeatureKind::decoder:
                    if (enc_map[in.index] == 0) continue;
                    out.index = enc_map[in.index];
                    if (out.index <= j) continue;  // merged into or below its consumer
                    break;
                case FeatureKind::global:
                    break;
            }
            merged[j].insert(out);
        }
    }

    std::map<int, std::vector<FeatureRef>> inputs;
    for (auto& [j, set] : merged) {
        std::vector<FeatureRef> list(set.begin(), set.end());
        std::sort(list.begin(), list.end(), candidate_order);
        inputs[j] = std::move(list);
    }

    std::set<int> alive = rules23_fixpoint(target.num_stages(), inputs);
    if (alive.empty()) {
        throw std::runtime_error("transfer: no decoder stage survives on '" + target.name + "'");
    }

    PrunedArchitecture out;
    out.encoder = target;
    out.decoder_channels = arch.decoder_channels;
    out.sigma = arch.sigma;
    out.seed = arch.seed;
    out.config_digest = arch.config_digest;
    out.output_stage = *alive.begin();
    for (int j : alive) {
        ArchStage s;
        s.l = j;
        for (const auto& src : inputs[j]) {
            if (src.kind == FeatureKind::decoder && !alive.count(src.index)) continue;
            s.inputs.push_back(src);
        }
        out.stages.push_back(std::move(s));
    }
    out.validate();
    return out;
}

}  // namespace sparsemask
