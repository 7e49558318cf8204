#pragma once

#include <string>
#include <vector>

#include "sparsemask/encoder_spec.hpp"

namespace sparsemask {

struct GateEntry {
    int stage = 0;
    FeatureRef source;
    double value = 0.0;  // connection weight in (0,1)
};

// Continuous connection weights {w_l^t}, ordered by stage then candidate
// order. This is the object the sparse loss shapes and the pruner reads.
struct GateMatrix {
    int num_stages = 0;
    std::vector<GateEntry> entries;

    std::vector<double> stage_values(int l) const {
        std::vector<double> out;
        for (const auto& e : entries) {
            if (e.stage == l) out.push_back(e.value);
        }
        return out;
    }

    bool operator==(const GateMatrix& o) const {
        if (num_stages != o.num_stages || entries.size() != o.entries.size()) return false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].stage != o.entries[i].stage ||
                !(entries[i].source == o.entries[i].source) ||
                entries[i].value != o.entries[i].value) {
                return false;
            }
        }
        return true;
    }
};

// CSV columns: stage,source_kind,source_index,gate_value. Values are printed
// with full precision so a read back reproduces the matrix exactly.
void write_gate_csv(const GateMatrix& gm, const std::string& path,
                    const std::string& config_digest = "");
GateMatrix read_gate_csv(const std::string& path);

}  // namespace sparsemask
