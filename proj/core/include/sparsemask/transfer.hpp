#pragma once

#include <vector>

#include "sparsemask/pruner.hpp"

namespace sparsemask {

// One row of the remapping report: source decoder stage -> target stage, or
// 0 when the stage had no spatial counterpart and was dropped.
struct TransferRow {
    int source_stage = 0;
    int source_stride = 0;
    int target_stage = 0;  // 0 means dropped
};

// Ports a discovered connectivity onto a different encoder by matching
// stage strides. Stages whose stride has no counterpart are dropped, the
// rule-2/3 fixpoint is re-applied, and the result re-validated.
PrunedArchitecture transfer_connectivity(const PrunedArchitecture& arch,
                                         const EncoderSpec& target,
                                         std::vector<TransferRow>* mapping = nullptr);

}  // namespace sparsemask
