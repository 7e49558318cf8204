#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "sparsemask/encoder_spec.hpp"
#include "sparsemask/gates.hpp"
#include "sparsemask/oracles.hpp"

namespace sparsemask {

struct ArchStage {
    int l = 0;
    std::vector<FeatureRef> inputs;
};

// The final sparse connectivity graph: kept decoder stages with their kept
// input edges. Gate values and per-branch BN are gone by this point; the
// retrained network is built from this description alone.
struct PrunedArchitecture {
    EncoderSpec encoder;
    int decoder_channels = 0;
    std::vector<ArchStage> stages;  // ascending stage index
    int output_stage = 0;
    double sigma = 0.0;
    long seed = 0;
    std::string config_digest;

    int edge_count() const;
    const ArchStage* find_stage(int l) const;
    oracles::PrunedGraph graph() const;

    // Enforces the structural invariants: stages non-empty with >= 1 input
    // each, edges reference existing features, every stage output consumed.
    void validate() const;
};

struct PruneContext {
    EncoderSpec encoder;
    int decoder_channels = 0;
    long seed = 0;
    std::string config_digest;
};

// Applies the three pruning rules: drop connections with w < sigma, then
// iterate dropping input-less stages and stages whose output nobody uses
// until stable. The lowest surviving stage is the output stage.
PrunedArchitecture prune(const GateMatrix& gm, double sigma, const PruneContext& ctx);

// Full search-space topology (every candidate edge present) in the same
// schema; used to retrain the unpruned network as a baseline.
PrunedArchitecture full_architecture(int num_stages, const PruneContext& ctx);

// Rule 2/3 fixpoint over per-stage input lists. Shared with the transfer
// step, which must re-validate the remapped graph.
std::set<int> rules23_fixpoint(int num_stages,
                               const std::map<int, std::vector<FeatureRef>>& inputs);

void export_architecture(const PrunedArchitecture& arch, const std::string& path);
PrunedArchitecture import_architecture(const std::string& path);
std::string architecture_to_json(const PrunedArchitecture& arch);
PrunedArchitecture architecture_from_json(const std::string& text);

}  // namespace sparsemask
