#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sparsemask/config.hpp"
#include "sparsemask/fdn.hpp"
#include "sparsemask/metrics.hpp"
#include "sparsemask/optimizer.hpp"
#include "sparsemask/pruner.hpp"
#include "sparsemask/tasks.hpp"

namespace sparsemask {

struct EvalResult {
    double miou = 0.0;
    double pixel_acc = 0.0;
    double mae = -1.0;     // binary tasks only
    double f_beta = -1.0;  // binary tasks only
};

// Validation split, optionally round-tripped through the dataset cache.
std::vector<Sample> materialize_val(const SyntheticTaskSpec& spec, const std::string& cache_dir);

EvalResult evaluate_forward(const std::function<Tensor<float>(const Tensor<float>&)>& forward,
                            const std::vector<Sample>& val, const SyntheticTaskSpec& spec,
                            int batch);

// Per-epoch metric rows: epoch,split,metric,value with the config digest in
// a leading comment.
class MetricsCsv {
public:
    MetricsCsv() = default;
    MetricsCsv(const std::string& path, const std::string& digest);
    void row(int epoch, const std::string& split, const std::string& metric, double value);

private:
    std::shared_ptr<std::ofstream> out_;
};

struct SparsitySummary {
    int total_gates = 0;
    int near_binary = 0;       // within 0.1 of {0,1}
    int below_sigma = 0;
    double separation = -1.0;  // min kept gate / max dropped gate at sigma
    int kept_edges = 0;        // edges surviving the full prune
};

SparsitySummary summarize_gates(const GateMatrix& gm, double sigma, int kept_edges);

// ---------------------------------------------------------------------------
// connectivity search (step 1 + 2 + 3 of the pipeline)
// ---------------------------------------------------------------------------

class SearchSession {
public:
    explicit SearchSession(const Config& cfg);

    double run_epoch();  // mean total loss over the epoch
    EvalResult evaluate();
    int epoch() const { return epoch_; }

    Fdn& fdn() { return fdn_; }
    const Config& config() const { return cfg_; }

private:
    Config cfg_;
    std::string digest_;
    Fdn fdn_;
    std::unique_ptr<SgdOptimizer> opt_;
    std::vector<Sample> val_;
    int epoch_ = 0;
    int steps_per_epoch_ = 0;
};

struct SearchOutputs {
    GateMatrix gates;
    PrunedArchitecture arch;
    SparsitySummary summary;
    double final_val_miou = 0.0;
    std::string gates_csv, arch_json, full_json, metrics_csv;
};

SearchOutputs run_search(const Config& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// retraining a discovered architecture (task loss only)
// ---------------------------------------------------------------------------

class TrainSession {
public:
    TrainSession(const Config& cfg, const PrunedArchitecture& arch);

    double run_epoch();
    EvalResult evaluate();
    int epoch() const { return epoch_; }
    std::size_t param_count() const { return net_.param_count(); }
    PrunedNet& net() { return net_; }

    void save_checkpoint(const std::string& path);
    void load_checkpoint(const std::string& path);

private:
    Config cfg_;
    std::string digest_;
    PrunedArchitecture arch_;
    PrunedNet net_;
    std::unique_ptr<SgdOptimizer> opt_;
    std::vector<Sample> val_;
    int epoch_ = 0;
    int steps_per_epoch_ = 0;
};

struct TrainOutputs {
    double final_val_miou = 0.0;
    std::size_t param_count = 0;
    std::vector<double> epoch_losses;
    std::string checkpoint_path, metrics_csv;
};

TrainOutputs run_train(const Config& cfg, const PrunedArchitecture& arch,
                       const std::string& out_dir, int epochs_override = 0,
                       const std::string& resume_path = "");

EvalResult run_eval(const Config& cfg, const PrunedArchitecture& arch,
                    const std::string& checkpoint_path);

}  // namespace sparsemask
