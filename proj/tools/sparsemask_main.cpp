#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsemask/config.hpp"
#include "sparsemask/pruner.hpp"
#include "sparsemask/trainer.hpp"
#include "sparsemask/transfer.hpp"
#include "sparsemask/verify.hpp"

namespace fs = std::filesystem;
using namespace sparsemask;

namespace {

Config load_or_default(const std::string& path, long seed_override) {
    Config cfg = path.empty() ? default_config() : load_config(path);
    if (seed_override >= 0) cfg.search.seed = seed_override;
    cfg.validate();
    return cfg;
}

// Target specs are either a bare encoder object or a full config file.
EncoderSpec load_encoder_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open encoder spec '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    auto j = nlohmann::ordered_json::parse(ss.str());
    if (j.contains("encoder")) j = j.at("encoder");
    EncoderSpec spec;
    spec.name = j.at("name").get<std::string>();
    for (const auto& st : j.at("stages")) {
        spec.stages.push_back({st.at("channels").get<int>(), st.at("stride").get<int>()});
    }
    spec.validate();
    return spec;
}

void print_search_summary(const SearchOutputs& out, const Config& cfg) {
    const auto& s = out.summary;
    std::printf("gates: %d total, %d within 0.1 of {0,1} (%.1f%%), %d below sigma=%g\n",
                s.total_gates, s.near_binary,
                100.0 * s.near_binary / std::max(1, s.total_gates), s.below_sigma,
                cfg.search.sigma);
    if (s.separation > 0.0) {
        std::printf("separation: smallest kept / largest dropped = %.1fx\n", s.separation);
    }
    std::printf("pruned architecture: %d of %d edges kept, output stage %d\n", s.kept_edges,
                s.total_gates, out.arch.output_stage);
    std::printf("final val miou: %.4f\n", out.final_val_miou);
    std::printf("wrote %s, %s, %s, %s\n", out.gates_csv.c_str(), out.arch_json.c_str(),
                out.full_json.c_str(), out.metrics_csv.c_str());
}

int cmd_search(const std::string& config_path, const std::string& out_dir, long seed) {
    const Config cfg = load_or_default(config_path, seed);
    const SearchOutputs out = run_search(cfg, out_dir);
    print_search_summary(out, cfg);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& arch_path,
              const std::string& out_dir, long seed, int epochs, const std::string& resume) {
    const Config cfg = load_or_default(config_path, seed);
    const PrunedArchitecture arch = import_architecture(arch_path);
    const TrainOutputs out = run_train(cfg, arch, out_dir, epochs, resume);
    std::printf("params: %zu\n", out.param_count);
    std::printf("final val miou: %.4f\n", out.final_val_miou);
    std::printf("wrote %s, %s\n", out.checkpoint_path.c_str(), out.metrics_csv.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& arch_path,
             const std::string& ckpt_path, const std::string& out_dir, long seed) {
    const Config cfg = load_or_default(config_path, seed);
    const PrunedArchitecture arch = import_architecture(arch_path);
    const EvalResult r = run_eval(cfg, arch, ckpt_path);
    std::printf("val miou: %.4f\n", r.miou);
    std::printf("val pixel_acc: %.4f\n", r.pixel_acc);
    if (r.mae >= 0.0) {
        std::printf("val mae: %.4f\n", r.mae);
        std::printf("val f_beta: %.4f\n", r.f_beta);
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        MetricsCsv csv((fs::path(out_dir) / "metrics.csv").string(), config_digest(cfg));
        csv.row(0, "val", "miou", r.miou);
        csv.row(0, "val", "pixel_acc", r.pixel_acc);
        if (r.mae >= 0.0) {
            csv.row(0, "val", "mae", r.mae);
            csv.row(0, "val", "f_beta", r.f_beta);
        }
    }
    return 0;
}

int cmd_prune(const std::string& config_path, const std::string& gates_path, double sigma,
              const std::string& out_dir, long seed) {
    const Config cfg = load_or_default(config_path, seed);
    const GateMatrix gm = read_gate_csv(gates_path);
    const double sig = sigma > 0.0 ? sigma : cfg.search.sigma;
    PruneContext ctx{cfg.encoder, cfg.decoder_channels, cfg.search.seed, config_digest(cfg)};
    const PrunedArchitecture arch = prune(gm, sig, ctx);
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "architecture.json").string();
    export_architecture(arch, path);
    std::printf("kept %d of %zu edges at sigma=%g, output stage %d\n", arch.edge_count(),
                gm.entries.size(), sig, arch.output_stage);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_transfer(const std::string& arch_path, const std::string& target_path,
                 const std::string& out_dir) {
    const PrunedArchitecture arch = import_architecture(arch_path);
    const EncoderSpec target = load_encoder_spec(target_path);
    std::vector<TransferRow> mapping;
    const PrunedArchitecture out = transfer_connectivity(arch, target, &mapping);
    for (const auto& row : mapping) {
        if (row.target_stage > 0) {
            std::printf("stage %d (stride %d) -> target stage %d\n", row.source_stage,
                        row.source_stride, row.target_stage);
        } else {
            std::printf("stage %d (stride %d) -> DROPPED\n", row.source_stage,
                        row.source_stride);
        }
    }
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "architecture.json").string();
    export_architecture(out, path);
    std::printf("transferred %d stages, %d edges onto '%s'\n",
                static_cast<int>(out.stages.size()), out.edge_count(), target.name.c_str());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_verify() {
    const auto results = verify::run_all_checks();
    int failures = 0;
    for (const auto& r : results) {
        if (r.pass) {
            std::printf("PASS  %-55s max_err=%.3e\n", r.name.c_str(), r.max_err);
        } else {
            ++failures;
            std::printf("FAIL  %-55s max_err=%.3e (%s)\n", r.name.c_str(), r.max_err,
                        r.detail.c_str());
        }
    }
    std::printf("%d/%d checks passed\n", static_cast<int>(results.size()) - failures,
                static_cast<int>(results.size()));
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparsemask: differentiable connectivity search for dense prediction"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", arch_path, gates_path, ckpt_path, target_path,
                resume_path;
    long seed = -1;
    int epochs = 0;
    double sigma = 0.0;

    auto* search = app.add_subcommand("search", "train the dense network and prune it");
    search->add_option("--config", config_path, "config JSON (defaults to the built-in config)");
    search->add_option("--out", out_dir, "output directory");
    search->add_option("--seed", seed, "override search seed");

    auto* train = app.add_subcommand("train", "retrain a discovered architecture");
    train->add_option("--config", config_path, "config JSON");
    train->add_option("--arch", arch_path, "architecture JSON")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--seed", seed, "override seed");
    train->add_option("--epochs", epochs, "override retrain epochs");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    eval->add_option("--config", config_path, "config JSON");
    eval->add_option("--arch", arch_path, "architecture JSON")->required();
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--out", out_dir, "optional metrics output directory");
    eval->add_option("--seed", seed, "override seed");

    auto* prune_cmd = app.add_subcommand("prune", "prune a gate matrix into an architecture");
    prune_cmd->add_option("--config", config_path, "config JSON");
    prune_cmd->add_option("--gates", gates_path, "gate CSV from search")->required();
    prune_cmd->add_option("--sigma", sigma, "threshold override");
    prune_cmd->add_option("--out", out_dir, "output directory");
    prune_cmd->add_option("--seed", seed, "override seed");

    auto* transfer_cmd = app.add_subcommand("transfer", "port connectivity to another encoder");
    transfer_cmd->add_option("--arch", arch_path, "architecture JSON")->required();
    transfer_cmd->add_option("--target", target_path, "target encoder spec JSON")->required();
    transfer_cmd->add_option("--out", out_dir, "output directory");

    auto* verify_cmd = app.add_subcommand("verify", "run the oracle/gradient/identity suite");
    (void)verify_cmd;

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("search")) return cmd_search(config_path, out_dir, seed);
        if (app.got_subcommand("train")) {
            return cmd_train(config_path, arch_path, out_dir, seed, epochs, resume_path);
        }
        if (app.got_subcommand("eval")) {
            return cmd_eval(config_path, arch_path, ckpt_path, out_dir, seed);
        }
        if (app.got_subcommand("prune")) {
            return cmd_prune(config_path, gates_path, sigma, out_dir, seed);
        }
        if (app.got_subcommand("transfer")) {
            return cmd_transfer(arch_path, target_path, out_dir);
        }
        if (app.got_subcommand("verify")) return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
