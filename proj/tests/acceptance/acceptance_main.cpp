// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Heavy criteria drive the CLI binary the
// way a user would; their artifacts are shared within one invocation.
//
// Usage: acceptance_tests [A1 A2 ...]   (no args: run everything)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sparsemask/config.hpp"
#include "sparsemask/gates.hpp"
#include "sparsemask/pruner.hpp"
#include "sparsemask/transfer.hpp"
#include "sparsemask/verify.hpp"

using namespace sparsemask;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string id;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

fs::path work_dir() {
    const char* env = std::getenv("SPARSEMASK_WORK");
    fs::path dir = env ? fs::path(env) : fs::path("acceptance_work");
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(SPARSEMASK_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    return std::system(cmd.c_str());
}

bool all_pass(const std::vector<verify::CheckResult>& rs, std::string& detail) {
    double worst = 0.0;
    bool ok = true;
    for (const auto& r : rs) {
        ok = ok && r.pass;
        worst = std::max(worst, r.max_err);
        if (!r.pass) detail += r.name + " FAILED (max_err=" + std::to_string(r.max_err) + "); ";
    }
    if (ok) detail = "max_err=" + std::to_string(worst);
    return ok;
}

struct GateStats {
    int total = 0;
    int near_binary = 0;
    int below_sigma = 0;
    double separation = -1.0;
};

GateStats gate_stats(const GateMatrix& gm, double sigma) {
    GateStats s;
    s.total = static_cast<int>(gm.entries.size());
    double min_kept = 2.0, max_dropped = 0.0;
    for (const auto& e : gm.entries) {
        if (e.value <= 0.1 || e.value >= 0.9) ++s.near_binary;
        if (e.value < sigma) {
            ++s.below_sigma;
            max_dropped = std::max(max_dropped, e.value);
        } else {
            min_kept = std::min(min_kept, e.value);
        }
    }
    if (s.below_sigma > 0 && s.below_sigma < s.total && max_dropped > 0.0) {
        s.separation = min_kept / max_dropped;
    }
    return s;
}

// Search artifacts shared between A4, A5 and A6 (run lazily, at most once).
struct SearchArtifacts {
    bool ran = false;
    bool ok = false;
    fs::path dir;
    GateStats stats;
    int kept_edges = 0;
};

SearchArtifacts g_sparse, g_l1;

const SearchArtifacts& ensure_search(bool l1) {
    SearchArtifacts& art = l1 ? g_l1 : g_sparse;
    if (art.ran) return art;
    art.ran = true;
    art.dir = work_dir() / (l1 ? "search_l1" : "search_sparse");
    fs::remove_all(art.dir);
    fs::create_directories(art.dir);

    std::string config_arg;
    if (l1) {
        const fs::path cfg = art.dir / "config.json";
        std::ofstream(cfg) << R"({"regularizer": "l1"})";
        config_arg = " --config " + cfg.string();
    }
    const int rc = run_cli("search" + config_arg + " --out " + art.dir.string(),
                           art.dir / "search.log");
    if (rc != 0) return art;

    const Config cfg = l1 ? config_from_json(R"({"regularizer": "l1"})") : default_config();
    const GateMatrix gm = read_gate_csv((art.dir / "gates.csv").string());
    art.stats = gate_stats(gm, cfg.search.sigma);
    const PrunedArchitecture arch =
        import_architecture((art.dir / "architecture.json").string());
    art.kept_edges = arch.edge_count();
    art.ok = true;
    return art;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

Criterion a1() {
    Criterion c{"A1", false, "", 0.0};
    std::vector<verify::CheckResult> rs;
    rs.push_back(verify::check_concat_conv_identity_double(100, 1e-9));
    rs.push_back(verify::check_concat_conv_identity_single(100, 1e-4));
    c.pass = all_pass(rs, c.detail);
    return c;
}

Criterion a2() {
    Criterion c{"A2", false, "", 0.0};
    std::vector<verify::CheckResult> rs;
    rs.push_back(verify::check_order_swap_identity_double(100, 1e-9));
    rs.push_back(verify::check_order_swap_identity_single(100, 1e-4));
    c.pass = all_pass(rs, c.detail);
    return c;
}

Criterion a3() {
    Criterion c{"A3", false, "", 0.0};
    std::vector<verify::CheckResult> rs;
    rs.push_back(verify::check_grad_conv2d(20, 1e-3));
    rs.push_back(verify::check_grad_bilinear(20, 1e-3));
    rs.push_back(verify::check_grad_batch_norm(20, 1e-3));
    rs.push_back(verify::check_grad_global_avg_pool(20, 1e-3));
    rs.push_back(verify::check_grad_sigmoid_gates(20, 1e-3));
    rs.push_back(verify::check_grad_sparse_loss(20, 1e-3));
    rs.push_back(verify::check_grad_task_loss(20, 1e-3));
    c.pass = all_pass(rs, c.detail);
    return c;
}

Criterion a4() {
    Criterion c{"A4", false, "", 0.0};
    const SearchArtifacts& art = ensure_search(false);
    if (!art.ok) {
        c.detail = "search run failed, see " + (art.dir / "search.log").string();
        return c;
    }
    const double frac = static_cast<double>(art.stats.near_binary) / art.stats.total;
    const int removed = art.stats.total - art.kept_edges;
    const bool binary_ok = frac >= 0.9;
    const bool removed_ok = removed * 2 >= art.stats.total;
    const bool sep_ok = art.stats.separation >= 10.0;
    c.pass = binary_ok && removed_ok && sep_ok;
    std::ostringstream os;
    os << art.stats.near_binary << "/" << art.stats.total << " near-binary, " << removed
       << " edges removed, separation " << art.stats.separation << "x";
    c.detail = os.str();
    return c;
}

Criterion a5() {
    Criterion c{"A5", false, "", 0.0};
    const SearchArtifacts& sparse = ensure_search(false);
    const SearchArtifacts& l1 = ensure_search(true);
    if (!sparse.ok || !l1.ok) {
        c.detail = "search run failed";
        return c;
    }
    const double l1_frac = static_cast<double>(l1.stats.near_binary) / l1.stats.total;
    const int l1_removed = l1.stats.total - l1.kept_edges;
    const int sparse_removed = sparse.stats.total - sparse.kept_edges;
    const bool weak_binarization = l1_frac < 0.5;
    const bool fewer_pruned = l1_removed < sparse_removed;
    c.pass = weak_binarization || fewer_pruned;
    std::ostringstream os;
    os << "l1: " << l1.stats.near_binary << "/" << l1.stats.total << " near-binary, "
       << l1_removed << " removed vs sparse " << sparse_removed;
    c.detail = os.str();
    return c;
}

Criterion a6() {
    Criterion c{"A6", false, "", 0.0};
    const SearchArtifacts& art = ensure_search(false);
    if (!art.ok) {
        c.detail = "search run failed";
        return c;
    }
    const fs::path pruned_dir = work_dir() / "train_pruned";
    const fs::path full_dir = work_dir() / "train_full";
    if (run_cli("train --arch " + (art.dir / "architecture.json").string() + " --out " +
                    pruned_dir.string(),
                work_dir() / "train_pruned.log") != 0 ||
        run_cli("train --arch " + (art.dir / "fdn_full.json").string() + " --out " +
                    full_dir.string(),
                work_dir() / "train_full.log") != 0) {
        c.detail = "retrain run failed";
        return c;
    }
    // last val miou and the param_count row from each metrics file
    auto parse_metrics = [](const fs::path& p, double& miou, double& params) {
        std::ifstream in(p / "metrics.csv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("#", 0) == 0 || line.rfind("epoch", 0) == 0) continue;
            std::istringstream ls(line);
            std::string epoch, split, metric, value;
            std::getline(ls, epoch, ',');
            std::getline(ls, split, ',');
            std::getline(ls, metric, ',');
            std::getline(ls, value);
            if (metric == "miou") miou = std::stod(value);
            if (metric == "param_count") params = std::stod(value);
        }
    };
    double pruned_miou = -1, pruned_params = -1, full_miou = -1, full_params = -1;
    parse_metrics(pruned_dir, pruned_miou, pruned_params);
    parse_metrics(full_dir, full_miou, full_params);
    const bool quality_ok = pruned_miou >= full_miou - 0.03;
    const bool params_ok = pruned_params < full_params;
    c.pass = quality_ok && params_ok && pruned_miou >= 0 && full_miou >= 0;
    std::ostringstream os;
    os << "pruned miou " << pruned_miou << " vs full " << full_miou << ", params "
       << static_cast<long>(pruned_params) << " < " << static_cast<long>(full_params);
    c.detail = os.str();
    return c;
}

Criterion a7() {
    Criterion c{"A7", false, "", 0.0};
    std::vector<verify::CheckResult> rs{verify::check_pruner_against_oracle(200)};
    c.pass = all_pass(rs, c.detail);
    c.detail = rs[0].detail;
    return c;
}

Criterion a8() {
    Criterion c{"A8", false, "", 0.0};
    std::vector<verify::CheckResult> rs{verify::check_candidate_counts()};
    c.pass = all_pass(rs, c.detail);
    c.detail = rs[0].detail;
    return c;
}

Criterion a9() {
    Criterion c{"A9", false, "", 0.0};
    std::string fail;
    // identity transfer is a no-op
    EncoderSpec spec;
    spec.name = "id4";
    spec.stages = {{8, 2}, {8, 4}, {8, 8}, {8, 16}};
    PrunedArchitecture arch;
    arch.encoder = spec;
    arch.decoder_channels = 8;
    arch.output_stage = 1;
    arch.sigma = 0.001;
    for (int l = 1; l <= 4; ++l) {
        ArchStage s;
        s.l = l;
        s.inputs.push_back(FeatureRef::encoder(l));
        if (l < 4) s.inputs.push_back(FeatureRef::decoder(l + 1));
        else s.inputs.push_back(FeatureRef::global());
        arch.stages.push_back(s);
    }
    arch.validate();
    if (architecture_to_json(transfer_connectivity(arch, spec)) !=
        architecture_to_json(arch)) {
        fail += "identity transfer changed the graph; ";
    }

    // 9-stage -> 5-stage: exactly the unmatched decoder stage drops
    EncoderSpec nine;
    nine.name = "nine";
    for (int s : {2, 4, 4, 8, 8, 16, 16, 32, 64}) nine.stages.push_back({8, s});
    EncoderSpec five;
    five.name = "five";
    for (int s : {2, 4, 8, 16, 32}) five.stages.push_back({8, s});
    PrunedArchitecture chain;
    chain.encoder = nine;
    chain.decoder_channels = 8;
    chain.output_stage = 1;
    chain.sigma = 0.001;
    for (int l = 1; l <= 9; ++l) {
        ArchStage s;
        s.l = l;
        s.inputs.push_back(FeatureRef::encoder(l));
        if (l < 9) s.inputs.push_back(FeatureRef::decoder(l + 1));
        else s.inputs.push_back(FeatureRef::global());
        chain.stages.push_back(s);
    }
    chain.validate();
    std::vector<TransferRow> mapping;
    try {
        const PrunedArchitecture moved = transfer_connectivity(chain, five, &mapping);
        moved.validate();
        int dropped = 0;
        for (const auto& row : mapping) {
            if (row.target_stage == 0) ++dropped;
        }
        if (dropped != 1) fail += "expected exactly 1 dropped stage, got " +
                                  std::to_string(dropped) + "; ";
        if (moved.edge_count() > chain.edge_count()) fail += "edge count increased; ";
    } catch (const std::exception& e) {
        fail += std::string("transfer failed: ") + e.what() + "; ";
    }

    c.pass = fail.empty();
    c.detail = fail.empty() ? "identity no-op; 9->5 drops exactly 1 stage" : fail;
    return c;
}

Criterion a10() {
    Criterion c{"A10", false, "", 0.0};
    const fs::path dir = work_dir() / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = dir / "config.json";
    // reduced run: determinism is a property of the command, not the scale
    std::ofstream(cfg) << R"({
      "task": {"num_train": 64, "num_val": 16},
      "search": {"epochs": 3, "batch": 8, "seed": 21}
    })";
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    if (run_cli("search --config " + cfg.string() + " --out " + (dir / "r1").string(),
                dir / "r1.log") != 0 ||
        run_cli("search --config " + cfg.string() + " --out " + (dir / "r2").string(),
                dir / "r2.log") != 0) {
        c.detail = "search run failed";
        return c;
    }
    const bool gates_same = slurp(dir / "r1" / "gates.csv") == slurp(dir / "r2" / "gates.csv");
    const bool arch_same = slurp(dir / "r1" / "architecture.json") ==
                           slurp(dir / "r2" / "architecture.json");
    c.pass = gates_same && arch_same;
    c.detail = std::string("gate csv ") + (gates_same ? "identical" : "DIFFERS") +
               ", architecture json " + (arch_same ? "identical" : "DIFFERS");
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);

    struct Entry {
        const char* id;
        Criterion (*fn)();
        double budget_s;
    };
    const Entry entries[] = {
        {"A1", a1, 10.0},   {"A2", a2, 10.0},  {"A3", a3, 60.0},  {"A4", a4, 900.0},
        {"A5", a5, 900.0},  {"A6", a6, 1800.0}, {"A7", a7, 10.0},  {"A8", a8, 10.0},
        {"A9", a9, 5.0},    {"A10", a10, 600.0},
    };

    int failures = 0;
    for (const auto& e : entries) {
        if (!wanted.empty() && !wanted.count(e.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Criterion c = e.fn();
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = c.seconds <= e.budget_s;
        if (!in_budget) c.detail += " [over budget " + std::to_string(e.budget_s) + "s]";
        if (!(c.pass && in_budget)) ++failures;
        std::printf("%-4s %s  (%.1fs)  %s\n", c.id.c_str(), (c.pass && in_budget) ? "PASS" : "FAIL",
                    c.seconds, c.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
