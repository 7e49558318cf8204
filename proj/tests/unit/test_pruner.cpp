#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sparsemask/pruner.hpp"
#include "sparsemask/rng.hpp"

using namespace sparsemask;
namespace fs = std::filesystem;

namespace {

PruneContext make_ctx(int stages) {
    PruneContext ctx;
    ctx.encoder.name = "ctx" + std::to_string(stages);
    for (int l = 1; l <= stages; ++l) ctx.encoder.stages.push_back({8, 1 << l});
    ctx.decoder_channels = 8;
    ctx.seed = 5;
    return ctx;
}

GateMatrix full_gates(int stages, double value) {
    GateMatrix gm;
    gm.num_stages = stages;
    for (int l = 1; l <= stages; ++l) {
        for (const auto& src : candidate_sources(stages, l)) {
            gm.entries.push_back({l, src, value});
        }
    }
    return gm;
}

}  // namespace

TEST_CASE("rule 1 keeps the reserved weight and drops the dead one") {
    GateMatrix gm = full_gates(2, 0.9);
    // stage 1: E1 at the largest dropped weight, E2 at the smallest reserved
    gm.entries[0].value = 1.342e-4;  // below sigma=1e-3: dropped
    gm.entries[1].value = 2.666e-2;  // above: kept
    const PrunedArchitecture arch = prune(gm, 1e-3, make_ctx(2));
    const ArchStage* s1 = arch.find_stage(1);
    REQUIRE(s1 != nullptr);
    bool has_e1 = false, has_e2 = false;
    for (const auto& in : s1->inputs) {
        if (in == FeatureRef::encoder(1)) has_e1 = true;
        if (in == FeatureRef::encoder(2)) has_e2 = true;
    }
    CHECK(!has_e1);
    CHECK(has_e2);
}

TEST_CASE("ties at sigma are kept (strict drop)") {
    GateMatrix gm = full_gates(2, 0.9);
    gm.entries[0].value = 0.25;
    const PrunedArchitecture arch = prune(gm, 0.25, make_ctx(2));
    CHECK(arch.edge_count() == 6);
}

TEST_CASE("all-high gates reproduce the full dense network") {
    for (int L : {4, 9}) {
        const PrunedArchitecture arch = prune(full_gates(L, 0.9), 1e-3, make_ctx(L));
        CHECK(arch.edge_count() == total_gate_count(L));  // 20 / 90 edges
        CHECK(static_cast<int>(arch.stages.size()) == L);
        CHECK(arch.output_stage == 1);
    }
}

TEST_CASE("rule 2 then rule 3 cascade") {
    // Stage 4 feeds only stage 3; stage 3 loses every input to rule 1, so
    // rule 2 removes stage 3 and rule 3 then removes orphaned stage 4.
    const int L = 4;
    GateMatrix gm;
    gm.num_stages = L;
    for (int l = 1; l <= L; ++l) {
        for (const auto& src : candidate_sources(L, l)) {
            GateEntry e{l, src, 0.5};
            if (l == 3) e.value = 1e-6;  // rule 1 kills all stage-3 inputs
            if (src.kind == FeatureKind::decoder && src.index == 4 && l != 3) {
                e.value = 1e-6;  // stage 4 consumed only by stage 3
            }
            gm.entries.push_back(e);
        }
    }
    const PrunedArchitecture arch = prune(gm, 1e-3, make_ctx(L));
    CHECK(arch.find_stage(3) == nullptr);
    CHECK(arch.find_stage(4) == nullptr);
    CHECK(arch.find_stage(1) != nullptr);
    CHECK(arch.find_stage(2) != nullptr);

    const auto oracle = oracles::reachability_prune(gm, 1e-3);
    REQUIRE(oracle.has_value());
    CHECK(arch.graph() == *oracle);
}

TEST_CASE("output falls back to the lowest surviving stage when D1 dies") {
    // Stage 1 loses every input; stage 2 was consumed only by stage 1, so
    // it cascades away too. Stage 3 survives on {E3, G} and takes over as
    // the output stage.
    const int L = 3;
    GateMatrix gm;
    gm.num_stages = L;
    for (int l = 1; l <= L; ++l) {
        for (const auto& src : candidate_sources(L, l)) {
            gm.entries.push_back({l, src, l == 1 ? 1e-5 : 0.8});
        }
    }
    const PrunedArchitecture arch = prune(gm, 1e-3, make_ctx(L));
    CHECK(arch.find_stage(1) == nullptr);
    CHECK(arch.find_stage(2) == nullptr);
    CHECK(arch.output_stage == 3);
    CHECK_NOTHROW(arch.validate());
    const auto oracle = oracles::reachability_prune(gm, 1e-3);
    REQUIRE(oracle.has_value());
    CHECK(arch.graph() == *oracle);
}

TEST_CASE("pruning everything reports the gate histogram") {
    GateMatrix gm = full_gates(3, 1e-7);
    CHECK_THROWS_WITH_AS(prune(gm, 1e-3, make_ctx(3)), doctest::Contains("histogram"),
                         std::runtime_error);
}

TEST_CASE("prune is idempotent and monotone in sigma") {
    Rng rng(77);
    for (int t = 0; t < 40; ++t) {
        const int L = 2 + static_cast<int>(rng.below(5));
        GateMatrix gm;
        gm.num_stages = L;
        for (int l = 1; l <= L; ++l) {
            for (const auto& src : candidate_sources(L, l)) {
                gm.entries.push_back({l, src, rng.uniform()});
            }
        }
        std::vector<std::set<std::pair<int, std::string>>> kept;
        for (double sigma : {1e-3, 0.1, 0.5}) {
            std::set<std::pair<int, std::string>> edges;
            try {
                const PrunedArchitecture arch = prune(gm, sigma, make_ctx(L));
                for (const auto& s : arch.stages) {
                    for (const auto& in : s.inputs) edges.insert({s.l, in.str()});
                }
                // idempotence: reinterpret kept edges as gates 1.0
                GateMatrix again;
                again.num_stages = L;
                for (const auto& s : arch.stages) {
                    for (const auto& in : s.inputs) again.entries.push_back({s.l, in, 1.0});
                }
                CHECK(prune(again, sigma, make_ctx(L)).graph() == arch.graph());
            } catch (const std::runtime_error&) {
                // empty architecture: fine, monotonicity still applies
            }
            kept.push_back(std::move(edges));
        }
        for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
            for (const auto& e : kept[i + 1]) CHECK(kept[i].count(e) == 1);
        }
    }
}

TEST_CASE("every kept stage reaches the output") {
    Rng rng(78);
    for (int t = 0; t < 40; ++t) {
        const int L = 2 + static_cast<int>(rng.below(5));
        GateMatrix gm;
        gm.num_stages = L;
        for (int l = 1; l <= L; ++l) {
            for (const auto& src : candidate_sources(L, l)) {
                gm.entries.push_back({l, src, rng.uniform()});
            }
        }
        try {
            const PrunedArchitecture arch = prune(gm, 0.4, make_ctx(L));
            // walk consumers from each stage; must reach output_stage
            for (const auto& s : arch.stages) {
                std::set<int> frontier{s.l};
                bool reached = s.l == arch.output_stage;
                while (!reached) {
                    std::set<int> next;
                    for (const auto& consumer : arch.stages) {
                        for (const auto& in : consumer.inputs) {
                            if (in.kind == FeatureKind::decoder && frontier.count(in.index)) {
                                next.insert(consumer.l);
                            }
                        }
                    }
                    if (next.count(arch.output_stage)) reached = true;
                    if (next.empty()) break;
                    frontier = std::move(next);
                }
                CHECK(reached);
            }
        } catch (const std::runtime_error&) {
        }
    }
}

TEST_CASE("architecture json round trip is the identity") {
    GateMatrix gm = full_gates(3, 0.8);
    gm.entries[4].value = 1e-9;
    PrunedArchitecture arch = prune(gm, 1e-3, make_ctx(3));
    arch.config_digest = "abc123";
    const std::string text = architecture_to_json(arch);
    const PrunedArchitecture back = architecture_from_json(text);
    CHECK(architecture_to_json(back) == text);
    CHECK(back.graph() == arch.graph());
    CHECK(back.sigma == arch.sigma);
    CHECK(back.seed == arch.seed);
    CHECK(back.config_digest == arch.config_digest);
}

TEST_CASE("hand-written minimal architecture json imports") {
    const char* text = R"({
      "encoder": {"name": "mini", "stages": [{"channels": 8, "stride": 2},
                                              {"channels": 16, "stride": 4}]},
      "decoder_channels": 8,
      "stages": [{"l": 1, "inputs": [{"kind": "E", "index": 1}, {"kind": "G", "index": 0}]}],
      "output_stage": 1,
      "meta": {"sigma": 0.001, "seed": 3}
    })";
    const PrunedArchitecture arch = architecture_from_json(text);
    CHECK(arch.stages.size() == 1);
    CHECK(arch.edge_count() == 2);
    CHECK(arch.config_digest.empty());
}

TEST_CASE("corrupt or unknown json fields are rejected with a path") {
    const char* missing_stage = R"({
      "encoder": {"name": "mini", "stages": [{"channels": 8, "stride": 2},
                                              {"channels": 16, "stride": 4}]},
      "decoder_channels": 8,
      "stages": [{"l": 1, "inputs": [{"kind": "D", "index": 2}]}],
      "output_stage": 1,
      "meta": {"sigma": 0.001, "seed": 3}
    })";
    CHECK_THROWS_WITH_AS(architecture_from_json(missing_stage),
                         doctest::Contains("missing stage"), std::runtime_error);

    const char* unknown_field = R"({
      "encoder": {"name": "mini", "stages": [{"channels": 8, "stride": 2},
                                              {"channels": 16, "stride": 4}]},
      "decoder_channels": 8,
      "stages": [{"l": 1, "inputs": [{"kind": "E", "index": 1}]}],
      "output_stage": 1,
      "meta": {"sigma": 0.001, "seed": 3},
      "extra": 1
    })";
    CHECK_THROWS_WITH_AS(architecture_from_json(unknown_field), doctest::Contains("$.extra"),
                         std::runtime_error);
}

TEST_CASE("export/import through files") {
    const fs::path dir = fs::temp_directory_path() / "sm_pruner_test";
    fs::create_directories(dir);
    const std::string path = (dir / "arch.json").string();
    PrunedArchitecture arch = prune(full_gates(2, 0.9), 1e-3, make_ctx(2));
    export_architecture(arch, path);
    CHECK(import_architecture(path).graph() == arch.graph());
    fs::remove_all(dir);
}
