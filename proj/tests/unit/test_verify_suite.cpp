#include <doctest.h>

#include <cmath>

#include "sparsemask/gates.hpp"
#include "sparsemask/verify.hpp"

#include <filesystem>

using namespace sparsemask;
namespace fs = std::filesystem;

TEST_CASE("fresh checkout passes the entire verification suite") {
    const auto results = verify::run_all_checks();
    CHECK(results.size() >= 12);  // the report must list at least 12 checks
    for (const auto& r : results) {
        INFO(r.name, " max_err=", r.max_err);
        CHECK(r.pass);
    }
}

TEST_CASE("a wrong bilinear convention fails the order-swap identity check") {
    // align-corners variant: in = out * (in_size-1)/(out_size-1)
    auto align_corners = [](const Tensor<double>& x, int oh, int ow) {
        Tensor<double> out(x.n, x.c, oh, ow);
        for (int n = 0; n < x.n; ++n) {
            for (int c = 0; c < x.c; ++c) {
                for (int oy = 0; oy < oh; ++oy) {
                    const double py =
                        oh == 1 ? 0.0
                                : static_cast<double>(oy) * (x.h - 1) / (oh - 1);
                    const int y0 = static_cast<int>(std::floor(py));
                    const int y1 = std::min(y0 + 1, x.h - 1);
                    const double fy = py - y0;
                    for (int ox = 0; ox < ow; ++ox) {
                        const double px =
                            ow == 1 ? 0.0
                                    : static_cast<double>(ox) * (x.w - 1) / (ow - 1);
                        const int x0 = static_cast<int>(std::floor(px));
                        const int x1 = std::min(x0 + 1, x.w - 1);
                        const double fx = px - x0;
                        out.at(n, c, oy, ox) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) +
                                                           fx * x.at(n, c, y0, x1)) +
                                               fy * ((1 - fx) * x.at(n, c, y1, x0) +
                                                     fx * x.at(n, c, y1, x1));
                    }
                }
            }
        }
        return out;
    };
    const auto mutated =
        verify::check_order_swap_identity_against(align_corners, 50, 1e-9, "order swap (mutated upsampling)");
    CHECK(!mutated.pass);
    CHECK(mutated.max_err > 1e-3);
}

TEST_CASE("gate csv round trips bit-exactly") {
    GateMatrix gm;
    gm.num_stages = 2;
    gm.entries.push_back({1, FeatureRef::encoder(1), 0.1234567890123456789});
    gm.entries.push_back({1, FeatureRef::decoder(2), 1.342e-4});
    gm.entries.push_back({1, FeatureRef::global(), 2.666e-2});
    gm.entries.push_back({2, FeatureRef::encoder(2), 1.0 / 3.0});

    const fs::path dir = fs::temp_directory_path() / "sm_gatecsv_test";
    fs::create_directories(dir);
    const std::string path = (dir / "gates.csv").string();
    write_gate_csv(gm, path, "0011223344556677");
    const GateMatrix back = read_gate_csv(path);
    CHECK(back == gm);
    fs::remove_all(dir);

    CHECK_THROWS_AS(write_gate_csv(gm, "/nonexistent_dir_zz/gates.csv", ""),
                    std::runtime_error);
}
