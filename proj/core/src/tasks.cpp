#include "sparsemask/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "sparsemask/rng.hpp"

namespace sparsemask {

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::multi_class_shapes: return "multi_class_shapes";
        case TaskKind::binary_saliency: return "binary_saliency";
        case TaskKind::edge_map: return "edge_map";
    }
    return "?";
}

TaskKind task_kind_from_name(const std::string& s) {
    if (s == "multi_class_shapes") return TaskKind::multi_class_shapes;
    if (s == "binary_saliency") return TaskKind::binary_saliency;
    if (s == "edge_map") return TaskKind::edge_map;
    throw std::runtime_error("unknown task kind '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
    if (image_size < 8) throw std::runtime_error("task: image_size too small");
    if (num_train < 1 || num_val < 1) throw std::runtime_error("task: empty split");
    if (kind == TaskKind::multi_class_shapes) {
        if (num_classes < 2) throw std::runtime_error("task: need >= 2 classes");
    } else if (num_classes != 2) {
        throw std::runtime_error("task: " + task_kind_name(kind) + " requires num_classes=2");
    }
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
        throw std::runtime_error("task: bad shape_scale_range");
    }
}

namespace {

struct Shape {
    int type = 0;  // 0 rect, 1 ellipse, 2 triangle
    int cls = 1;
    double cx = 0, cy = 0, a = 1, b = 1, cos_t = 1, sin_t = 0;
    float color[3] = {0, 0, 0};

    bool inside(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = cos_t * dx + sin_t * dy;
        const double v = -sin_t * dx + cos_t * dy;
        switch (type) {
            case 0: return std::abs(u) <= a && std::abs(v) <= b;
            case 1: {
                const double eu = u / a, ev = v / b;
                return eu * eu + ev * ev <= 1.0;
            }
            default: {
                // isoceles triangle with apex up: (0,-b), (-a,b), (a,b)
                if (v < -b || v > b) return false;
                const double half = a * (v + b) / (2.0 * b);
                return u >= -half && u <= half;
            }
        }
    }
};

void hsv_to_rgb(double h, double s, double v, float out[3]) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    out[0] = static_cast<float>(r + m);
    out[1] = static_cast<float>(g + m);
    out[2] = static_cast<float>(b + m);
}

}  // namespace

Sample generate(const SyntheticTaskSpec& spec, int index, const AugmentParams& aug) {
    spec.validate();
    if (index < 0 || index >= spec.total_samples()) {
        throw std::runtime_error("generate: index " + std::to_string(index) +
                                 " outside dataset of " + std::to_string(spec.total_samples()));
    }
    const int S = spec.image_size;
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index), 0xda7a));

    // Textured background: a base tone plus two low-frequency waves.
    float base[3];
    for (float& v : base) v = static_cast<float>(rng.uniform(0.18, 0.45));
    double wf[2][2], wp[2][3], wa[2];
    for (int k = 0; k < 2; ++k) {
        wf[k][0] = rng.uniform(0.5, 2.5) * 2.0 * 3.14159265358979323846 / S;
        wf[k][1] = rng.uniform(0.5, 2.5) * 2.0 * 3.14159265358979323846 / S;
        wa[k] = rng.uniform(0.03, 0.08);
        for (int c = 0; c < 3; ++c) wp[k][c] = rng.uniform(0.0, 6.28318530717958647692);
    }

    const int fg_classes = spec.kind == TaskKind::multi_class_shapes ? spec.num_classes - 1 : 1;
    const int n_shapes = 1 + static_cast<int>(rng.below(4));
    std::vector<Shape> shapes;
    for (int i = 0; i < n_shapes; ++i) {
        Shape sh;
        sh.type = static_cast<int>(rng.below(3));
        sh.cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(fg_classes)));
        const double frac = rng.uniform(spec.scale_min, spec.scale_max);
        double a = frac * S / 2.0;
        double aspect = rng.uniform(0.6, 1.4);
        sh.cx = rng.uniform(0.15 * S, 0.85 * S);
        sh.cy = rng.uniform(0.15 * S, 0.85 * S);
        const double angle = rng.uniform(0.0, 3.14159265358979323846);
        const double jitter_h = rng.uniform(-0.05, 0.05);
        const double jitter_v = rng.uniform(-0.12, 0.12);
        a *= aug.scale;
        double b = a * aspect;
        a = std::clamp(a, 1.5, 0.48 * S);
        b = std::clamp(b, 1.5, 0.48 * S);
        sh.a = a;
        sh.b = b;
        sh.cos_t = std::cos(angle);
        sh.sin_t = std::sin(angle);
        double hue = fg_classes == 1 ? 0.12 : static_cast<double>(sh.cls - 1) / fg_classes;
        hue = hue + jitter_h;
        hue -= std::floor(hue);
        hsv_to_rgb(hue, 0.65, std::clamp(0.85 + jitter_v, 0.0, 1.0), sh.color);
        shapes.push_back(sh);
    }

    Sample sample;
    sample.image = Tensor<float>(1, 3, S, S);
    sample.labels = LabelMap(1, S, S);
    std::vector<int> region(static_cast<std::size_t>(S) * S, -1);  // topmost shape index

    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            float px[3];
            for (int c = 0; c < 3; ++c) {
                double v = base[c];
                for (int k = 0; k < 2; ++k) {
                    v += wa[k] * std::sin(wf[k][0] * x + wf[k][1] * y + wp[k][c]);
                }
                px[c] = static_cast<float>(v);
            }
            for (std::size_t si = 0; si < shapes.size(); ++si) {
                const Shape& sh = shapes[si];
                // 3x3 supersampled coverage for anti-aliased compositing.
                int hits = 0;
                for (int sy = 0; sy < 3; ++sy) {
                    for (int sx = 0; sx < 3; ++sx) {
                        if (sh.inside(x + (sx + 0.5) / 3.0, y + (sy + 0.5) / 3.0)) ++hits;
                    }
                }
                if (hits > 0) {
                    const float cov = static_cast<float>(hits) / 9.0f;
                    for (int c = 0; c < 3; ++c) px[c] = (1.0f - cov) * px[c] + cov * sh.color[c];
                }
                // Labels are the exact rasterization at pixel centers.
                if (sh.inside(x + 0.5, y + 0.5)) region[y * S + x] = static_cast<int>(si);
            }
            for (int c = 0; c < 3; ++c) sample.image.at(0, c, y, x) = px[c];
        }
    }

    // Per-pixel sensor noise from its own stream.
    Rng noise(mix_seed(spec.seed, static_cast<std::uint64_t>(index), 0x9015e));
    for (auto& v : sample.image.data) {
        v = std::clamp(v + static_cast<float>(noise.uniform(-0.02, 0.02)), 0.0f, 1.0f);
    }

    switch (spec.kind) {
        case TaskKind::multi_class_shapes:
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    const int r = region[y * S + x];
                    sample.labels.at(0, y, x) = r < 0 ? 0 : shapes[r].cls;
                }
            }
            break;
        case TaskKind::binary_saliency:
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    sample.labels.at(0, y, x) = region[y * S + x] < 0 ? 0 : 1;
                }
            }
            break;
        case TaskKind::edge_map:
            // Thin boundary: interior pixels adjacent to a different region.
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    const int r = region[y * S + x];
                    int edge = 0;
                    if (r >= 0) {
                        const int dx[4] = {1, -1, 0, 0};
                        const int dy[4] = {0, 0, 1, -1};
                        for (int d = 0; d < 4; ++d) {
                            const int nx = x + dx[d], ny = y + dy[d];
                            if (nx < 0 || nx >= S || ny < 0 || ny >= S) continue;
                            if (region[ny * S + nx] != r) {
                                edge = 1;
                                break;
                            }
                        }
                    }
                    sample.labels.at(0, y, x) = edge;
                }
            }
            break;
    }

    if (aug.flip) {
        Tensor<float> flipped(1, 3, S, S);
        LabelMap flabels(1, S, S);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    flipped.at(0, c, y, x) = sample.image.at(0, c, y, S - 1 - x);
                }
            }
        }
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) flabels.at(0, y, x) = sample.labels.at(0, y, S - 1 - x);
        }
        sample.image = std::move(flipped);
        sample.labels = std::move(flabels);
    }
    return sample;
}

Sample generate(const SyntheticTaskSpec& spec, int index) {
    return generate(spec, index, AugmentParams{});
}

AugmentParams sample_augmentation(std::uint64_t seed, int epoch, int index) {
    Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(index), 0xa06));
    AugmentParams aug;
    aug.flip = rng.below(2) == 1;
    aug.scale = rng.uniform(0.75, 1.3333333333333333);
    return aug;
}

// ---------------------------------------------------------------------------
// cache files
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::ofstream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

std::uint16_t get_u16(std::ifstream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_sample_cache(const std::string& path, const Sample& sample, int num_classes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dataset cache: cannot open '" + path + "'");
    out.write("SMDS", 4);
    put_u16(out, 1);  // version
    put_u16(out, static_cast<std::uint16_t>(sample.image.c));
    put_u16(out, static_cast<std::uint16_t>(sample.image.h));
    put_u16(out, static_cast<std::uint16_t>(sample.image.w));
    put_u16(out, static_cast<std::uint16_t>(num_classes));
    put_u16(out, 0);  // reserved
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(sample.image.data.data()),
              static_cast<std::streamsize>(sample.image.numel() * sizeof(float)));
    std::vector<unsigned char> bytes(sample.labels.numel());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(sample.labels.ids[i]);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw std::runtime_error("dataset cache: write to '" + path + "' failed");
}

Sample read_sample_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset cache: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in.good() || std::memcmp(magic, "SMDS", 4) != 0) {
        throw std::runtime_error("dataset cache '" + path + "': bad magic");
    }
    const std::uint16_t version = get_u16(in);
    if (version != 1) {
        throw std::runtime_error("dataset cache '" + path + "': unsupported version " +
                                 std::to_string(version));
    }
    const int c = get_u16(in), h = get_u16(in), w = get_u16(in);
    get_u16(in);  // num_classes
    get_u16(in);  // reserved
    Sample sample;
    sample.image = Tensor<float>(1, c, h, w);
    in.read(reinterpret_cast<char*>(sample.image.data.data()),
            static_cast<std::streamsize>(sample.image.numel() * sizeof(float)));
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in.good()) throw std::runtime_error("dataset cache '" + path + "': truncated file");
    sample.labels = LabelMap(1, h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) sample.labels.ids[i] = bytes[i];
    return sample;
}

}  // namespace sparsemask
