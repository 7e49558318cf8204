#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsemask/tensor.hpp"

namespace sparsemask {

enum class TaskKind { multi_class_shapes, binary_saliency, edge_map };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& s);

// Synthetic dense-prediction task. Generation is a pure function of
// (spec, index): the same spec yields bit-identical datasets.
struct SyntheticTaskSpec {
    TaskKind kind = TaskKind::multi_class_shapes;
    int image_size = 64;
    int num_classes = 5;  // includes background class 0
    int num_train = 500;
    int num_val = 100;
    std::uint64_t seed = 7;
    double scale_min = 0.10;  // shape extent as a fraction of image size
    double scale_max = 0.55;

    void validate() const;
    int total_samples() const { return num_train + num_val; }
};

struct Sample {
    Tensor<float> image;  // (1,3,S,S) in [0,1]
    LabelMap labels;      // (1,S,S) class ids
};

struct AugmentParams {
    bool flip = false;
    double scale = 1.0;
};

// Indices [0, num_train) are the training split, [num_train, total) the
// validation split.
Sample generate(const SyntheticTaskSpec& spec, int index);
Sample generate(const SyntheticTaskSpec& spec, int index, const AugmentParams& aug);

// Deterministic per-(seed,epoch,index) train-time augmentation: left-right
// flip and scale jitter.
AugmentParams sample_augmentation(std::uint64_t seed, int epoch, int index);

// ---------------------------------------------------------------------------
// dataset cache files
// ---------------------------------------------------------------------------
// 16-byte header (magic 'SMDS', version, channels, height, width,
// num_classes, reserved; all little-endian u16 after the magic), then the
// raw single-precision image and the byte label map.

void write_sample_cache(const std::string& path, const Sample& sample, int num_classes);
Sample read_sample_cache(const std::string& path);

}  // namespace sparsemask
