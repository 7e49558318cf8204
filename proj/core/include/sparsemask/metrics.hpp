#pragma once

#include <array>
#include <vector>

#include "sparsemask/tensor.hpp"

namespace sparsemask {

constexpr int kIgnoreLabel = 255;

// Streaming per-class confusion counts for mIoU / pixel accuracy.
struct ConfusionCounts {
    explicit ConfusionCounts(int num_classes)
        : tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0) {}

    std::vector<long long> tp, fp, fn;
    long long correct = 0;
    long long total = 0;

    void add(const LabelMap& pred, const LabelMap& gt, int ignore_id = kIgnoreLabel);

    // Mean IoU over classes present in gt or pred; absent classes skipped.
    double miou() const;
    double pixel_acc() const;
};

double miou(const LabelMap& pred, const LabelMap& gt, int num_classes,
            int ignore_id = kIgnoreLabel);
double pixel_acc(const LabelMap& pred, const LabelMap& gt, int ignore_id = kIgnoreLabel);

// Mean absolute error between a probability map in [0,1] and binary labels.
double mae(const Tensor<float>& prob, const LabelMap& gt);

// Max-F_beta over 255 uniform thresholds t = k/256, k = 1..255. Pixels are
// bucketed by how many thresholds they clear; per-threshold counts fall out
// of suffix sums.
struct FBetaCounts {
    static constexpr int kThresholds = 255;
    std::array<long long, kThresholds + 1> pos_hist{}, neg_hist{};

    void add(const Tensor<float>& prob, const LabelMap& gt);
    double value(double beta2 = 0.3) const;
};

double f_beta(const Tensor<float>& prob, const LabelMap& gt, double beta2 = 0.3);

// Streaming MAE companion to FBetaCounts.
struct MaeCounts {
    double abs_sum = 0.0;
    long long total = 0;
    void add(const Tensor<float>& prob, const LabelMap& gt);
    double value() const { return total == 0 ? 0.0 : abs_sum / static_cast<double>(total); }
};

// Prediction helpers shared by evaluation paths.
LabelMap argmax_labels(const Tensor<float>& logits);
Tensor<float> softmax_prob_of_class(const Tensor<float>& logits, int cls);

}  // namespace sparsemask
