#include "sparsemask/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace sparsemask {

namespace {

void check_same_shape(const LabelMap& a, const LabelMap& b, const char* what) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
        throw std::runtime_error(std::string(what) + ": label map shape mismatch");
    }
}

}  // namespace

void ConfusionCounts::add(const LabelMap& pred, const LabelMap& gt, int ignore_id) {
    check_same_shape(pred, gt, "confusion");
    const int K = static_cast<int>(tp.size());
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const int g = gt.ids[i];
        if (g == ignore_id) continue;
        const int p = pred.ids[i];
        if (g < 0 || g >= K || p < 0 || p >= K) {
            throw std::runtime_error("confusion: class id outside [0," + std::to_string(K) + ")");
        }
        ++total;
        if (p == g) {
            ++correct;
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
}

double ConfusionCounts::miou() const {
    double acc = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < tp.size(); ++c) {
        const long long uni = tp[c] + fp[c] + fn[c];
        if (uni == 0) continue;  // class absent from gt and pred
        acc += static_cast<double>(tp[c]) / static_cast<double>(uni);
        ++present;
    }
    return present == 0 ? 0.0 : acc / present;
}

double ConfusionCounts::pixel_acc() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double miou(const LabelMap& pred, const LabelMap& gt, int num_classes, int ignore_id) {
    ConfusionCounts cc(num_classes);
    cc.add(pred, gt, ignore_id);
    return cc.miou();
}

double pixel_acc(const LabelMap& pred, const LabelMap& gt, int ignore_id) {
    ConfusionCounts cc(256);
    cc.add(pred, gt, ignore_id);
    return cc.pixel_acc();
}

double mae(const Tensor<float>& prob, const LabelMap& gt) {
    MaeCounts mc;
    mc.add(prob, gt);
    return mc.value();
}

void MaeCounts::add(const Tensor<float>& prob, const LabelMap& gt) {
    if (prob.numel() != gt.numel()) throw std::runtime_error("mae: shape mismatch");
    for (std::size_t i = 0; i < prob.numel(); ++i) {
        abs_sum += std::abs(static_cast<double>(prob.data[i]) - static_cast<double>(gt.ids[i]));
        ++total;
    }
}

void FBetaCounts::add(const Tensor<float>& prob, const LabelMap& gt) {
    if (prob.numel() != gt.numel()) throw std::runtime_error("f_beta: shape mismatch");
    for (std::size_t i = 0; i < prob.numel(); ++i) {
        // prob >= (k+1)/256  <=>  k < floor(prob*256); "above" counts cleared
        // thresholds.
        int above = static_cast<int>(std::floor(static_cast<double>(prob.data[i]) * 256.0));
        above = std::min(std::max(above, 0), kThresholds);
        if (gt.ids[i] != 0) ++pos_hist[above];
        else ++neg_hist[above];
    }
}

double FBetaCounts::value(double beta2) const {
    long long total_pos = 0;
    for (long long v : pos_hist) total_pos += v;
    double best = 0.0;
    long long tp = 0, fp = 0;
    // Threshold index k predicts positive for pixels with above > k; sweep
    // from the top so tp/fp are running suffix sums.
    for (int k = kThresholds - 1; k >= 0; --k) {
        tp += pos_hist[k + 1];
        fp += neg_hist[k + 1];
        const long long fn = total_pos - tp;
        if (tp + fp == 0 || tp + fn == 0) continue;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        const double denom = beta2 * precision + recall;
        if (denom == 0.0) continue;
        best = std::max(best, (1.0 + beta2) * precision * recall / denom);
    }
    return best;
}

double f_beta(const Tensor<float>& prob, const LabelMap& gt, double beta2) {
    FBetaCounts fc;
    fc.add(prob, gt);
    return fc.value(beta2);
}

LabelMap argmax_labels(const Tensor<float>& logits) {
    LabelMap out(logits.n, logits.h, logits.w);
    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    for (int s = 0; s < logits.n; ++s) {
        for (std::size_t px = 0; px < plane; ++px) {
            int best = 0;
            float best_v = logits.data[static_cast<std::size_t>(s) * logits.c * plane + px];
            for (int k = 1; k < logits.c; ++k) {
                const float v =
                    logits.data[(static_cast<std::size_t>(s) * logits.c + k) * plane + px];
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            out.ids[static_cast<std::size_t>(s) * plane + px] = best;
        }
    }
    return out;
}

Tensor<float> softmax_prob_of_class(const Tensor<float>& logits, int cls) {
    if (cls < 0 || cls >= logits.c) throw std::runtime_error("softmax_prob_of_class: bad class");
    Tensor<float> out(logits.n, 1, logits.h, logits.w);
    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    for (int s = 0; s < logits.n; ++s) {
        for (std::size_t px = 0; px < plane; ++px) {
            double maxv = -1e300;
            for (int k = 0; k < logits.c; ++k) {
                maxv = std::max(maxv, static_cast<double>(
                    logits.data[(static_cast<std::size_t>(s) * logits.c + k) * plane + px]));
            }
            double z = 0.0, target = 0.0;
            for (int k = 0; k < logits.c; ++k) {
                const double e = std::exp(static_cast<double>(
                    logits.data[(static_cast<std::size_t>(s) * logits.c + k) * plane + px]) - maxv);
                z += e;
                if (k == cls) target = e;
            }
            out.data[static_cast<std::size_t>(s) * plane + px] = static_cast<float>(target / z);
        }
    }
    return out;
}

}  // namespace sparsemask
