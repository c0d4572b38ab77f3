#include "gssplat/objective.hpp"

#include <algorithm>
#include <cmath>

#include "gssplat/core.hpp"

namespace gssplat {

LossReport total_loss(double l_c, double l_s, double l_f, double l_d, const LossWeights& weights) {
    weights.validate();
    LossReport r;
    r.l_c = l_c;
    r.l_s = l_s;
    r.l_f = l_f;
    r.l_d = l_d;
    r.total = l_c + l_s + weights.lambda_f * l_f + l_d;
    return r;
}

double smooth_l1(const std::vector<double>& pred, const std::vector<double>& target, double beta) {
    if (pred.size() != target.size()) throw ContractViolation("smooth_l1: size mismatch");
    if (pred.empty()) return 0.0;
    if (!(beta > 0)) throw data_error("smooth_l1: beta must be positive");
    double acc = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double e = pred[i] - target[i];
        double ae = std::abs(e);
        acc += ae < beta ? 0.5 * e * e / beta : ae - 0.5 * beta;
    }
    return acc / pred.size();
}

namespace {

void require_same_dims(const ImageF& a, const ImageF& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw ContractViolation(std::string(what) + ": image dimensions differ");
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double psnr(const ImageF& a, const ImageF& b) {
    require_same_dims(a, b, "psnr");
    if (a.data.empty()) throw ContractViolation("psnr: empty image");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = clamp01(a.data[i]) - clamp01(b.data[i]);
        acc += d * d;
    }
    double mse = acc / a.data.size();
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageF& a, const ImageF& b) {
    require_same_dims(a, b, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    if (a.width < kWin || a.height < kWin) throw data_error("ssim: image smaller than the 11x11 window");

    double window[kWin][kWin];
    double wsum = 0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            double dy = y - kWin / 2, dx = x - kWin / 2;
            window[y][x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
            wsum += window[y][x];
        }
    for (auto& row : window)
        for (double& w : row) w /= wsum;

    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        double acc = 0;
        int64_t count = 0;
        for (int y = 0; y + kWin <= a.height; ++y)
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        double w = window[wy][wx];
                        double v1 = clamp01(a.at(y + wy, x + wx, c));
                        double v2 = clamp01(b.at(y + wy, x + wx, c));
                        mu1 += w * v1;
                        mu2 += w * v2;
                        s11 += w * v1 * v1;
                        s22 += w * v2 * v2;
                        s12 += w * v1 * v2;
                    }
                double var1 = s11 - mu1 * mu1;
                double var2 = s22 - mu2 * mu2;
                double cov = s12 - mu1 * mu2;
                double num = (2 * mu1 * mu2 + c1) * (2 * cov + c2);
                double den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2);
                acc += num / den;
                ++count;
            }
        total += acc / count;
    }
    return total / a.channels;
}

SegScores segmentation_scores(const LabelMap& prediction, const LabelMap& truth, int num_classes) {
    if (prediction.width != truth.width || prediction.height != truth.height)
        throw ContractViolation("segmentation_scores: dimensions differ");
    if (num_classes < 1) throw data_error("segmentation_scores: class count");
    std::vector<int64_t> conf(static_cast<size_t>(num_classes) * num_classes, 0);
    int64_t valid = 0, correct = 0;
    for (size_t i = 0; i < truth.data.size(); ++i) {
        uint8_t gt = truth.data[i];
        if (gt == 255) continue;
        uint8_t pr = prediction.data[i];
        if (gt >= num_classes || pr >= num_classes)
            throw data_error("segmentation_scores: label outside class range");
        ++valid;
        if (gt == pr) ++correct;
        ++conf[static_cast<size_t>(gt) * num_classes + pr];
    }
    SegScores s;
    if (valid == 0) return s;
    s.acc = static_cast<double>(correct) / valid;
    double iou_sum = 0, recall_sum = 0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        int64_t row = 0, col = 0;
        for (int k = 0; k < num_classes; ++k) {
            row += conf[static_cast<size_t>(c) * num_classes + k];
            col += conf[static_cast<size_t>(k) * num_classes + c];
        }
        if (row == 0) continue;  // class absent from ground truth
        ++present;
        int64_t tp = conf[static_cast<size_t>(c) * num_classes + c];
        recall_sum += static_cast<double>(tp) / row;
        iou_sum += static_cast<double>(tp) / (row + col - tp);
    }
    if (present > 0) {
        s.miou = iou_sum / present;
        s.class_acc = recall_sum / present;
    }
    return s;
}

Metrics compute_metrics(const ImageF& image, const ImageF& image_ref, const LabelMap& labels,
                        const LabelMap& labels_ref, int num_classes) {
    Metrics m;
    m.psnr = psnr(image, image_ref);
    m.ssim = ssim(image, image_ref);
    SegScores s = segmentation_scores(labels, labels_ref, num_classes);
    m.miou = s.miou;
    m.acc = s.acc;
    m.class_acc = s.class_acc;
    return m;
}

}  // namespace gssplat
