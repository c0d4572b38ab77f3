#pragma once

#include <vector>

#include "gssplat/image.hpp"
#include "gssplat/ops.hpp"
#include "gssplat/tensor.hpp"

namespace gssplat {

struct LossWeights {
    double lambda1 = 10.0;   // MSE weight inside the color term
    double lambda_f = 0.2;   // offset-geometry weight
    bool perceptual_proxy_enabled = false;
    double lambda_proxy = 1.0;

    void validate() const {
        if (lambda1 < 0 || lambda_f < 0 || lambda_proxy < 0)
            throw data_error("loss weights must be non-negative");
    }
};

struct LossReport {
    double l_c = 0;
    double l_s = 0;
    double l_f = 0;
    double l_d = 0;
    double total = 0;
};

// total = L_C + L_S + lambda_f * L_f + L_D (weights for the color term are
// already folded into L_C).
LossReport total_loss(double l_c, double l_s, double l_f, double l_d, const LossWeights& weights);

// 0.5 e^2/beta for |e| < beta, |e| - beta/2 otherwise; mean over elements.
double smooth_l1(const std::vector<double>& pred, const std::vector<double>& target, double beta = 1.0);

// Color term: lambda1 * MSE(+ optional gradient-difference proxy). rendered
// is pixel-major [H*W, C] rows; target is a constant of equal layout.
template <typename S>
TensorT<S> color_loss(const TensorT<S>& rendered, const std::vector<S>& target, const LossWeights& weights,
                      int height, int width, int channels) {
    weights.validate();
    auto loss = scalar_mul(mse_loss(rendered, target), weights.lambda1);
    if (weights.perceptual_proxy_enabled) {
        auto proxy = grad_diff_loss(rendered, target, height, width, channels);
        loss = add(loss, scalar_mul(proxy, weights.lambda_proxy));
    }
    return loss;
}

// Semantic term: cross entropy of the rendered score map plus per-view 2D
// segmentation cross entropies. Logit tensors are [pixels, classes] rows.
template <typename S>
TensorT<S> semantic_loss(const TensorT<S>& rendered_rows, const std::vector<int32_t>& labels,
                         const std::vector<TensorT<S>>& view_rows,
                         const std::vector<std::vector<int32_t>>& view_labels, int ignore_index = 255,
                         bool* empty_warn = nullptr) {
    int valid = 0;
    auto loss = cross_entropy_rows(rendered_rows, labels, ignore_index, &valid);
    int total_valid = valid;
    opdetail::require(view_rows.size() == view_labels.size(), "semantic_loss: view count mismatch");
    for (size_t v = 0; v < view_rows.size(); ++v) {
        loss = add(loss, cross_entropy_rows(view_rows[v], view_labels[v], ignore_index, &valid));
        total_valid += valid;
    }
    if (empty_warn) *empty_warn = total_valid == 0;
    return loss;
}

struct Metrics {
    double psnr = 0;
    double ssim = 0;
    double miou = 0;
    double acc = 0;
    double class_acc = 0;
};

// 10*log10(1/MSE) on [0,1]-clamped images, capped at 99 dB for MSE < 1e-10.
double psnr(const ImageF& a, const ImageF& b);

// 11x11 Gaussian window (sigma 1.5), standard constants on the [0,1] range,
// per-channel mean over valid window positions.
double ssim(const ImageF& a, const ImageF& b);

// Confusion-matrix metrics over pixels whose ground truth != 255; per-class
// statistics average over classes present in the ground truth.
struct SegScores {
    double miou = 0;
    double acc = 0;
    double class_acc = 0;
};
SegScores segmentation_scores(const LabelMap& prediction, const LabelMap& truth, int num_classes);

Metrics compute_metrics(const ImageF& image, const ImageF& image_ref, const LabelMap& labels,
                        const LabelMap& labels_ref, int num_classes);

}  // namespace gssplat
