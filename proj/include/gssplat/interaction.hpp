#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "gssplat/geometry.hpp"
#include "gssplat/network.hpp"
#include "gssplat/ops.hpp"

namespace gssplat {

// Uniform hash grid over point positions. Every point maps to exactly one
// cell; cell centers are the geometric centers of the cell cubes.
struct SpatialGrid {
    double interval = 0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    int num_cells = 0;
    std::vector<int32_t> cell_of_point;          // N
    std::vector<std::vector<int32_t>> members;   // per cell, ascending point index
    std::vector<Eigen::Vector3d> cell_centers;   // per cell
    std::vector<float> dist_norm;                // N, |x_i - x_l| / (half cell diagonal), in [0,1]
};

// positions: N*3 floats. origin defaults to the bounding-box min corner.
SpatialGrid build_grid(const std::vector<float>& positions, double unit_interval,
                       std::optional<Eigen::Vector3d> origin = std::nullopt);

// V'_i = V_i + Linear([V_i ; cellmean_i * d_i]); identity at zero weights.
template <typename S>
TensorT<S> aggregate_features(const TensorT<S>& features, const SpatialGrid& grid,
                              const nn::LinearLayer<S>& fuse) {
    opdetail::require(features.ndim() == 2 && features.dim(0) == static_cast<int>(grid.cell_of_point.size()),
                      "aggregate: feature rows must match grid points");
    auto cell_mean = segment_mean(features, grid.cell_of_point, grid.num_cells);
    auto pooled = gather_rows(cell_mean, grid.cell_of_point);
    std::vector<S> d(grid.dist_norm.begin(), grid.dist_norm.end());
    auto scaled = rowwise_scale(pooled, std::move(d));
    auto fused = fuse.forward(concat<S>({features, scaled}, 1));
    return add(features, fused);
}

// Offset head outputs in plain array form plus the hard mask (prob > 0.5).
struct OffsetPrediction {
    std::vector<float> prob;     // N, in [0,1]
    std::vector<float> offsets;  // N*3, bounded by the unit interval
    std::vector<uint8_t> mask;   // N, prob > 0.5

    int size() const { return static_cast<int>(prob.size()); }
    void validate(double unit_interval) const;
};

OffsetPrediction make_offset_prediction(std::vector<float> prob, std::vector<float> offsets,
                                        double unit_interval);

// mu_i = x_i + t_i when prob_i > 0.5 (strict), else x_i.
std::vector<float> apply_offsets(const std::vector<float>& positions, const OffsetPrediction& pred);

// Fraction of points with mask set.
double offset_statistics(const OffsetPrediction& pred);

// Tape version of Eq-style center update. Offsets receive gradients through
// the mask; offset probabilities only when straight_through is on.
template <typename S>
TensorT<S> apply_offsets_op(const std::vector<S>& positions, const TensorT<S>& offsets,
                            const TensorT<S>& offset_prob, bool straight_through) {
    int n = offsets.dim(0);
    opdetail::require(offsets.ndim() == 2 && offsets.dim(1) == 3, "apply_offsets: offsets must be [N,3]");
    opdetail::require(offset_prob.size() == n, "apply_offsets: prob count mismatch");
    opdetail::require(static_cast<int>(positions.size()) == 3 * n, "apply_offsets: position count mismatch");
    auto mask = std::make_shared<std::vector<uint8_t>>(n);
    std::vector<S> out(positions);
    for (int i = 0; i < n; ++i) {
        bool m = offset_prob.data()[i] > S(0.5);
        (*mask)[i] = m;
        if (m)
            for (int k = 0; k < 3; ++k) out[3 * i + k] += offsets.data()[3 * i + k];
    }
    return make_op<S>({n, 3}, std::move(out), {offsets, offset_prob},
                      [n, mask, straight_through](NodeT<S>& nd) {
                          auto& toff = *nd.parents[0];
                          auto& tprob = *nd.parents[1];
                          for (int i = 0; i < n; ++i) {
                              if ((*mask)[i] && toff.requires_grad)
                                  for (int k = 0; k < 3; ++k) toff.grad[3 * i + k] += nd.grad[3 * i + k];
                              if (straight_through && tprob.requires_grad) {
                                  S acc = S(0);
                                  for (int k = 0; k < 3; ++k)
                                      acc += nd.grad[3 * i + k] * toff.value[3 * i + k];
                                  tprob.grad[i] += acc;
                              }
                          }
                      });
}

struct DepthView {
    Camera camera;
    const ImageF* depth = nullptr;  // H x W x 1, invalid samples <= 0
};

template <typename S>
struct OffsetGroupLossT {
    double value = 0;
    bool no_visible_points = false;       // warning flag: empty group everywhere
    std::vector<S> d_positions;           // 3N; zero rows for masked points
    std::vector<S> d_prob;                // N; group partition pressure
    std::vector<double> point_residual;   // N; mean smooth-L1 depth residual (diagnostics)
};

// Projective depth-invariance loss over the non-offset group, averaged per
// view over points that land inside the view with positive depth on a valid
// depth sample; smooth-L1 threshold beta. Per-point partition pressure
// derivatives for the offset probability are always produced; position
// gradients treat the mask as fixed.
template <typename S>
OffsetGroupLossT<S> offset_group_loss(const std::vector<S>& positions, const std::vector<uint8_t>& mask,
                                      const std::vector<DepthView>& views, double beta = 1.0);

extern template OffsetGroupLossT<float> offset_group_loss<float>(const std::vector<float>&,
                                                                 const std::vector<uint8_t>&,
                                                                 const std::vector<DepthView>&, double);
extern template OffsetGroupLossT<double> offset_group_loss<double>(const std::vector<double>&,
                                                                   const std::vector<uint8_t>&,
                                                                   const std::vector<DepthView>&, double);

// Tape wrapper: value as a scalar tensor; backward feeds the partition
// pressure into the offset-probability tensor.
template <typename S>
TensorT<S> offset_group_loss_op(const std::vector<S>& positions, const TensorT<S>& offset_prob,
                                const std::vector<DepthView>& views, double beta = 1.0,
                                bool* warn_out = nullptr, std::vector<double>* residuals_out = nullptr) {
    int n = static_cast<int>(offset_prob.size());
    opdetail::require(static_cast<int>(positions.size()) == 3 * n, "offset loss: position count");
    std::vector<uint8_t> mask(n);
    for (int i = 0; i < n; ++i) mask[i] = offset_prob.data()[i] > S(0.5);
    auto res = std::make_shared<OffsetGroupLossT<S>>(offset_group_loss<S>(positions, mask, views, beta));
    if (warn_out) *warn_out = res->no_visible_points;
    if (residuals_out) *residuals_out = res->point_residual;
    return make_op<S>({1}, {static_cast<S>(res->value)}, {offset_prob}, [res](NodeT<S>& nd) {
        S g = nd.grad[0];
        auto& p = *nd.parents[0];
        for (size_t i = 0; i < res->d_prob.size(); ++i) p.grad[i] += g * res->d_prob[i];
    });
}

}  // namespace gssplat
