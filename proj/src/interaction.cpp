#include "gssplat/interaction.hpp"

#include <cmath>
#include <unordered_map>

#include "gssplat/core.hpp"

namespace gssplat {

namespace {

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellKeyHash {
    size_t operator()(const CellKey& k) const {
        uint64_t h = static_cast<uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
        h ^= static_cast<uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
        h ^= static_cast<uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
        return static_cast<size_t>(h);
    }
};

}  // namespace

SpatialGrid build_grid(const std::vector<float>& positions, double unit_interval,
                       std::optional<Eigen::Vector3d> origin) {
    if (!(unit_interval > 0)) throw data_error("grid: unit interval must be positive");
    if (positions.size() % 3 != 0) throw data_error("grid: positions must be N*3");
    int n = static_cast<int>(positions.size() / 3);
    if (n == 0) throw data_error("grid: at least one point required");

    SpatialGrid grid;
    grid.interval = unit_interval;
    if (origin) {
        grid.origin = *origin;
    } else {
        Eigen::Vector3d mn(positions[0], positions[1], positions[2]);
        for (int i = 1; i < n; ++i)
            for (int k = 0; k < 3; ++k) mn[k] = std::min(mn[k], static_cast<double>(positions[3 * i + k]));
        grid.origin = mn;
    }

    grid.cell_of_point.resize(n);
    std::unordered_map<CellKey, int32_t, CellKeyHash> ids;
    ids.reserve(n);
    for (int i = 0; i < n; ++i) {
        CellKey key{};
        key.x = static_cast<int64_t>(std::floor((positions[3 * i] - grid.origin[0]) / unit_interval));
        key.y = static_cast<int64_t>(std::floor((positions[3 * i + 1] - grid.origin[1]) / unit_interval));
        key.z = static_cast<int64_t>(std::floor((positions[3 * i + 2] - grid.origin[2]) / unit_interval));
        auto [it, fresh] = ids.emplace(key, static_cast<int32_t>(ids.size()));
        if (fresh) {
            grid.members.emplace_back();
            grid.cell_centers.emplace_back(grid.origin[0] + (key.x + 0.5) * unit_interval,
                                           grid.origin[1] + (key.y + 0.5) * unit_interval,
                                           grid.origin[2] + (key.z + 0.5) * unit_interval);
        }
        grid.cell_of_point[i] = it->second;
        grid.members[it->second].push_back(i);
    }
    grid.num_cells = static_cast<int>(grid.members.size());

    const double half_diag = 0.5 * std::sqrt(3.0) * unit_interval;
    grid.dist_norm.resize(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d& c = grid.cell_centers[grid.cell_of_point[i]];
        Eigen::Vector3d p(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
        grid.dist_norm[i] = static_cast<float>(std::min(1.0, (p - c).norm() / half_diag));
    }
    return grid;
}

void OffsetPrediction::validate(double unit_interval) const {
    size_t n = prob.size();
    if (offsets.size() != n * 3 || mask.size() != n) throw data_error("offset prediction: length mismatch");
    for (size_t i = 0; i < n; ++i) {
        if (!(prob[i] >= 0.f && prob[i] <= 1.f)) throw data_error("offset prediction: probability out of [0,1]");
        if (mask[i] != (prob[i] > 0.5f ? 1 : 0)) throw data_error("offset prediction: mask != (prob > 0.5)");
        for (int k = 0; k < 3; ++k)
            if (std::abs(offsets[3 * i + k]) > unit_interval + 1e-6)
                throw data_error("offset prediction: offset exceeds unit interval");
    }
}

OffsetPrediction make_offset_prediction(std::vector<float> prob, std::vector<float> offsets,
                                        double unit_interval) {
    OffsetPrediction pred;
    pred.prob = std::move(prob);
    pred.offsets = std::move(offsets);
    pred.mask.resize(pred.prob.size());
    for (size_t i = 0; i < pred.prob.size(); ++i) pred.mask[i] = pred.prob[i] > 0.5f ? 1 : 0;
    pred.validate(unit_interval);
    return pred;
}

std::vector<float> apply_offsets(const std::vector<float>& positions, const OffsetPrediction& pred) {
    if (positions.size() != pred.prob.size() * 3)
        throw data_error("apply_offsets: positions do not match prediction");
    std::vector<float> out = positions;
    for (size_t i = 0; i < pred.prob.size(); ++i)
        if (pred.mask[i])
            for (int k = 0; k < 3; ++k) out[3 * i + k] += pred.offsets[3 * i + k];
    return out;
}

double offset_statistics(const OffsetPrediction& pred) {
    if (pred.mask.empty()) return 0.0;
    size_t count = 0;
    for (uint8_t m : pred.mask) count += m;
    return static_cast<double>(count) / pred.mask.size();
}

template <typename S>
OffsetGroupLossT<S> offset_group_loss(const std::vector<S>& positions, const std::vector<uint8_t>& mask,
                                      const std::vector<DepthView>& views, double beta) {
    if (views.empty()) throw data_error("offset loss: at least one view required");
    if (!(beta > 0)) throw data_error("offset loss: beta must be positive");
    int n = static_cast<int>(mask.size());
    if (positions.size() != static_cast<size_t>(n) * 3) throw data_error("offset loss: position count");

    OffsetGroupLossT<S> out;
    out.d_positions.assign(static_cast<size_t>(n) * 3, S(0));
    out.d_prob.assign(n, S(0));
    out.point_residual.assign(n, 0.0);
    std::vector<int> point_views(n, 0);

    const int k_views = static_cast<int>(views.size());
    double total = 0;
    bool any_visible = false;

    // Per view: smooth-L1 residuals for every eligible point; the loss value
    // and position gradients use only the non-offset group, the partition
    // pressure uses all eligible points.
    std::vector<double> sl(n);
    std::vector<double> dsl(n);
    std::vector<uint8_t> eligible(n);
    for (const auto& view : views) {
        const ImageF& depth = *view.depth;
        const auto& K = view.camera.intrinsics;
        std::fill(eligible.begin(), eligible.end(), 0);
        int group_count = 0;
        double group_sum = 0;
        for (int i = 0; i < n; ++i) {
            Eigen::Vector3d p(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
            auto proj = project_point(view.camera, p);
            if (!proj) continue;
            if (proj->u < 0 || proj->u >= K.width || proj->v < 0 || proj->v >= K.height) continue;
            int px = static_cast<int>(proj->u);
            int py = static_cast<int>(proj->v);
            float d = depth.at(py, px, 0);
            if (!(d > 0.f)) continue;
            double e = proj->depth - d;
            double ae = std::abs(e);
            if (ae < beta) {
                sl[i] = 0.5 * e * e / beta;
                dsl[i] = e / beta;
            } else {
                sl[i] = ae - 0.5 * beta;
                dsl[i] = e > 0 ? 1.0 : -1.0;
            }
            eligible[i] = 1;
            out.point_residual[i] += sl[i];
            ++point_views[i];
            if (!mask[i]) {
                ++group_count;
                group_sum += sl[i];
            }
        }
        if (group_count == 0) continue;
        any_visible = true;
        double mean_sl = group_sum / group_count;
        total += mean_sl;
        double inv_kd = 1.0 / (static_cast<double>(k_views) * group_count);
        for (int i = 0; i < n; ++i) {
            if (!eligible[i]) continue;
            // d/dm_i of the masked per-view mean, evaluated at the current mask
            out.d_prob[i] += static_cast<S>((mean_sl - sl[i]) * inv_kd);
            if (mask[i]) continue;
            Eigen::Vector3d zdir = view.camera.pose.rotation.col(2);
            double gz = dsl[i] * inv_kd;
            for (int c = 0; c < 3; ++c) out.d_positions[3 * i + c] += static_cast<S>(gz * zdir[c]);
        }
    }

    out.value = total / k_views;
    out.no_visible_points = !any_visible;
    for (int i = 0; i < n; ++i)
        if (point_views[i] > 0) out.point_residual[i] /= point_views[i];
    return out;
}

template OffsetGroupLossT<float> offset_group_loss<float>(const std::vector<float>&, const std::vector<uint8_t>&,
                                                          const std::vector<DepthView>&, double);
template OffsetGroupLossT<double> offset_group_loss<double>(const std::vector<double>&,
                                                            const std::vector<uint8_t>&,
                                                            const std::vector<DepthView>&, double);

}  // namespace gssplat
