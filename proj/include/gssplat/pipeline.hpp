#pragma once

#include <string>
#include <vector>

#include "gssplat/checkpoint.hpp"
#include "gssplat/dataset.hpp"
#include "gssplat/field.hpp"
#include "gssplat/interaction.hpp"
#include "gssplat/network.hpp"
#include "gssplat/objective.hpp"
#include "gssplat/raster.hpp"

namespace gssplat {

struct PipelineConfig {
    HybridNetConfig net = HybridNetConfig::defaults();
    RasterConfig raster;
    LossWeights weights;
    double unit_interval_scale = 1.0 / 64.0;  // grid interval = extent * scale
    double log_scale_bias = -4.0;
    bool straight_through_mask = false;  // extra mask gradient in the render path
    bool interaction_enabled = true;
    int pixel_stride = 1;  // deterministic point subsampling (1 = off)
    double offset_beta = 1.0;

    // training
    double lr = 5e-4;
    int train_steps = 1000;
    int source_views = 2;  // K
    uint64_t seed = 1;

    // per-scene fitting
    int fit_steps = 2000;
    int fit_max_gaussians = 4000;
    double fit_lr = 2e-2;

    void validate() const;
    SidecarConfig sidecar() const;
    void apply_sidecar(const SidecarConfig& sc);
};

// Network weights plus the interaction fusion layers and the two parameter
// heads; everything lives in one named parameter store.
struct GsModel {
    PipelineConfig cfg;
    ParamStore<float> params;
    HybridNet<float> net;
    nn::LinearLayer<float> fuse_color, fuse_semantic;
    GaussianHeads<float> heads_color, heads_semantic;
};

GsModel build_model(const PipelineConfig& cfg);
void save_model(const std::string& checkpoint_path, const GsModel& model);
GsModel load_model(const std::string& checkpoint_path, PipelineConfig cfg_overrides);

struct StageTimings {
    double network_s = 0;
    double init_s = 0;         // unprojection + feature mapping
    double interaction_s = 0;  // grid + aggregation
    double heads_s = 0;        // parameter heads + offsets + field assembly
    double render_color_s = 0;
    double render_semantic_s = 0;
    double total_s = 0;

    double sum() const {
        return network_s + init_s + interaction_s + heads_s + render_color_s + render_semantic_s;
    }
};

// Field parameters still attached to the tape, as produced by the heads.
struct FieldTensors {
    Tensor centers;         // [N,3] after offset application
    Tensor quaternions;     // [N,4]
    Tensor log_scales;      // [N,3]
    Tensor opacity_logits;  // [N,1]
    Tensor payload;         // [N,C]
    Tensor offset_prob;     // [N,1]
};

struct ReconstructTape {
    std::vector<float> base_positions;  // unprojected centers (constants), 3N
    FieldTensors color;
    FieldTensors semantic;
    Tensor seg2d_rows;  // [K*H*W, classes]
    int n_points = 0;
    StageTimings timings;
};

// Feed-forward reconstruction with the graph kept alive (training mode).
ReconstructTape reconstruct_tape(const GsModel& model, const ViewSet& scene,
                                 const std::vector<int>& source_ids);

struct ReconstructionResult {
    GaussianField color_field;
    GaussianField semantic_field;
    double offset_fraction_color = 0;
    double offset_fraction_semantic = 0;
    StageTimings timings;
    // Offset diagnostics for the group-supervision analysis.
    std::vector<float> base_positions;
    std::vector<uint8_t> mask_color;
    std::vector<uint8_t> mask_semantic;
};

// Inference-mode reconstruction; deterministic in (weights, views, config).
// When render_camera is non-null, one render per field is included in the
// stage timings.
ReconstructionResult reconstruct(const GsModel& model, const ViewSet& scene,
                                 const std::vector<int>& source_ids, const Camera* render_camera = nullptr);

GaussianField field_from_tensors(const FieldTensors& ft, FieldKind kind, int channels, float scene_extent);

// Tile rasterizer as a tape node. Outputs pixel-major rows plus alpha/depth.
struct RenderTensors {
    Tensor channels_rows;  // [H*W, C]
    Tensor alpha;          // [H*W]
    Tensor depth;          // [H*W]
};

RenderTensors rasterize_op(const FieldTensors& ft, FieldKind kind, int channels, float scene_extent,
                           const Camera& camera, const RasterConfig& config);

struct TrainStats {
    std::vector<LossReport> history;
    int64_t skipped_steps = 0;
    int64_t adam_skipped_tensors = 0;
};

TrainStats train(GsModel& model, const std::vector<ViewSet>& scenes, const PipelineConfig& cfg);

struct FitResult {
    GaussianField field;
    std::vector<double> loss_history;
};

// Per-scene direct optimization of field parameters (no network);
// initialization from unprojected source views.
FitResult fit_scene(const ViewSet& scene, const std::vector<int>& source_ids, FieldKind kind, int channels,
                    const PipelineConfig& cfg);

struct SceneEvaluation {
    std::string scene_id;
    Metrics metrics;
    double offset_fraction_color = 0;
    double offset_fraction_semantic = 0;
    StageTimings timings;
};

struct EvaluationReport {
    std::vector<SceneEvaluation> scenes;
    Metrics mean;
};

EvaluationReport evaluate(const GsModel& model, const std::vector<ViewSet>& scenes,
                          const PipelineConfig& cfg);

std::string evaluation_to_json(const EvaluationReport& report);

// Depth views of a scene's source cameras, for the offset group loss.
std::vector<DepthView> source_depth_views(const ViewSet& scene, const std::vector<int>& source_ids);

}  // namespace gssplat
