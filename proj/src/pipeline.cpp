#include "gssplat/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "gssplat/core.hpp"
#include "gssplat/scene.hpp"

namespace gssplat {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void PipelineConfig::validate() const {
    net.validate();
    raster.validate();
    weights.validate();
    if (!(unit_interval_scale > 0)) throw data_error("config: unit interval scale must be positive");
    if (pixel_stride < 1) throw data_error("config: pixel stride must be >= 1");
    if (source_views < 1) throw data_error("config: need at least one source view");
    if (!(lr >= 0) || !(fit_lr >= 0)) throw data_error("config: learning rates must be non-negative");
    if (train_steps < 0 || fit_steps < 0) throw data_error("config: step counts must be non-negative");
    if (fit_max_gaussians < 1) throw data_error("config: fit gaussian budget");
    if (!(offset_beta > 0)) throw data_error("config: offset beta must be positive");
}

SidecarConfig PipelineConfig::sidecar() const {
    SidecarConfig sc;
    sc.net = net;
    sc.unit_interval_scale = unit_interval_scale;
    sc.log_scale_bias = log_scale_bias;
    sc.straight_through_mask = straight_through_mask;
    return sc;
}

void PipelineConfig::apply_sidecar(const SidecarConfig& sc) {
    net = sc.net;
    unit_interval_scale = sc.unit_interval_scale;
    log_scale_bias = sc.log_scale_bias;
    straight_through_mask = sc.straight_through_mask;
}

GsModel build_model(const PipelineConfig& cfg) {
    cfg.validate();
    GsModel m;
    m.cfg = cfg;
    Rng rng(cfg.net.init_seed, 0x6e7);
    m.net = build_hybrid_net<float>(cfg.net, m.params, rng);
    int cd = cfg.net.decoder_channels;
    m.fuse_color = nn::make_linear(m.params, "fuse_color", 2 * cd, cd, rng);
    m.fuse_semantic = nn::make_linear(m.params, "fuse_semantic", 2 * cd, cd, rng);
    m.heads_color = make_heads(m.params, "head_color", cd, 3, true, cfg.log_scale_bias, rng);
    m.heads_semantic =
        make_heads(m.params, "head_semantic", cd, cfg.net.num_classes, false, cfg.log_scale_bias, rng);
    return m;
}

void save_model(const std::string& checkpoint_path, const GsModel& model) {
    save_checkpoint(checkpoint_path, model.params);
    save_sidecar(checkpoint_path + ".json", model.cfg.sidecar());
}

GsModel load_model(const std::string& checkpoint_path, PipelineConfig cfg) {
    SidecarConfig sc = load_sidecar(checkpoint_path + ".json");
    cfg.apply_sidecar(sc);
    GsModel model = build_model(cfg);
    load_checkpoint(checkpoint_path, model.params);
    return model;
}

namespace {

Tensor images_to_tensor(const ViewSet& scene, const std::vector<int>& ids) {
    int k = static_cast<int>(ids.size());
    int h = scene.views[ids[0]].image.height, w = scene.views[ids[0]].image.width;
    std::vector<float> data(static_cast<size_t>(k) * 3 * h * w);
    for (int vi = 0; vi < k; ++vi) {
        const ImageF& img = scene.views[ids[vi]].image;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    data[((static_cast<size_t>(vi) * 3 + c) * h + y) * w + x] = img.at(y, x, c);
    }
    return Tensor::constant({k, 3, h, w}, std::move(data));
}

// 4x4 block mean over valid samples, normalized by the scene extent.
Tensor depth_quarter_tensor(const ViewSet& scene, const std::vector<int>& ids) {
    int k = static_cast<int>(ids.size());
    int h = scene.views[ids[0]].depth.height, w = scene.views[ids[0]].depth.width;
    int h4 = h / 4, w4 = w / 4;
    std::vector<float> data(static_cast<size_t>(k) * h4 * w4, 0.f);
    for (int vi = 0; vi < k; ++vi) {
        const ImageF& d = scene.views[ids[vi]].depth;
        for (int y = 0; y < h4; ++y)
            for (int x = 0; x < w4; ++x) {
                double acc = 0;
                int count = 0;
                for (int dy = 0; dy < 4; ++dy)
                    for (int dx = 0; dx < 4; ++dx) {
                        float v = d.at(4 * y + dy, 4 * x + dx, 0);
                        if (v > 0.f) {
                            acc += v;
                            ++count;
                        }
                    }
                if (count > 0)
                    data[(static_cast<size_t>(vi) * h4 + y) * w4 + x] =
                        static_cast<float>(acc / count / scene.scene_extent);
            }
    }
    return Tensor::constant({k, 1, h4, w4}, std::move(data));
}

struct PointCloudInit {
    std::vector<float> positions;     // 3N world
    std::vector<int32_t> feat_index;  // N, into [K*H*W] feature rows
    std::vector<int32_t> view_of;     // N
    std::vector<int32_t> pixel_of;    // N, flat pixel in its view
};

PointCloudInit unproject_sources(const ViewSet& scene, const std::vector<int>& ids, int pixel_stride) {
    PointCloudInit out;
    int h = scene.views[ids[0]].depth.height, w = scene.views[ids[0]].depth.width;
    for (size_t vi = 0; vi < ids.size(); ++vi) {
        const View& view = scene.views[ids[vi]];
        for (int y = 0; y < h; ++y) {
            if (y % pixel_stride) continue;
            for (int x = 0; x < w; ++x) {
                if (x % pixel_stride) continue;
                float d = view.depth.at(y, x, 0);
                if (!(d > 0.f)) continue;
                Eigen::Vector3d p = unproject_pixel(view.camera, x + 0.5, y + 0.5, d);
                out.positions.push_back(static_cast<float>(p.x()));
                out.positions.push_back(static_cast<float>(p.y()));
                out.positions.push_back(static_cast<float>(p.z()));
                out.feat_index.push_back(static_cast<int32_t>(vi) * h * w + y * w + x);
                out.view_of.push_back(static_cast<int32_t>(vi));
                out.pixel_of.push_back(y * w + x);
            }
        }
    }
    return out;
}

FieldTensors run_heads(const GaussianHeads<float>& heads, const Tensor& features,
                       const std::vector<float>& base_positions, double unit_interval, double extent,
                       bool straight_through) {
    HeadOutputs<float> ho = heads.forward(features, unit_interval, extent);
    FieldTensors ft;
    ft.offset_prob = ho.offset_prob;
    ft.centers = apply_offsets_op<float>(base_positions, ho.offsets, ho.offset_prob, straight_through);
    ft.quaternions = ho.rotations;
    ft.log_scales = ho.log_scales;
    ft.opacity_logits = ho.opacity_logits;
    ft.payload = ho.payload;
    return ft;
}

std::vector<uint8_t> mask_of(const Tensor& offset_prob) {
    std::vector<uint8_t> mask(offset_prob.size());
    for (int64_t i = 0; i < offset_prob.size(); ++i) mask[i] = offset_prob.data()[i] > 0.5f ? 1 : 0;
    return mask;
}

double mask_fraction(const std::vector<uint8_t>& mask) {
    if (mask.empty()) return 0.0;
    size_t c = 0;
    for (uint8_t m : mask) c += m;
    return static_cast<double>(c) / mask.size();
}

}  // namespace

std::vector<DepthView> source_depth_views(const ViewSet& scene, const std::vector<int>& source_ids) {
    std::vector<DepthView> views;
    for (int id : source_ids) views.push_back({scene.views[id].camera, &scene.views[id].depth});
    return views;
}

ReconstructTape reconstruct_tape(const GsModel& model, const ViewSet& scene,
                                 const std::vector<int>& source_ids) {
    scene.validate();
    if (source_ids.empty()) throw data_error("reconstruct: no source views");
    auto t_start = std::chrono::steady_clock::now();
    ReconstructTape out;

    auto t0 = std::chrono::steady_clock::now();
    Tensor images = images_to_tensor(scene, source_ids);
    Tensor depth_q = depth_quarter_tensor(scene, source_ids);
    FeatureMaps maps = model.net.forward(images, depth_q);
    out.timings.network_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    PointCloudInit cloud = unproject_sources(scene, source_ids, model.cfg.pixel_stride);
    if (cloud.feat_index.empty()) throw data_error("reconstruct: no valid depth samples in source views");
    out.base_positions = cloud.positions;
    out.n_points = static_cast<int>(cloud.feat_index.size());
    Tensor color_rows = gather_rows(nchw_to_rows(maps.color), cloud.feat_index);
    Tensor semantic_rows = gather_rows(nchw_to_rows(maps.semantic), cloud.feat_index);
    out.seg2d_rows = nchw_to_rows(maps.seg2d);
    out.timings.init_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    double unit_interval = scene.scene_extent * model.cfg.unit_interval_scale;
    if (model.cfg.interaction_enabled) {
        SpatialGrid grid = build_grid(cloud.positions, unit_interval);
        color_rows = aggregate_features(color_rows, grid, model.fuse_color);
        semantic_rows = aggregate_features(semantic_rows, grid, model.fuse_semantic);
    }
    out.timings.interaction_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    out.color = run_heads(model.heads_color, color_rows, cloud.positions, unit_interval, scene.scene_extent,
                          model.cfg.straight_through_mask);
    out.semantic = run_heads(model.heads_semantic, semantic_rows, cloud.positions, unit_interval,
                             scene.scene_extent, model.cfg.straight_through_mask);
    out.timings.heads_s = seconds_since(t0);
    out.timings.total_s = seconds_since(t_start);
    return out;
}

GaussianField field_from_tensors(const FieldTensors& ft, FieldKind kind, int channels, float scene_extent) {
    int n = ft.centers.dim(0);
    GaussianField f = make_field(kind, channels, scene_extent, n);
    f.centers = ft.centers.data();
    f.quaternions = ft.quaternions.data();
    f.log_scales = ft.log_scales.data();
    f.opacity_logits = ft.opacity_logits.data();
    f.payloads = ft.payload.data();
    f.validate();
    return f;
}

ReconstructionResult reconstruct(const GsModel& model, const ViewSet& scene,
                                 const std::vector<int>& source_ids, const Camera* render_camera) {
    NoGradGuard guard;
    ReconstructTape tape = reconstruct_tape(model, scene, source_ids);
    ReconstructionResult res;
    res.color_field = field_from_tensors(tape.color, FieldKind::Color, 3, scene.scene_extent);
    res.semantic_field =
        field_from_tensors(tape.semantic, FieldKind::Semantic, model.cfg.net.num_classes, scene.scene_extent);
    res.base_positions = tape.base_positions;
    res.mask_color = mask_of(tape.color.offset_prob);
    res.mask_semantic = mask_of(tape.semantic.offset_prob);
    res.offset_fraction_color = mask_fraction(res.mask_color);
    res.offset_fraction_semantic = mask_fraction(res.mask_semantic);
    res.timings = tape.timings;
    if (render_camera) {
        auto t0 = std::chrono::steady_clock::now();
        rasterize(res.color_field, *render_camera, model.cfg.raster);
        res.timings.render_color_s = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        rasterize(res.semantic_field, *render_camera, model.cfg.raster);
        res.timings.render_semantic_s = seconds_since(t0);
        res.timings.total_s += res.timings.render_color_s + res.timings.render_semantic_s;
    }
    return res;
}

RenderTensors rasterize_op(const FieldTensors& ft, FieldKind kind, int channels, float scene_extent,
                           const Camera& camera, const RasterConfig& config) {
    auto field = std::make_shared<GaussianField>(field_from_tensors(ft, kind, channels, scene_extent));
    auto ctx = std::make_shared<RasterContext>();
    RenderOutput out = rasterize(*field, camera, config, ctx.get());
    int pixels = out.height * out.width;
    std::vector<float> packed;
    packed.reserve(static_cast<size_t>(pixels) * (channels + 2));
    packed.insert(packed.end(), out.channels_data.begin(), out.channels_data.end());
    packed.insert(packed.end(), out.alpha.begin(), out.alpha.end());
    packed.insert(packed.end(), out.depth.begin(), out.depth.end());

    Camera cam = camera;
    RasterConfig cfg = config;
    Tensor node = make_op<float>(
        {pixels * (channels + 2)}, std::move(packed),
        {ft.centers, ft.quaternions, ft.log_scales, ft.opacity_logits, ft.payload},
        [field, ctx, cam, cfg, channels, pixels](NodeT<float>& nd) {
            RenderGradients rg;
            rg.channels.assign(nd.grad.begin(), nd.grad.begin() + static_cast<size_t>(pixels) * channels);
            rg.alpha.assign(nd.grad.begin() + static_cast<size_t>(pixels) * channels,
                            nd.grad.begin() + static_cast<size_t>(pixels) * (channels + 1));
            rg.depth.assign(nd.grad.begin() + static_cast<size_t>(pixels) * (channels + 1), nd.grad.end());
            FieldGradients fg = rasterize_backward(*field, cam, cfg, *ctx, rg);
            auto accumulate = [](NodeT<float>& p, const std::vector<float>& g) {
                if (!p.requires_grad) return;
                for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
            };
            accumulate(*nd.parents[0], fg.centers);
            accumulate(*nd.parents[1], fg.quaternions);
            accumulate(*nd.parents[2], fg.log_scales);
            accumulate(*nd.parents[3], fg.opacity_logits);
            accumulate(*nd.parents[4], fg.payloads);
        });

    RenderTensors rt;
    rt.channels_rows = slice_flat(node, 0, {pixels, channels});
    rt.alpha = slice_flat(node, static_cast<int64_t>(pixels) * channels, {pixels});
    rt.depth = slice_flat(node, static_cast<int64_t>(pixels) * (channels + 1), {pixels});
    return rt;
}

namespace {

std::vector<int32_t> labels_to_int(const LabelMap& labels) {
    std::vector<int32_t> out(labels.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = labels.data[i];
    return out;
}

std::vector<int> sample_distinct(Rng& rng, const std::vector<int>& pool, int count) {
    if (static_cast<int>(pool.size()) < count)
        throw data_error("train: not enough views to sample from");
    std::vector<int> shuffled = pool;
    for (int i = static_cast<int>(shuffled.size()) - 1; i > 0; --i)
        std::swap(shuffled[i], shuffled[rng.uniform_int(i + 1)]);
    shuffled.resize(count);
    return shuffled;
}

}  // namespace

TrainStats train(GsModel& model, const std::vector<ViewSet>& scenes, const PipelineConfig& cfg) {
    cfg.validate();
    if (scenes.empty()) throw data_error("train: no scenes");
    for (const auto& s : scenes) {
        s.validate();
        bool labels = true;
        for (int id : s.train_ids) labels = labels && s.views[id].has_labels;
        if (!labels) throw data_error("train: scene " + s.scene_id + " lacks labels on train views");
        if (static_cast<int>(s.train_ids.size()) < cfg.source_views + 1)
            throw data_error("train: scene " + s.scene_id + " needs K+1 train views");
    }

    TrainStats stats;
    AdamState<float> adam;
    adam.init(model.params);
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Rng rng(cfg.seed, 0x7a11);

    for (int step = 0; step < cfg.train_steps; ++step) {
        const ViewSet& scene = scenes[rng.uniform_int(static_cast<uint32_t>(scenes.size()))];
        std::vector<int> picks = sample_distinct(rng, scene.train_ids, cfg.source_views + 1);
        int target_id = picks.back();
        picks.pop_back();
        const std::vector<int>& sources = picks;
        const View& target = scene.views[target_id];

        ReconstructTape tape = reconstruct_tape(model, scene, sources);
        int h = target.image.height, w = target.image.width;

        RenderTensors color_r = rasterize_op(tape.color, FieldKind::Color, 3, scene.scene_extent,
                                             target.camera, cfg.raster);
        RenderTensors sem_r = rasterize_op(tape.semantic, FieldKind::Semantic, model.cfg.net.num_classes,
                                           scene.scene_extent, target.camera, cfg.raster);

        Tensor l_c = color_loss(color_r.channels_rows, target.image.data, cfg.weights, h, w, 3);

        std::vector<Tensor> view_rows;
        std::vector<std::vector<int32_t>> view_labels;
        int hw = h * w;
        for (size_t vi = 0; vi < sources.size(); ++vi) {
            view_rows.push_back(slice_rows(tape.seg2d_rows, static_cast<int>(vi) * hw,
                                           static_cast<int>(vi + 1) * hw));
            view_labels.push_back(labels_to_int(scene.views[sources[vi]].labels));
        }
        Tensor l_s = semantic_loss(sem_r.channels_rows, labels_to_int(target.labels), view_rows, view_labels);

        auto depth_views = source_depth_views(scene, sources);
        Tensor l_f_color = offset_group_loss_op<float>(tape.base_positions, tape.color.offset_prob,
                                                       depth_views, cfg.offset_beta);
        Tensor l_f_sem = offset_group_loss_op<float>(tape.base_positions, tape.semantic.offset_prob,
                                                     depth_views, cfg.offset_beta);
        Tensor l_f = scalar_mul(add(l_f_color, l_f_sem), 0.5);

        Tensor total = add(add(l_c, l_s), scalar_mul(l_f, cfg.weights.lambda_f));

        LossReport report =
            total_loss(l_c.item(), l_s.item(), l_f.item(), 0.0, cfg.weights);
        if (!std::isfinite(report.total)) {
            ++stats.skipped_steps;
            if (stats.skipped_steps * 100 > std::max(1, step + 1))
                throw numeric_error("train: more than 1% non-finite steps (step " + std::to_string(step) +
                                    ", L_C=" + std::to_string(report.l_c) +
                                    ", L_S=" + std::to_string(report.l_s) +
                                    ", L_f=" + std::to_string(report.l_f) + ")");
            continue;
        }

        model.params.zero_grad();
        backward(total);
        adam_step(model.params, adam, acfg);
        stats.history.push_back(report);
    }
    stats.adam_skipped_tensors = adam.skipped;
    return stats;
}

FitResult fit_scene(const ViewSet& scene, const std::vector<int>& source_ids, FieldKind kind, int channels,
                    const PipelineConfig& cfg) {
    cfg.validate();
    scene.validate();
    if (source_ids.empty()) throw data_error("fit: no source views");
    if (kind == FieldKind::Semantic)
        for (int id : source_ids)
            if (!scene.views[id].has_labels) throw data_error("fit: semantic fitting needs labels");

    // deterministic point budget: every k-th valid sample
    PointCloudInit cloud = unproject_sources(scene, source_ids, 1);
    int total = static_cast<int>(cloud.feat_index.size());
    if (total == 0) throw data_error("fit: no valid depth samples");
    int stride = (total + cfg.fit_max_gaussians - 1) / cfg.fit_max_gaussians;
    int n = 0;
    for (int i = 0; i < total; i += stride) ++n;

    std::vector<float> centers(static_cast<size_t>(n) * 3), quats(static_cast<size_t>(n) * 4, 0.f);
    std::vector<float> log_scales(static_cast<size_t>(n) * 3), opac(n, 0.f);
    std::vector<float> payload(static_cast<size_t>(n) * channels, 0.f);
    int h = scene.views[source_ids[0]].image.height;
    int w = scene.views[source_ids[0]].image.width;
    double spacing_gain = 0.8 * std::sqrt(static_cast<double>(stride));
    for (int j = 0, i = 0; i < total; i += stride, ++j) {
        for (int k = 0; k < 3; ++k) centers[3 * j + k] = cloud.positions[3 * i + k];
        quats[4 * j] = 1.f;
        const View& view = scene.views[source_ids[cloud.view_of[i]]];
        int pix = cloud.pixel_of[i];
        double z = view.depth.data[pix];
        double footprint = std::max(1e-4, spacing_gain * z / view.camera.intrinsics.fx);
        for (int k = 0; k < 3; ++k) log_scales[3 * j + k] = static_cast<float>(std::log(footprint));
        int py = pix / w, px = pix % w;
        if (kind == FieldKind::Color) {
            for (int c = 0; c < 3; ++c) payload[static_cast<size_t>(j) * 3 + c] = view.image.at(py, px, c);
        } else {
            uint8_t lab = view.labels.at(py, px);
            if (lab != 255 && lab < channels) payload[static_cast<size_t>(j) * channels + lab] = 4.f;
        }
    }

    ParamStore<float> params;
    FieldTensors ft;
    ft.centers = params.add("centers", Tensor::param({n, 3}, std::move(centers)));
    ft.quaternions = params.add("quaternions", Tensor::param({n, 4}, std::move(quats)));
    ft.log_scales = params.add("log_scales", Tensor::param({n, 3}, std::move(log_scales)));
    ft.opacity_logits = params.add("opacity_logits", Tensor::param({n, 1}, std::move(opac)));
    ft.payload = params.add("payload", Tensor::param({n, channels}, std::move(payload)));
    ft.offset_prob = Tensor::zeros({n, 1});

    AdamState<float> adam;
    adam.init(params);
    AdamConfig acfg;
    acfg.lr = cfg.fit_lr;

    FitResult result;
    Rng rng(cfg.seed, 0xf17);
    double lo = std::log(1e-6 * scene.scene_extent), hi = std::log(scene.scene_extent);
    for (int step = 0; step < cfg.fit_steps; ++step) {
        const View& view = scene.views[source_ids[rng.uniform_int(static_cast<uint32_t>(source_ids.size()))]];
        RenderTensors r = rasterize_op(ft, kind, channels, scene.scene_extent, view.camera, cfg.raster);
        Tensor loss;
        if (kind == FieldKind::Color) {
            loss = color_loss(r.channels_rows, view.image.data, cfg.weights, view.image.height,
                              view.image.width, 3);
        } else {
            loss = cross_entropy_rows(r.channels_rows, labels_to_int(view.labels));
        }
        result.loss_history.push_back(loss.item());
        params.zero_grad();
        backward(loss);
        adam_step(params, adam, acfg);

        // projection back onto the field invariants
        auto& ls = ft.log_scales.data();
        for (auto& v : ls) v = std::clamp(v, static_cast<float>(lo), static_cast<float>(hi));
        if (kind == FieldKind::Color) {
            auto& pl = ft.payload.data();
            for (auto& v : pl) v = std::clamp(v, 0.f, 1.f);
        }
    }

    result.field = field_from_tensors(ft, kind, channels, scene.scene_extent);
    // normalize quaternions on export
    for (int i = 0; i < n; ++i) {
        float* q = &result.field.quaternions[4 * i];
        float norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (norm < 1e-8f) {
            q[0] = 1.f;
            q[1] = q[2] = q[3] = 0.f;
        } else {
            for (int k = 0; k < 4; ++k) q[k] /= norm;
        }
    }
    return result;
}

EvaluationReport evaluate(const GsModel& model, const std::vector<ViewSet>& scenes,
                          const PipelineConfig& cfg) {
    cfg.validate();
    if (scenes.empty()) throw data_error("evaluate: no scenes");
    EvaluationReport report;
    double psnr_acc = 0, ssim_acc = 0, miou_acc = 0, acc_acc = 0, cacc_acc = 0;
    for (const auto& scene : scenes) {
        scene.validate();
        if (scene.novel_ids.empty()) throw data_error("evaluate: scene has no novel views");
        std::vector<int> sources(scene.train_ids.begin(),
                                 scene.train_ids.begin() +
                                     std::min<size_t>(cfg.source_views, scene.train_ids.size()));
        const Camera& timing_cam = scene.views[scene.novel_ids[0]].camera;
        ReconstructionResult rec = reconstruct(model, scene, sources, &timing_cam);

        SceneEvaluation ev;
        ev.scene_id = scene.scene_id;
        ev.offset_fraction_color = rec.offset_fraction_color;
        ev.offset_fraction_semantic = rec.offset_fraction_semantic;
        ev.timings = rec.timings;
        double p = 0, s = 0, m = 0, a = 0, ca = 0;
        for (int id : scene.novel_ids) {
            const View& novel = scene.views[id];
            auto rc = rasterize(rec.color_field, novel.camera, cfg.raster);
            auto rs = rasterize(rec.semantic_field, novel.camera, cfg.raster);
            Metrics metrics = compute_metrics(render_channels_image(rc), novel.image,
                                              render_argmax_labels(rs), novel.labels, scene.num_classes);
            p += metrics.psnr;
            s += metrics.ssim;
            m += metrics.miou;
            a += metrics.acc;
            ca += metrics.class_acc;
        }
        double inv = 1.0 / scene.novel_ids.size();
        ev.metrics.psnr = p * inv;
        ev.metrics.ssim = s * inv;
        ev.metrics.miou = m * inv;
        ev.metrics.acc = a * inv;
        ev.metrics.class_acc = ca * inv;
        report.scenes.push_back(ev);
        psnr_acc += ev.metrics.psnr;
        ssim_acc += ev.metrics.ssim;
        miou_acc += ev.metrics.miou;
        acc_acc += ev.metrics.acc;
        cacc_acc += ev.metrics.class_acc;
    }
    double inv = 1.0 / report.scenes.size();
    report.mean.psnr = psnr_acc * inv;
    report.mean.ssim = ssim_acc * inv;
    report.mean.miou = miou_acc * inv;
    report.mean.acc = acc_acc * inv;
    report.mean.class_acc = cacc_acc * inv;
    return report;
}

namespace {

json timings_json(const StageTimings& t) {
    return {{"network_s", t.network_s},
            {"init_s", t.init_s},
            {"interaction_s", t.interaction_s},
            {"heads_s", t.heads_s},
            {"render_color_s", t.render_color_s},
            {"render_semantic_s", t.render_semantic_s},
            {"total_s", t.total_s}};
}

json metrics_json(const Metrics& m) {
    return {{"psnr", m.psnr}, {"ssim", m.ssim}, {"miou", m.miou}, {"acc", m.acc}, {"class_acc", m.class_acc}};
}

}  // namespace

std::string evaluation_to_json(const EvaluationReport& report) {
    json j;
    j["scenes"] = json::array();
    for (const auto& s : report.scenes) {
        json e = metrics_json(s.metrics);
        e["id"] = s.scene_id;
        e["offset_fraction_color"] = s.offset_fraction_color;
        e["offset_fraction_semantic"] = s.offset_fraction_semantic;
        e["timing"] = timings_json(s.timings);
        j["scenes"].push_back(e);
    }
    j["mean"] = metrics_json(report.mean);
    return j.dump(2);
}

}  // namespace gssplat
