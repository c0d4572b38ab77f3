#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gssplat/dataset.hpp"
#include "gssplat/field.hpp"

namespace gssplat {

// Procedural desk-scale scene: a checkered floor rectangle (class 0) plus
// textured boxes and ellipsoids with per-class base colors, lit by one
// directional light, viewed from a camera orbit. Everything derives
// deterministically from the seed.
struct SceneSpec {
    uint64_t seed = 1;
    std::string id = "scene";
    int num_classes = 6;  // class 0 is the floor
    int num_objects = 8;
    int image_width = 64;
    int image_height = 64;
    double focal = 60.0;
    int train_views = 6;
    int novel_views = 3;
    double orbit_radius = 1.8;
    double view_brightness_jitter = 0.05;  // per-view multiplicative jitter
    double pixel_noise = 0.01;             // per-pixel additive noise sigma
    int reference_gaussians = 500;
    Eigen::Vector3d light_dir = Eigen::Vector3d(0.4, 0.8, 0.45).normalized();

    void validate() const;
};

SceneSpec load_scene_spec(const std::string& path);
void save_scene_spec(const std::string& path, const SceneSpec& spec);

struct GeneratedScene {
    ViewSet views;                 // includes train/novel split ids
    GaussianField reference_color;
    GaussianField reference_semantic;
};

GeneratedScene generate_scene(const SceneSpec& spec);

// Analytic depth of the closest surface along a pixel's ray (camera-frame z);
// nullopt when the ray misses. Exposed for oracle tests.
std::optional<double> trace_depth(const SceneSpec& spec, const Camera& camera, double u, double v);

// Renders a view set by rasterizing reference fields: color images, semantic
// argmax labels and expected depth (invalid where alpha is below 0.5).
ViewSet render_field_views(const GaussianField& color, const GaussianField& semantic,
                           const std::vector<Camera>& cameras, const std::vector<int>& train_ids,
                           const std::vector<int>& novel_ids, int num_classes, const std::string& scene_id);

}  // namespace gssplat
