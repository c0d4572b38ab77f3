#include "gssplat/scene.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "gssplat/core.hpp"
#include "gssplat/raster.hpp"

namespace gssplat {

using json = nlohmann::json;

void SceneSpec::validate() const {
    if (num_classes < 2 || num_classes > 32) throw data_error("scene spec: num_classes must be in [2,32]");
    if (num_objects < 1) throw data_error("scene spec: at least one object");
    if (image_width < 16 || image_height < 16 || image_width % 4 || image_height % 4)
        throw data_error("scene spec: image dims must be >=16 and multiples of 4");
    if (!(focal > 0)) throw data_error("scene spec: focal must be positive");
    if (train_views < 1 || novel_views < 1) throw data_error("scene spec: need train and novel views");
    if (!(orbit_radius > 0.5)) throw data_error("scene spec: degenerate camera orbit");
    if (reference_gaussians < 1) throw data_error("scene spec: reference gaussian count");
}

SceneSpec load_scene_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open scene spec: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw data_error("scene spec parse error: " + std::string(e.what()));
    }
    SceneSpec s;
    s.seed = j.value("seed", s.seed);
    s.id = j.value("id", s.id);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.num_objects = j.value("num_objects", s.num_objects);
    s.image_width = j.value("image_width", s.image_width);
    s.image_height = j.value("image_height", s.image_height);
    s.focal = j.value("focal", s.focal);
    s.train_views = j.value("train_views", s.train_views);
    s.novel_views = j.value("novel_views", s.novel_views);
    s.orbit_radius = j.value("orbit_radius", s.orbit_radius);
    s.view_brightness_jitter = j.value("view_brightness_jitter", s.view_brightness_jitter);
    s.pixel_noise = j.value("pixel_noise", s.pixel_noise);
    s.reference_gaussians = j.value("reference_gaussians", s.reference_gaussians);
    s.validate();
    return s;
}

void save_scene_spec(const std::string& path, const SceneSpec& s) {
    json j;
    j["seed"] = s.seed;
    j["id"] = s.id;
    j["num_classes"] = s.num_classes;
    j["num_objects"] = s.num_objects;
    j["image_width"] = s.image_width;
    j["image_height"] = s.image_height;
    j["focal"] = s.focal;
    j["train_views"] = s.train_views;
    j["novel_views"] = s.novel_views;
    j["orbit_radius"] = s.orbit_radius;
    j["view_brightness_jitter"] = s.view_brightness_jitter;
    j["pixel_noise"] = s.pixel_noise;
    j["reference_gaussians"] = s.reference_gaussians;
    std::ofstream f(path);
    if (!f) throw data_error("cannot write scene spec: " + path);
    f << j.dump(2) << "\n";
}

namespace {

enum class PrimKind { Rect, Box, Ellipsoid };

struct Primitive {
    PrimKind kind;
    int class_id = 0;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d half = Eigen::Vector3d::Ones();  // extents / radii; Rect uses x,z
    Eigen::Vector3d albedo = Eigen::Vector3d(0.5, 0.5, 0.5);
    double checker_scale = 0.2;   // 0 = plain
    double checker_dim = 0.65;    // multiplier of the dark squares
};

struct Hit {
    double t = 0;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
    const Primitive* prim = nullptr;
};

// Fixed per-class base palette so the class/appearance association holds
// across scenes; per-primitive jitter keeps it from being a pure lookup.
Eigen::Vector3d class_palette(int class_id) {
    static const Eigen::Vector3d table[] = {
        {0.52, 0.52, 0.52}, {0.78, 0.22, 0.18}, {0.20, 0.68, 0.26}, {0.18, 0.32, 0.80},
        {0.82, 0.76, 0.18}, {0.74, 0.22, 0.72}, {0.16, 0.70, 0.72}, {0.86, 0.52, 0.16},
        {0.42, 0.26, 0.64}, {0.55, 0.71, 0.35},
    };
    return table[class_id % 10];
}

bool hit_rect(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit* hit) {
    if (std::abs(d.y()) < 1e-12) return false;
    double t = (p.center.y() - o.y()) / d.y();
    if (t <= 1e-6) return false;
    Eigen::Vector3d q = o + t * d;
    if (std::abs(q.x() - p.center.x()) > p.half.x() || std::abs(q.z() - p.center.z()) > p.half.z())
        return false;
    hit->t = t;
    hit->point = q;
    hit->normal = Eigen::Vector3d(0, d.y() > 0 ? -1 : 1, 0);
    hit->prim = &p;
    return true;
}

bool hit_box(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit* hit) {
    double tmin = 1e-6, tmax = 1e30;
    int axis = -1;
    for (int k = 0; k < 3; ++k) {
        double lo = p.center[k] - p.half[k], hi = p.center[k] + p.half[k];
        if (std::abs(d[k]) < 1e-12) {
            if (o[k] < lo || o[k] > hi) return false;
            continue;
        }
        double t0 = (lo - o[k]) / d[k], t1 = (hi - o[k]) / d[k];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis = k;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return false;
    }
    if (axis < 0) return false;  // origin inside the box
    hit->t = tmin;
    hit->point = o + tmin * d;
    hit->normal = Eigen::Vector3d::Zero();
    hit->normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
    hit->prim = &p;
    return true;
}

bool hit_ellipsoid(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit* hit) {
    Eigen::Vector3d oc = (o - p.center).cwiseQuotient(p.half);
    Eigen::Vector3d dc = d.cwiseQuotient(p.half);
    double a = dc.squaredNorm();
    double b = 2.0 * oc.dot(dc);
    double c = oc.squaredNorm() - 1.0;
    double disc = b * b - 4 * a * c;
    if (disc < 0) return false;
    double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= 1e-6) t = (-b + sq) / (2 * a);
    if (t <= 1e-6) return false;
    hit->t = t;
    hit->point = o + t * d;
    hit->normal = (hit->point - p.center).cwiseQuotient(p.half.cwiseProduct(p.half)).normalized();
    hit->prim = &p;
    return true;
}

bool trace(const std::vector<Primitive>& prims, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit* best) {
    bool found = false;
    Hit h;
    for (const auto& p : prims) {
        bool ok = false;
        switch (p.kind) {
            case PrimKind::Rect: ok = hit_rect(p, o, d, &h); break;
            case PrimKind::Box: ok = hit_box(p, o, d, &h); break;
            case PrimKind::Ellipsoid: ok = hit_ellipsoid(p, o, d, &h); break;
        }
        if (ok && (!found || h.t < best->t)) {
            *best = h;
            found = true;
        }
    }
    return found;
}

Eigen::Vector3d textured_albedo(const Primitive& p, const Eigen::Vector3d& q) {
    if (p.checker_scale <= 0) return p.albedo;
    Eigen::Vector3d local = q - p.center;
    int s = static_cast<int>(std::floor(local.x() / p.checker_scale)) +
            static_cast<int>(std::floor(local.y() / p.checker_scale)) +
            static_cast<int>(std::floor(local.z() / p.checker_scale));
    return (s & 1) ? Eigen::Vector3d(p.albedo * p.checker_dim) : p.albedo;
}

std::vector<Primitive> build_primitives(const SceneSpec& spec, Rng& rng) {
    std::vector<Primitive> prims;
    Primitive floor;
    floor.kind = PrimKind::Rect;
    floor.class_id = 0;
    floor.center = Eigen::Vector3d(0, 0.55, 0);
    floor.half = Eigen::Vector3d(1.6, 0, 1.6);
    floor.albedo = class_palette(0);
    floor.checker_scale = 0.4;
    prims.push_back(floor);

    for (int i = 0; i < spec.num_objects; ++i) {
        Primitive p;
        p.kind = i % 2 ? PrimKind::Ellipsoid : PrimKind::Box;
        p.class_id = 1 + i % (spec.num_classes - 1);
        p.center = Eigen::Vector3d(rng.uniform(-0.45, 0.45), rng.uniform(0.05, 0.4), rng.uniform(-0.45, 0.45));
        p.half = Eigen::Vector3d(rng.uniform(0.09, 0.22), rng.uniform(0.09, 0.22), rng.uniform(0.09, 0.22));
        Eigen::Vector3d base = class_palette(p.class_id);
        for (int k = 0; k < 3; ++k)
            p.albedo[k] = std::clamp(base[k] + rng.uniform(-0.08, 0.08), 0.05, 0.95);
        p.checker_scale = i % 3 == 2 ? rng.uniform(0.06, 0.12) : 0.0;
        prims.push_back(p);
    }
    return prims;
}

Pose orbit_pose(const SceneSpec& spec, Rng& rng, int index, int total) {
    double azimuth = 2.0 * M_PI * index / total + rng.uniform(-0.08, 0.08);
    double elevation = rng.uniform(0.35, 0.7);
    Eigen::Vector3d eye(spec.orbit_radius * std::cos(elevation) * std::cos(azimuth),
                        -spec.orbit_radius * std::sin(elevation),
                        spec.orbit_radius * std::cos(elevation) * std::sin(azimuth));
    Eigen::Vector3d target(0, 0.15, 0);
    Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d up(0, -1, 0);
    Eigen::Vector3d x = up.cross(z).normalized();
    Eigen::Vector3d y = z.cross(x);
    Pose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = eye;
    return pose;
}

Camera make_camera(const SceneSpec& spec, const Pose& pose) {
    Camera cam;
    cam.intrinsics.fx = spec.focal;
    cam.intrinsics.fy = spec.focal;
    cam.intrinsics.cx = spec.image_width / 2.0;
    cam.intrinsics.cy = spec.image_height / 2.0;
    cam.intrinsics.width = spec.image_width;
    cam.intrinsics.height = spec.image_height;
    cam.pose = pose;
    return cam;
}

float scene_extent_of(const std::vector<Primitive>& prims) {
    Eigen::Vector3d mn(1e9, 1e9, 1e9), mx(-1e9, -1e9, -1e9);
    for (const auto& p : prims) {
        mn = mn.cwiseMin(p.center - p.half);
        mx = mx.cwiseMax(p.center + p.half);
    }
    return static_cast<float>((mx - mn).norm());
}

View render_view(const SceneSpec& spec, const std::vector<Primitive>& prims, const Camera& cam, Rng& rng) {
    View view;
    view.camera = cam;
    view.image = ImageF(spec.image_height, spec.image_width, 3, 0.f);
    view.depth = ImageF(spec.image_height, spec.image_width, 1, 0.f);
    view.labels = LabelMap(spec.image_height, spec.image_width, 255);
    view.has_labels = true;

    double brightness = 1.0 + spec.view_brightness_jitter * rng.uniform(-1.0, 1.0);
    const Eigen::Vector3d origin = cam.pose.translation;
    for (int y = 0; y < spec.image_height; ++y) {
        for (int x = 0; x < spec.image_width; ++x) {
            Eigen::Vector3d dir_cam((x + 0.5 - cam.intrinsics.cx) / cam.intrinsics.fx,
                                    (y + 0.5 - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
            Eigen::Vector3d dir = (cam.pose.rotation * dir_cam).normalized();
            Hit hit;
            if (!trace(prims, origin, dir, &hit)) continue;
            double z_cam = (cam.pose.rotation.transpose() * (hit.point - origin)).z();
            view.depth.at(y, x, 0) = static_cast<float>(z_cam);
            view.labels.at(y, x) = static_cast<uint8_t>(hit.prim->class_id);
            Eigen::Vector3d albedo = textured_albedo(*hit.prim, hit.point);
            double diffuse = std::max(0.0, hit.normal.dot(-spec.light_dir));
            double shade = 0.45 + 0.55 * diffuse;
            for (int c = 0; c < 3; ++c) {
                double v = albedo[c] * shade * brightness + spec.pixel_noise * rng.normal();
                view.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return view;
}

void sample_surface_point(const Primitive& p, Rng& rng, Eigen::Vector3d* point, Eigen::Vector3d* normal) {
    switch (p.kind) {
        case PrimKind::Rect: {
            *point = p.center + Eigen::Vector3d(rng.uniform(-1, 1) * p.half.x(), 0,
                                                rng.uniform(-1, 1) * p.half.z());
            *normal = Eigen::Vector3d(0, -1, 0);
            return;
        }
        case PrimKind::Box: {
            int face = static_cast<int>(rng.uniform_int(6));
            int axis = face / 2;
            double sign = face % 2 ? 1.0 : -1.0;
            Eigen::Vector3d q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            q[axis] = sign;
            *point = p.center + q.cwiseProduct(p.half);
            *normal = Eigen::Vector3d::Zero();
            (*normal)[axis] = sign;
            return;
        }
        case PrimKind::Ellipsoid: {
            Eigen::Vector3d n(rng.normal(), rng.normal(), rng.normal());
            if (n.norm() < 1e-9) n = Eigen::Vector3d::UnitY();
            n.normalize();
            *point = p.center + n.cwiseProduct(p.half);
            *normal = n.cwiseQuotient(p.half.cwiseProduct(p.half)).normalized();
            return;
        }
    }
}

}  // namespace

GeneratedScene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed, 0x5ce5e);
    GeneratedScene out;

    auto prims = build_primitives(spec, rng);
    float extent = scene_extent_of(prims);

    int total = spec.train_views + spec.novel_views;
    std::vector<Camera> cameras;
    for (int i = 0; i < total; ++i) cameras.push_back(make_camera(spec, orbit_pose(spec, rng, i, total)));

    out.views.scene_id = spec.id;
    out.views.num_classes = spec.num_classes;
    out.views.scene_extent = extent;
    // novel views interleaved across the orbit
    int stride = std::max(1, total / spec.novel_views);
    std::vector<bool> is_novel(total, false);
    int assigned = 0;
    for (int i = stride - 1; i < total && assigned < spec.novel_views; i += stride, ++assigned)
        is_novel[i] = true;
    for (int i = 0; i < total; ++i) {
        Rng view_rng = rng.fork(1000 + i);
        out.views.views.push_back(render_view(spec, prims, cameras[i], view_rng));
        if (is_novel[i])
            out.views.novel_ids.push_back(i);
        else
            out.views.train_ids.push_back(i);
    }

    // Reference fields: Gaussians seeded on primitive surfaces. Color payload
    // is the local albedo; semantic payload a scaled one-hot of the class.
    int n = spec.reference_gaussians;
    out.reference_color = make_field(FieldKind::Color, 3, extent, n);
    out.reference_semantic = make_field(FieldKind::Semantic, spec.num_classes, extent, n);
    Rng ref_rng = rng.fork(77);
    for (int i = 0; i < n; ++i) {
        const Primitive& p = prims[ref_rng.uniform_int(static_cast<uint32_t>(prims.size()))];
        Eigen::Vector3d point, normal;
        sample_surface_point(p, ref_rng, &point, &normal);
        for (int k = 0; k < 3; ++k) {
            out.reference_color.centers[3 * i + k] = static_cast<float>(point[k]);
            out.reference_semantic.centers[3 * i + k] = static_cast<float>(point[k]);
        }
        Eigen::Vector4d q(ref_rng.normal(), ref_rng.normal(), ref_rng.normal(), ref_rng.normal());
        q.normalize();
        for (int k = 0; k < 4; ++k) {
            out.reference_color.quaternions[4 * i + k] = static_cast<float>(q[k]);
            out.reference_semantic.quaternions[4 * i + k] = static_cast<float>(q[k]);
        }
        double base = p.kind == PrimKind::Rect ? 0.12 : 0.05;
        for (int k = 0; k < 3; ++k) {
            float ls = static_cast<float>(std::log(base * ref_rng.uniform(0.6, 1.4)));
            out.reference_color.log_scales[3 * i + k] = ls;
            out.reference_semantic.log_scales[3 * i + k] = ls;
        }
        float op = static_cast<float>(ref_rng.uniform(1.5, 3.5));
        out.reference_color.opacity_logits[i] = op;
        out.reference_semantic.opacity_logits[i] = op;
        Eigen::Vector3d albedo = textured_albedo(p, point);
        for (int k = 0; k < 3; ++k)
            out.reference_color.payloads[3 * i + k] = static_cast<float>(albedo[k]);
        for (int c = 0; c < spec.num_classes; ++c)
            out.reference_semantic.payloads[static_cast<size_t>(i) * spec.num_classes + c] =
                c == p.class_id ? 6.f : 0.f;
    }
    return out;
}

std::optional<double> trace_depth(const SceneSpec& spec, const Camera& camera, double u, double v) {
    Rng rng(spec.seed, 0x5ce5e);
    auto prims = build_primitives(spec, rng);
    Eigen::Vector3d dir_cam((u - camera.intrinsics.cx) / camera.intrinsics.fx,
                            (v - camera.intrinsics.cy) / camera.intrinsics.fy, 1.0);
    Eigen::Vector3d dir = (camera.pose.rotation * dir_cam).normalized();
    Hit hit;
    if (!trace(prims, camera.pose.translation, dir, &hit)) return std::nullopt;
    return (camera.pose.rotation.transpose() * (hit.point - camera.pose.translation)).z();
}

ViewSet render_field_views(const GaussianField& color, const GaussianField& semantic,
                           const std::vector<Camera>& cameras, const std::vector<int>& train_ids,
                           const std::vector<int>& novel_ids, int num_classes, const std::string& scene_id) {
    ViewSet out;
    out.scene_id = scene_id;
    out.num_classes = num_classes;
    out.scene_extent = color.scene_extent;
    RasterConfig cfg;
    for (const auto& cam : cameras) {
        View v;
        v.camera = cam;
        auto rc = rasterize(color, cam, cfg);
        auto rs = rasterize(semantic, cam, cfg);
        v.image = render_channels_image(rc);
        v.labels = render_argmax_labels(rs);
        v.has_labels = true;
        v.depth = ImageF(rc.height, rc.width, 1, 0.f);
        for (int i = 0; i < rc.height * rc.width; ++i) {
            if (rc.alpha[i] > 0.5f) {
                v.depth.data[i] = rc.depth[i];
            } else {
                v.labels.data[i] = 255;  // background: no geometry, no label
            }
        }
        out.views.push_back(std::move(v));
    }
    out.train_ids = train_ids;
    out.novel_ids = novel_ids;
    return out;
}

}  // namespace gssplat
