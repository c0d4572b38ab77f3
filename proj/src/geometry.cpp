#include "gssplat/geometry.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "gssplat/core.hpp"

namespace gssplat {

using json = nlohmann::json;

void CameraIntrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw data_error("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw data_error("intrinsics: image size must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
        throw data_error("intrinsics: principal point outside image");
}

void Pose::validate() const {
    Eigen::Matrix3d g = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
    if (g.cwiseAbs().maxCoeff() > 1e-6) throw data_error("pose: rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6) throw data_error("pose: rotation determinant != +1");
}

Pose compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

Pose invert(const Pose& p) {
    Pose out;
    out.rotation = p.rotation.transpose();
    out.translation = -(p.rotation.transpose() * p.translation);
    return out;
}

std::optional<PixelCoord> project_point(const Camera& camera, const Eigen::Vector3d& world) {
    Eigen::Vector3d c = camera.pose.to_camera(world);
    if (c.z() <= 1e-8) return std::nullopt;
    PixelCoord p;
    p.u = camera.intrinsics.fx * c.x() / c.z() + camera.intrinsics.cx;
    p.v = camera.intrinsics.fy * c.y() / c.z() + camera.intrinsics.cy;
    p.depth = c.z();
    return p;
}

Eigen::Vector3d unproject_pixel(const Camera& camera, double u, double v, double depth) {
    Eigen::Vector3d c((u - camera.intrinsics.cx) / camera.intrinsics.fx * depth,
                      (v - camera.intrinsics.cy) / camera.intrinsics.fy * depth, depth);
    return camera.pose.to_world(c);
}

std::vector<Eigen::Vector3d> unproject_depth(const Camera& camera, const ImageF& depth,
                                             std::vector<int32_t>* pixel_index) {
    if (depth.channels != 1) throw data_error("depth map must be single channel");
    if (depth.width != camera.intrinsics.width || depth.height != camera.intrinsics.height)
        throw data_error("depth map resolution does not match camera");
    std::vector<Eigen::Vector3d> points;
    points.reserve(static_cast<size_t>(depth.width) * depth.height);
    if (pixel_index) pixel_index->clear();
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            float d = depth.at(y, x, 0);
            if (!(d > 0.f)) continue;
            points.push_back(unproject_pixel(camera, x + 0.5, y + 0.5, d));
            if (pixel_index) pixel_index->push_back(y * depth.width + x);
        }
    }
    return points;
}

namespace {

double require_number(const json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_number())
        throw data_error("cameras.json: missing numeric field '" + std::string(field) + "' in " + ctx);
    return j[field].get<double>();
}

}  // namespace

std::vector<Camera> load_cameras_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open " + path);
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw data_error("cameras.json parse error: " + std::string(e.what()));
    }
    if (!doc.contains("views") || !doc["views"].is_array())
        throw data_error("cameras.json: missing 'views' array");
    std::vector<Camera> cameras;
    int idx = 0;
    for (const auto& v : doc["views"]) {
        std::string ctx = "view " + std::to_string(idx++);
        Camera cam;
        cam.intrinsics.fx = require_number(v, "fx", ctx);
        cam.intrinsics.fy = require_number(v, "fy", ctx);
        cam.intrinsics.cx = require_number(v, "cx", ctx);
        cam.intrinsics.cy = require_number(v, "cy", ctx);
        cam.intrinsics.width = static_cast<int>(require_number(v, "width", ctx));
        cam.intrinsics.height = static_cast<int>(require_number(v, "height", ctx));
        if (!v.contains("world_from_camera") || !v["world_from_camera"].is_array() ||
            v["world_from_camera"].size() != 16)
            throw data_error("cameras.json: missing 4x4 'world_from_camera' in " + ctx);
        Eigen::Matrix4d m;
        for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = v["world_from_camera"][i].get<double>();
        cam.pose.rotation = m.block<3, 3>(0, 0);
        cam.pose.translation = m.block<3, 1>(0, 3);
        cam.intrinsics.validate();
        cam.pose.validate();
        cameras.push_back(cam);
    }
    return cameras;
}

void save_cameras_json(const std::string& path, const std::vector<Camera>& cameras) {
    json doc;
    doc["views"] = json::array();
    for (const auto& cam : cameras) {
        json v;
        v["fx"] = cam.intrinsics.fx;
        v["fy"] = cam.intrinsics.fy;
        v["cx"] = cam.intrinsics.cx;
        v["cy"] = cam.intrinsics.cy;
        v["width"] = cam.intrinsics.width;
        v["height"] = cam.intrinsics.height;
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.block<3, 3>(0, 0) = cam.pose.rotation;
        m.block<3, 1>(0, 3) = cam.pose.translation;
        std::vector<double> flat(16);
        for (int i = 0; i < 16; ++i) flat[i] = m(i / 4, i % 4);
        v["world_from_camera"] = flat;
        doc["views"].push_back(v);
    }
    std::ofstream f(path);
    if (!f) throw data_error("cannot open for writing: " + path);
    f << doc.dump(2) << "\n";
}

}  // namespace gssplat
