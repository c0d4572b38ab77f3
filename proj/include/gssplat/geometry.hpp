#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gssplat/image.hpp"

namespace gssplat {

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    // Throws data_error when fx/fy are non-positive or the principal point
    // falls outside the image.
    void validate() const;
};

// Rigid transform stored world-from-camera: world = R * cam + t.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    void validate() const;  // orthonormality and det within 1e-6

    Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation * cam + translation; }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation.transpose() * (world - translation);
    }
};

Pose compose(const Pose& a, const Pose& b);  // world point: a applied after b
Pose invert(const Pose& p);

struct Camera {
    CameraIntrinsics intrinsics;
    Pose pose;
};

// Continuous pixel coordinates with planar camera-frame depth (z, meters).
// Integer pixel (i, j) samples at (j + 0.5, i + 0.5).
struct PixelCoord {
    double u = 0, v = 0;
    double depth = 0;
};

// nullopt = point at or behind the camera (Zc <= 1e-8); exclusion is the
// caller's decision.
std::optional<PixelCoord> project_point(const Camera& camera, const Eigen::Vector3d& world);

Eigen::Vector3d unproject_pixel(const Camera& camera, double u, double v, double depth);

// One world-frame point per strictly positive depth sample, row-major order.
// pixel_index receives the flat row-major pixel of each point when non-null.
std::vector<Eigen::Vector3d> unproject_depth(const Camera& camera, const ImageF& depth,
                                             std::vector<int32_t>* pixel_index = nullptr);

// cameras.json: {"views":[{fx,fy,cx,cy,width,height,world_from_camera[16]}]}.
// Parsers reject documents with missing fields.
std::vector<Camera> load_cameras_json(const std::string& path);
void save_cameras_json(const std::string& path, const std::vector<Camera>& cameras);

}  // namespace gssplat
