#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gssplat/core.hpp"
#include "gssplat/geometry.hpp"

namespace gstest {

inline Eigen::Matrix3d random_rotation(gssplat::Rng& rng) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitZ();
    axis.normalize();
    double angle = rng.uniform(-3.0, 3.0);
    return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

inline gssplat::Pose random_pose(gssplat::Rng& rng, double tmax = 2.0) {
    gssplat::Pose p;
    p.rotation = random_rotation(rng);
    p.translation = Eigen::Vector3d(rng.uniform(-tmax, tmax), rng.uniform(-tmax, tmax), rng.uniform(-tmax, tmax));
    return p;
}

inline gssplat::Camera simple_camera(int width = 64, int height = 64, double f = 60.0) {
    gssplat::Camera cam;
    cam.intrinsics.fx = f;
    cam.intrinsics.fy = f;
    cam.intrinsics.cx = width / 2.0;
    cam.intrinsics.cy = height / 2.0;
    cam.intrinsics.width = width;
    cam.intrinsics.height = height;
    return cam;
}

// Camera on a sphere of the given radius looking at a target point.
inline gssplat::Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             const Eigen::Vector3d& up = Eigen::Vector3d(0, -1, 0)) {
    Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = up.cross(z).normalized();
    Eigen::Vector3d y = z.cross(x);
    gssplat::Pose p;
    p.rotation.col(0) = x;
    p.rotation.col(1) = y;
    p.rotation.col(2) = z;
    p.translation = eye;
    return p;
}

inline double rel_err(double a, double b, double floor_v = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_v});
}

}  // namespace gstest
