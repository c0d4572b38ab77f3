#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gssplat {

enum class FieldKind : uint8_t { Color = 0, Semantic = 1 };

// Structure-of-arrays set of 3D Gaussians. Payload is RGB in [0,1] for color
// fields (C=3) and raw class logits for semantic fields (C=class count).
// Quaternions are stored (w,x,y,z), scales in log-meters, opacity as a logit.
struct GaussianField {
    FieldKind kind = FieldKind::Color;
    int channels = 3;
    float scene_extent = 1.f;

    std::vector<float> centers;         // N*3
    std::vector<float> quaternions;     // N*4
    std::vector<float> log_scales;      // N*3
    std::vector<float> opacity_logits;  // N
    std::vector<float> payloads;        // N*channels

    int size() const { return static_cast<int>(opacity_logits.size()); }
    void resize(int n);
    // Throws data_error on inconsistent array lengths or channel/kind mismatch.
    void validate() const;

    float min_scale() const { return 1e-6f * scene_extent; }
};

GaussianField make_field(FieldKind kind, int channels, float scene_extent, int n = 0);

// Sigma = R * S * S^T * R^T with S = diag(exp(log_scale)). The quaternion is
// normalized defensively; scales are clamped to keep Sigma invertible.
Eigen::Matrix3d build_covariance(const Eigen::Vector4d& quat_wxyz, const Eigen::Vector3d& log_scale,
                                 double scale_floor = 1e-9, double scale_ceil = 1e9);

Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& quat_wxyz);

// G(x) = exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)); equals 1 at x = mu.
double evaluate_density(const Eigen::Vector3d& center, const Eigen::Vector4d& quat_wxyz,
                        const Eigen::Vector3d& log_scale, const Eigen::Vector3d& x);

// Versioned little-endian binary: magic "GSPL", u32 version, u32 N, u32 C,
// u8 kind, f32 scene_extent, then f32 arrays (centers, quaternions,
// log_scales, opacity_logits, payloads).
void serialize_field(const GaussianField& field, std::ostream& out);
GaussianField deserialize_field(std::istream& in);

void save_field(const std::string& path, const GaussianField& field);
GaussianField load_field(const std::string& path);

}  // namespace gssplat
