#include "gssplat/field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gssplat/core.hpp"

namespace gssplat {

void GaussianField::resize(int n) {
    centers.assign(static_cast<size_t>(n) * 3, 0.f);
    quaternions.assign(static_cast<size_t>(n) * 4, 0.f);
    for (int i = 0; i < n; ++i) quaternions[static_cast<size_t>(i) * 4] = 1.f;  // identity
    log_scales.assign(static_cast<size_t>(n) * 3, 0.f);
    opacity_logits.assign(n, 0.f);
    payloads.assign(static_cast<size_t>(n) * channels, 0.f);
}

void GaussianField::validate() const {
    size_t n = opacity_logits.size();
    if (centers.size() != n * 3 || quaternions.size() != n * 4 || log_scales.size() != n * 3 ||
        payloads.size() != n * channels)
        throw data_error("gaussian field: inconsistent array lengths");
    if (kind == FieldKind::Color && channels != 3) throw data_error("color field requires 3 channels");
    if (channels <= 0) throw data_error("field channel count must be positive");
    if (!(scene_extent > 0.f)) throw data_error("scene extent must be positive");
}

GaussianField make_field(FieldKind kind, int channels, float scene_extent, int n) {
    GaussianField f;
    f.kind = kind;
    f.channels = channels;
    f.scene_extent = scene_extent;
    f.resize(n);
    f.validate();
    return f;
}

Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q) {
    double n = q.norm();
    Eigen::Vector4d u = n > 1e-12 ? Eigen::Vector4d(q / n) : Eigen::Vector4d(1, 0, 0, 0);
    double w = u[0], x = u[1], y = u[2], z = u[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),  //
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),   //
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& quat_wxyz, const Eigen::Vector3d& log_scale,
                                 double scale_floor, double scale_ceil) {
    Eigen::Matrix3d r = quat_to_rotation(quat_wxyz);
    Eigen::Vector3d s;
    for (int i = 0; i < 3; ++i) s[i] = std::clamp(std::exp(log_scale[i]), scale_floor, scale_ceil);
    Eigen::Matrix3d m = r * s.asDiagonal();
    return m * m.transpose();
}

double evaluate_density(const Eigen::Vector3d& center, const Eigen::Vector4d& quat_wxyz,
                        const Eigen::Vector3d& log_scale, const Eigen::Vector3d& x) {
    Eigen::Matrix3d sigma = build_covariance(quat_wxyz, log_scale);
    Eigen::Vector3d d = x - center;
    Eigen::Vector3d sol = sigma.ldlt().solve(d);
    return std::exp(-0.5 * d.dot(sol));
}

namespace {

constexpr char kMagic[4] = {'G', 'S', 'P', 'L'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw data_error(std::string("field stream truncated reading ") + what);
    return v;
}

void put_array(std::ostream& out, const std::vector<float>& a) {
    out.write(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(float));
}

void get_array(std::istream& in, std::vector<float>& a, size_t n, const char* what) {
    a.resize(n);
    in.read(reinterpret_cast<char*>(a.data()), n * sizeof(float));
    if (!in) throw data_error(std::string("field stream truncated reading ") + what);
}

}  // namespace

void serialize_field(const GaussianField& field, std::ostream& out) {
    field.validate();
    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(field.size()));
    put<uint32_t>(out, static_cast<uint32_t>(field.channels));
    put<uint8_t>(out, static_cast<uint8_t>(field.kind));
    put<float>(out, field.scene_extent);
    put_array(out, field.centers);
    put_array(out, field.quaternions);
    put_array(out, field.log_scales);
    put_array(out, field.opacity_logits);
    put_array(out, field.payloads);
    if (!out) throw data_error("field stream write failed");
}

GaussianField deserialize_field(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw data_error("bad field magic (not a GSPL file)");
    uint32_t version = get<uint32_t>(in, "version");
    if (version != kVersion)
        throw data_error("unsupported field version " + std::to_string(version) + ", expected " +
                         std::to_string(kVersion));
    uint32_t n = get<uint32_t>(in, "count");
    uint32_t c = get<uint32_t>(in, "channels");
    if (c == 0 || c > 4096) throw data_error("field channel count out of range");
    uint8_t kind = get<uint8_t>(in, "kind");
    if (kind > 1) throw data_error("unknown field kind byte");
    GaussianField f;
    f.kind = static_cast<FieldKind>(kind);
    f.channels = static_cast<int>(c);
    f.scene_extent = get<float>(in, "scene_extent");
    get_array(in, f.centers, static_cast<size_t>(n) * 3, "centers");
    get_array(in, f.quaternions, static_cast<size_t>(n) * 4, "quaternions");
    get_array(in, f.log_scales, static_cast<size_t>(n) * 3, "log_scales");
    get_array(in, f.opacity_logits, n, "opacity_logits");
    get_array(in, f.payloads, static_cast<size_t>(n) * c, "payloads");
    f.validate();
    return f;
}

void save_field(const std::string& path, const GaussianField& field) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for writing: " + path);
    serialize_field(field, f);
}

GaussianField load_field(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for reading: " + path);
    return deserialize_field(f);
}

}  // namespace gssplat
