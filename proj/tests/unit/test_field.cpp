#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <sstream>

#include "gssplat/field.hpp"
#include "test_util.hpp"

using namespace gssplat;

TEST_SUITE_BEGIN("field");

TEST_CASE("build_covariance: identity rotation gives diag of squared scales") {
    Eigen::Vector4d q(1, 0, 0, 0);
    Eigen::Vector3d ls(std::log(1.0), std::log(2.0), std::log(3.0));
    Eigen::Matrix3d s = build_covariance(q, ls);
    Eigen::Matrix3d expect = Eigen::Vector3d(1, 4, 9).asDiagonal();
    CHECK((s - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_covariance: 90 degree rotation about z swaps x/y variances") {
    // quaternion for 90deg about z: (cos45, 0, 0, sin45)
    double h = std::sqrt(0.5);
    Eigen::Vector4d q(h, 0, 0, h);
    double a = 0.7, b = 1.9, c = 0.25;
    Eigen::Vector3d ls(std::log(a), std::log(b), std::log(c));
    Eigen::Matrix3d s = build_covariance(q, ls);
    Eigen::Matrix3d expect = Eigen::Vector3d(b * b, a * a, c * c).asDiagonal();
    CHECK((s - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("build_covariance: symmetric PSD for random inputs") {
    Rng rng(42);
    for (int it = 0; it < 200; ++it) {
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        Eigen::Vector3d ls(rng.uniform(-4, 2), rng.uniform(-4, 2), rng.uniform(-4, 2));
        Eigen::Matrix3d s = build_covariance(q, ls);
        CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-9);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
        CHECK(es.eigenvalues().minCoeff() > -1e-9);
    }
}

TEST_CASE("evaluate_density: 1 at the mean, hand value at unit offset, monotone") {
    Eigen::Vector3d mu(0.3, -0.2, 1.0);
    Eigen::Vector4d q(1, 0, 0, 0);
    Eigen::Vector3d ls = Eigen::Vector3d::Zero();  // isotropic unit scale

    CHECK(evaluate_density(mu, q, ls, mu) == doctest::Approx(1.0).epsilon(1e-12));

    Eigen::Vector3d x = mu + Eigen::Vector3d(1, 0, 0);
    CHECK(evaluate_density(mu, q, ls, x) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));

    Rng rng(7);
    for (int it = 0; it < 20; ++it) {
        Eigen::Vector4d qq(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        Eigen::Vector3d lls(rng.uniform(-2, 1), rng.uniform(-2, 1), rng.uniform(-2, 1));
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        double prev = evaluate_density(mu, qq, lls, mu);
        CHECK(prev <= 1.0 + 1e-12);
        for (double r = 0.2; r < 3.0; r += 0.2) {
            double v = evaluate_density(mu, qq, lls, mu + r * dir);
            CHECK(v < prev + 1e-15);
            CHECK(v > 0.0);
            prev = v;
        }
    }
}

namespace {

GaussianField random_field(Rng& rng, int n, FieldKind kind, int channels) {
    GaussianField f = make_field(kind, channels, 2.5f, n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) f.centers[3 * i + k] = static_cast<float>(rng.uniform(-1, 1));
        for (int k = 0; k < 4; ++k) f.quaternions[4 * i + k] = static_cast<float>(rng.normal());
        float norm = 0;
        for (int k = 0; k < 4; ++k) norm += f.quaternions[4 * i + k] * f.quaternions[4 * i + k];
        norm = std::sqrt(norm);
        for (int k = 0; k < 4; ++k) f.quaternions[4 * i + k] /= norm;
        for (int k = 0; k < 3; ++k) f.log_scales[3 * i + k] = static_cast<float>(rng.uniform(-4, -1));
        f.opacity_logits[i] = static_cast<float>(rng.uniform(-3, 3));
        for (int k = 0; k < channels; ++k)
            f.payloads[static_cast<size_t>(i) * channels + k] = static_cast<float>(rng.uniform(0, 1));
    }
    return f;
}

}  // namespace

TEST_CASE("serialize: empty field round trip") {
    GaussianField f = make_field(FieldKind::Semantic, 6, 1.5f, 0);
    std::stringstream ss;
    serialize_field(f, ss);
    GaussianField g = deserialize_field(ss);
    CHECK(g.size() == 0);
    CHECK(g.channels == 6);
    CHECK(g.kind == FieldKind::Semantic);
    CHECK(g.scene_extent == doctest::Approx(1.5f));
}

TEST_CASE("serialize: random fields round trip bitwise") {
    Rng rng(11);
    for (int it = 0; it < 5; ++it) {
        int n = 1 + static_cast<int>(rng.uniform_int(1000));
        FieldKind kind = it % 2 ? FieldKind::Semantic : FieldKind::Color;
        int channels = kind == FieldKind::Color ? 3 : 2 + static_cast<int>(rng.uniform_int(7));
        GaussianField f = random_field(rng, n, kind, channels);
        std::stringstream ss;
        serialize_field(f, ss);
        GaussianField g = deserialize_field(ss);
        CHECK(g.centers == f.centers);
        CHECK(g.quaternions == f.quaternions);
        CHECK(g.log_scales == f.log_scales);
        CHECK(g.opacity_logits == f.opacity_logits);
        CHECK(g.payloads == f.payloads);
        CHECK(g.kind == f.kind);
        CHECK(g.channels == f.channels);
    }
}

TEST_CASE("serialize: bad magic, bad version, truncation all rejected") {
    Rng rng(12);
    GaussianField f = random_field(rng, 10, FieldKind::Color, 3);
    std::stringstream ss;
    serialize_field(f, ss);
    std::string bytes = ss.str();

    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::stringstream in(bad);
        CHECK_THROWS_WITH_AS(deserialize_field(in), doctest::Contains("magic"), GsError);
    }
    {
        std::string bad = bytes;
        bad[4] = static_cast<char>(bad[4] + 1);  // flip version byte
        std::stringstream in(bad);
        CHECK_THROWS_WITH_AS(deserialize_field(in), doctest::Contains("version"), GsError);
    }
    {
        std::string bad = bytes.substr(0, bytes.size() - 7);
        std::stringstream in(bad);
        CHECK_THROWS_WITH_AS(deserialize_field(in), doctest::Contains("truncated"), GsError);
    }
}

TEST_SUITE_END();
