#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gssplat/geometry.hpp"
#include "test_util.hpp"

using namespace gssplat;
using gstest::random_pose;
using gstest::simple_camera;

TEST_SUITE_BEGIN("geometry");

TEST_CASE("project: point on the optical axis lands on the principal point") {
    Camera cam = simple_camera(64, 48, 50.0);
    cam.intrinsics.cx = 31.25;
    cam.intrinsics.cy = 20.5;
    for (double d : {0.5, 1.0, 7.5}) {
        auto p = project_point(cam, Eigen::Vector3d(0, 0, d));
        REQUIRE(p.has_value());
        CHECK(p->u == doctest::Approx(31.25).epsilon(1e-12));
        CHECK(p->v == doctest::Approx(20.5).epsilon(1e-12));
        CHECK(p->depth == doctest::Approx(d));
    }
}

TEST_CASE("project: hand pinhole computation") {
    Camera cam;
    cam.intrinsics.fx = 100;
    cam.intrinsics.fy = 100;
    cam.intrinsics.cx = 160;
    cam.intrinsics.cy = 120;
    cam.intrinsics.width = 320;
    cam.intrinsics.height = 240;
    auto p = project_point(cam, Eigen::Vector3d(2, 0, 2));
    REQUIRE(p.has_value());
    CHECK(p->u == doctest::Approx(260.0).epsilon(1e-12));
    CHECK(p->depth == doctest::Approx(2.0));
}

TEST_CASE("project: behind-camera flag") {
    Camera cam = simple_camera();
    CHECK_FALSE(project_point(cam, Eigen::Vector3d(0, 0, -1)).has_value());
    CHECK_FALSE(project_point(cam, Eigen::Vector3d(0.3, 0.1, 0)).has_value());
}

TEST_CASE("round trip: project(unproject(p)) = p within 1e-6") {
    Rng rng(17);
    for (int it = 0; it < 200; ++it) {
        Camera cam = simple_camera(80, 60, rng.uniform(30, 120));
        cam.pose = random_pose(rng);
        double u = rng.uniform(0, 80), v = rng.uniform(0, 60), d = rng.uniform(0.05, 20.0);
        Eigen::Vector3d w = unproject_pixel(cam, u, v, d);
        auto p = project_point(cam, w);
        REQUIRE(p.has_value());
        CHECK(std::abs(p->u - u) < 1e-6);
        CHECK(std::abs(p->v - v) < 1e-6);
        CHECK(std::abs(p->depth - d) < 1e-6);
    }
}

TEST_CASE("unproject_depth: principal-point pixel with identity pose") {
    Camera cam = simple_camera(8, 8, 10.0);
    ImageF depth(8, 8, 1, 0.f);
    // pixel whose center is the principal point (cx=cy=4 -> pixel (3.5+0.5))
    depth.at(3, 3, 0) = 2.5f;
    cam.intrinsics.cx = 3.5;
    cam.intrinsics.cy = 3.5;
    auto pts = unproject_depth(cam, depth);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pts[0].y() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pts[0].z() == doctest::Approx(2.5));
}

TEST_CASE("unproject_depth: count equals strictly positive entries") {
    Rng rng(5);
    Camera cam = simple_camera(16, 12, 20.0);
    cam.pose = random_pose(rng);
    ImageF depth(12, 16, 1, 0.f);
    int expected = 0;
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 16; ++x) {
            double r = rng.uniform();
            if (r < 0.4) {
                depth.at(y, x, 0) = static_cast<float>(rng.uniform(0.1, 5.0));
                ++expected;
            } else if (r < 0.5) {
                depth.at(y, x, 0) = -1.f;  // invalid, not counted
            }
        }
    std::vector<int32_t> pix;
    auto pts = unproject_depth(cam, depth, &pix);
    CHECK(static_cast<int>(pts.size()) == expected);
    CHECK(pix.size() == pts.size());
}

TEST_CASE("unproject_depth: empty result on all-invalid map") {
    Camera cam = simple_camera(4, 4, 5.0);
    ImageF depth(4, 4, 1, 0.f);
    CHECK(unproject_depth(cam, depth).empty());
}

TEST_CASE("unproject_depth: 2x2 constant-depth frustum slice re-projects") {
    Camera cam;
    cam.intrinsics.fx = 1;
    cam.intrinsics.fy = 1;
    cam.intrinsics.cx = 1;
    cam.intrinsics.cy = 1;
    cam.intrinsics.width = 2;
    cam.intrinsics.height = 2;
    Rng rng(99);
    cam.pose = random_pose(rng);
    ImageF depth(2, 2, 1, 3.f);
    std::vector<int32_t> pix;
    auto pts = unproject_depth(cam, depth, &pix);
    REQUIRE(pts.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        auto p = project_point(cam, pts[i]);
        REQUIRE(p.has_value());
        int px = pix[i] % 2, py = pix[i] / 2;
        CHECK(std::abs(p->u - (px + 0.5)) < 1e-6);
        CHECK(std::abs(p->v - (py + 0.5)) < 1e-6);
        CHECK(std::abs(p->depth - 3.0) < 1e-6);
    }
}

TEST_CASE("pose: group laws") {
    CHECK(invert(Pose{}).rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-12));
    CHECK(invert(Pose{}).translation.norm() < 1e-12);

    Rng rng(3);
    for (int it = 0; it < 50; ++it) {
        Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        Pose id = compose(a, invert(a));
        CHECK((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-9);

        Pose left = compose(compose(a, b), c);
        Pose right = compose(a, compose(b, c));
        CHECK((left.rotation - right.rotation).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((left.translation - right.translation).cwiseAbs().maxCoeff() < 1e-9);

        // orthonormality preserved
        Pose ab = compose(a, b);
        CHECK((ab.rotation * ab.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <
              1e-9);
    }
}

TEST_CASE("cameras.json: round trip and missing-field rejection") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "gssplat_geom_test";
    fs::create_directories(dir);
    std::string path = (dir / "cameras.json").string();

    Rng rng(8);
    std::vector<Camera> cams;
    for (int i = 0; i < 3; ++i) {
        Camera c = simple_camera(32 + i, 24, 22.0 + i);
        c.pose = random_pose(rng);
        cams.push_back(c);
    }
    save_cameras_json(path, cams);
    auto loaded = load_cameras_json(path);
    REQUIRE(loaded.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].intrinsics.fx == doctest::Approx(cams[i].intrinsics.fx));
        CHECK(loaded[i].pose.rotation.isApprox(cams[i].pose.rotation, 1e-12));
        CHECK(loaded[i].pose.translation.isApprox(cams[i].pose.translation, 1e-12));
    }

    std::string bad = (dir / "bad.json").string();
    {
        std::ofstream f(bad);
        f << R"({"views":[{"fx":10,"fy":10,"cx":5,"cy":5,"width":10}]})";
    }
    CHECK_THROWS_AS(load_cameras_json(bad), GsError);
}

TEST_SUITE_END();
