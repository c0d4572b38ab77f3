#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "gssplat/raster.hpp"
#include "test_util.hpp"

using namespace gssplat;
using gstest::simple_camera;

TEST_SUITE_BEGIN("raster");

namespace {

// Double-precision copy of a field driving the templated raster core; the
// finite-difference oracle needs a scalar type where the step dominates
// rounding.
struct DField {
    std::vector<double> centers, quaternions, log_scales, opacity_logits, payloads;
    int channels = 3;

    static DField from(const GaussianField& f) {
        DField d;
        d.channels = f.channels;
        d.centers.assign(f.centers.begin(), f.centers.end());
        d.quaternions.assign(f.quaternions.begin(), f.quaternions.end());
        d.log_scales.assign(f.log_scales.begin(), f.log_scales.end());
        d.opacity_logits.assign(f.opacity_logits.begin(), f.opacity_logits.end());
        d.payloads.assign(f.payloads.begin(), f.payloads.end());
        return d;
    }

    detail::FieldViewT<double> view() const {
        detail::FieldViewT<double> v;
        v.centers = centers.data();
        v.quaternions = quaternions.data();
        v.log_scales = log_scales.data();
        v.opacity_logits = opacity_logits.data();
        v.payloads = payloads.data();
        v.n = static_cast<int>(opacity_logits.size());
        v.channels = channels;
        return v;
    }
};

GaussianField random_scene_field(Rng& rng, int n, int channels = 3) {
    GaussianField f = make_field(channels == 3 ? FieldKind::Color : FieldKind::Semantic, channels, 3.f, n);
    for (int i = 0; i < n; ++i) {
        double z = rng.uniform(0.8, 2.5);
        f.centers[3 * i] = static_cast<float>(rng.uniform(-0.4, 0.4) * z);
        f.centers[3 * i + 1] = static_cast<float>(rng.uniform(-0.4, 0.4) * z);
        f.centers[3 * i + 2] = static_cast<float>(z);
        double qn = 0;
        for (int k = 0; k < 4; ++k) {
            f.quaternions[4 * i + k] = static_cast<float>(rng.normal());
            qn += f.quaternions[4 * i + k] * f.quaternions[4 * i + k];
        }
        qn = std::sqrt(qn);
        for (int k = 0; k < 4; ++k) f.quaternions[4 * i + k] = static_cast<float>(f.quaternions[4 * i + k] / qn);
        for (int k = 0; k < 3; ++k) f.log_scales[3 * i + k] = static_cast<float>(rng.uniform(-3.2, -2.0));
        f.opacity_logits[i] = static_cast<float>(rng.uniform(-1.5, 1.5));
        for (int k = 0; k < channels; ++k)
            f.payloads[static_cast<size_t>(i) * channels + k] = static_cast<float>(rng.uniform(0.05, 0.95));
    }
    return f;
}

RasterConfig exact_config(int channels) {
    RasterConfig cfg;
    cfg.tile_size = 16;
    cfg.near_plane = 0.01f;
    cfg.transmittance_cutoff = 1e-7f;
    cfg.radius_cutoff_sigma = 6.f;
    cfg.min_splat_alpha = 0.f;
    cfg.background.assign(channels, 0.f);
    for (int c = 0; c < channels; ++c) cfg.background[c] = 0.1f + 0.07f * c;
    return cfg;
}

// Weighted scalar readout of a render; the FD oracle differentiates this.
double readout(const detail::RenderOutputT<double>& out, const std::vector<double>& wc,
               const std::vector<double>& wa, const std::vector<double>& wd) {
    double loss = 0;
    for (size_t i = 0; i < out.channels_data.size(); ++i) loss += out.channels_data[i] * wc[i];
    for (size_t i = 0; i < out.alpha.size(); ++i) loss += out.alpha[i] * wa[i] + out.depth[i] * wd[i];
    return loss;
}

}  // namespace

TEST_CASE("project_gaussian: on-axis isotropic covariance matches the hand Jacobian") {
    double f = 50.0, d = 2.0, sigma = 0.05;
    Camera cam = simple_camera(64, 64, f);
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 1);
    field.centers[2] = static_cast<float>(d);
    for (int k = 0; k < 3; ++k) field.log_scales[k] = static_cast<float>(std::log(sigma));
    RasterConfig cfg;
    auto s = project_gaussian(field, 0, cam, cfg);
    REQUIRE(s.has_value());
    double expect = (f * sigma / d) * (f * sigma / d) + kLowPass2D;
    CHECK(gstest::rel_err(s->cov00, expect) < 1e-5);
    CHECK(gstest::rel_err(s->cov11, expect) < 1e-5);
    CHECK(std::abs(s->cov01) < 1e-7);
    CHECK(s->depth == doctest::Approx(d));
    CHECK(s->mean_u == doctest::Approx(32.0));
}

TEST_CASE("project_gaussian: behind camera is culled") {
    Camera cam = simple_camera();
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 1);
    field.centers[2] = -1.f;
    CHECK_FALSE(project_gaussian(field, 0, cam, RasterConfig{}).has_value());
}

TEST_CASE("project_gaussian: doubling depth quarters the pre-low-pass covariance") {
    double f = 60.0, sigma = 0.04;
    Camera cam = simple_camera(64, 64, f);
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 2);
    field.centers[2] = 1.0f;
    field.centers[5] = 2.0f;
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) field.log_scales[3 * i + k] = static_cast<float>(std::log(sigma));
    RasterConfig cfg;
    auto near_s = project_gaussian(field, 0, cam, cfg);
    auto far_s = project_gaussian(field, 1, cam, cfg);
    REQUIRE(near_s.has_value());
    REQUIRE(far_s.has_value());
    CHECK(gstest::rel_err(near_s->cov00 - kLowPass2D, 4.0 * (far_s->cov00 - kLowPass2D)) < 1e-4);
    CHECK(gstest::rel_err(near_s->cov11 - kLowPass2D, 4.0 * (far_s->cov11 - kLowPass2D)) < 1e-4);
}

TEST_CASE("rasterize: empty field renders background with zero alpha") {
    Camera cam = simple_camera(32, 24, 30.0);
    GaussianField field = make_field(FieldKind::Color, 3, 1.f, 0);
    RasterConfig cfg;
    cfg.background = {0.25f, 0.5f, 0.75f};
    auto out = rasterize(field, cam, cfg);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 32; ++x) {
            CHECK(out.channel_at(y, x, 0) == doctest::Approx(0.25f));
            CHECK(out.channel_at(y, x, 1) == doctest::Approx(0.5f));
            CHECK(out.channel_at(y, x, 2) == doctest::Approx(0.75f));
            CHECK(out.alpha[y * 32 + x] == 0.f);
        }
}

TEST_CASE("rasterize: single opaque Gaussian centered on a pixel reproduces its payload") {
    Camera cam = simple_camera(17, 17, 40.0);
    // pixel (8,8) has center (8.5, 8.5) = principal point
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 1);
    field.centers[2] = 1.f;
    for (int k = 0; k < 3; ++k) field.log_scales[k] = static_cast<float>(std::log(0.05));
    field.opacity_logits[0] = 20.f;  // alpha ~= 1
    field.payloads = {0.8f, 0.3f, 0.6f};
    auto out = rasterize(field, cam, RasterConfig{});
    for (int c = 0; c < 3; ++c) CHECK(std::abs(out.channel_at(8, 8, c) - field.payloads[c]) < 2e-3);
    CHECK(out.alpha[8 * 17 + 8] > 0.99f);
    CHECK(std::abs(out.depth[8 * 17 + 8] - 1.f) < 1e-5);
}

TEST_CASE("rasterize: two-splat front-to-back compositing matches the hand oracle") {
    Camera cam = simple_camera(17, 17, 40.0);
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 2);
    // front: alpha*g = 0.5 red at depth 1; back: alpha*g ~= 1 blue at depth 2
    field.centers = {0.f, 0.f, 1.f, 0.f, 0.f, 2.f};
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) field.log_scales[3 * i + k] = static_cast<float>(std::log(0.08 * (i + 1)));
    field.opacity_logits = {0.f, 20.f};  // sigmoid(0) = 0.5
    field.payloads = {1.f, 0.f, 0.f, 0.f, 0.f, 1.f};
    auto out = rasterize(field, cam, RasterConfig{});
    CHECK(std::abs(out.channel_at(8, 8, 0) - 0.5f) < 2e-3);
    CHECK(std::abs(out.channel_at(8, 8, 2) - 0.5f) < 2e-3);
    CHECK(std::abs(out.channel_at(8, 8, 1)) < 1e-4);
    // expected depth = (0.5*1 + 0.5*2) / 1
    CHECK(std::abs(out.depth[8 * 17 + 8] - 1.5f) < 5e-3);
}

TEST_CASE("rasterize: channel/background mismatch is a contract violation") {
    Camera cam = simple_camera(8, 8, 10.0);
    GaussianField field = make_field(FieldKind::Semantic, 5, 1.f, 0);
    RasterConfig cfg;
    cfg.background = {0.f, 0.f};  // neither 1 nor 5 entries
    CHECK_THROWS_AS(rasterize(field, cam, cfg), ContractViolation);
}

TEST_CASE("rasterize_backward: payload gradient of a full-coverage splat equals the pixel gradient") {
    Camera cam = simple_camera(17, 17, 40.0);
    GaussianField field = make_field(FieldKind::Color, 3, 3.f, 1);
    field.centers[2] = 1.f;
    for (int k = 0; k < 3; ++k) field.log_scales[k] = static_cast<float>(std::log(0.05));
    field.opacity_logits[0] = 20.f;
    field.payloads = {0.5f, 0.5f, 0.5f};
    RasterContext ctx;
    auto out = rasterize(field, cam, RasterConfig{}, &ctx);
    RenderGradients grad;
    grad.channels.assign(out.channels_data.size(), 0.f);
    grad.channels[(8 * 17 + 8) * 3 + 1] = 2.5f;  // single pixel, green channel
    auto g = rasterize_backward(field, cam, RasterConfig{}, ctx, grad);
    CHECK(std::abs(g.payloads[1] - 2.5f) / 2.5f < 2e-3);
    CHECK(g.payloads[0] == 0.f);
    CHECK(g.payloads[2] == 0.f);
}

TEST_CASE("rasterize_backward: zero output gradient gives zero parameter gradients") {
    Rng rng(21);
    Camera cam = simple_camera(32, 32, 35.0);
    GaussianField field = random_scene_field(rng, 8);
    RasterContext ctx;
    rasterize(field, cam, RasterConfig{}, &ctx);
    auto g = rasterize_backward(field, cam, RasterConfig{}, ctx, RenderGradients{});
    auto all_zero = [](const std::vector<float>& v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.f; });
    };
    CHECK(all_zero(g.centers));
    CHECK(all_zero(g.quaternions));
    CHECK(all_zero(g.log_scales));
    CHECK(all_zero(g.opacity_logits));
    CHECK(all_zero(g.payloads));
}

TEST_CASE("rasterize_backward: mismatched forward state is a contract violation") {
    Camera cam = simple_camera(16, 16, 20.0);
    Rng rng(3);
    GaussianField field = random_scene_field(rng, 4);
    RasterContext ctx;
    rasterize(field, cam, RasterConfig{}, &ctx);
    GaussianField other = random_scene_field(rng, 7);
    CHECK_THROWS_AS(rasterize_backward(other, cam, RasterConfig{}, ctx, RenderGradients{}), ContractViolation);
}

TEST_CASE("rasterize_backward: all gradients match central finite differences (10 Gaussians, 32x32)") {
    Rng rng(12345);
    Camera cam = simple_camera(32, 32, 35.0);
    GaussianField field = random_scene_field(rng, 10);
    RasterConfig cfg = exact_config(3);

    DField d = DField::from(field);
    size_t pixels = 32 * 32;
    std::vector<double> wc(pixels * 3), wa(pixels), wd(pixels);
    for (auto& w : wc) w = rng.uniform(-1, 1);
    for (auto& w : wa) w = rng.uniform(-1, 1);
    for (auto& w : wd) w = rng.uniform(-0.3, 0.3);

    detail::RasterContextT<double> ctx;
    auto out = detail::raster_forward<double>(d.view(), cam, cfg, &ctx);
    detail::RenderGradT<double> up;
    up.channels = wc.data();
    up.alpha = wa.data();
    up.depth = wd.data();
    auto analytic = detail::raster_backward<double>(d.view(), cam, cfg, ctx, up);

    auto eval = [&](DField& fd) {
        auto o = detail::raster_forward<double>(fd.view(), cam, cfg, nullptr);
        return readout(o, wc, wa, wd);
    };

    const double eps = 1e-4;
    double max_rel = 0;
    auto check_param = [&](std::vector<double>& arr, const std::vector<double>& grad, size_t idx) {
        double saved = arr[idx];
        arr[idx] = saved + eps;
        double fp = eval(d);
        arr[idx] = saved - eps;
        double fm = eval(d);
        arr[idx] = saved;
        double fd = (fp - fm) / (2 * eps);
        double rel = std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        max_rel = std::max(max_rel, rel);
    };

    for (int i = 0; i < field.size(); ++i) {
        for (int k = 0; k < 3; ++k) check_param(d.centers, analytic.centers, 3 * i + k);
        for (int k = 0; k < 4; ++k) check_param(d.quaternions, analytic.quaternions, 4 * i + k);
        for (int k = 0; k < 3; ++k) check_param(d.log_scales, analytic.log_scales, 3 * i + k);
        check_param(d.opacity_logits, analytic.opacity_logits, i);
        for (int k = 0; k < 3; ++k) check_param(d.payloads, analytic.payloads, 3 * i + k);
    }
    INFO("max relative error: ", max_rel);
    CHECK(max_rel < 1e-3);
}

TEST_CASE("invariance: permuting Gaussian input order never changes the output") {
    Rng rng(77);
    Camera cam = simple_camera(48, 32, 30.0);
    GaussianField field = random_scene_field(rng, 40);
    auto base = rasterize(field, cam, RasterConfig{});

    std::vector<int> perm(field.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = field.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

    GaussianField shuffled = make_field(field.kind, field.channels, field.scene_extent, field.size());
    for (int i = 0; i < field.size(); ++i) {
        int j = perm[i];
        for (int k = 0; k < 3; ++k) shuffled.centers[3 * i + k] = field.centers[3 * j + k];
        for (int k = 0; k < 4; ++k) shuffled.quaternions[4 * i + k] = field.quaternions[4 * j + k];
        for (int k = 0; k < 3; ++k) shuffled.log_scales[3 * i + k] = field.log_scales[3 * j + k];
        shuffled.opacity_logits[i] = field.opacity_logits[j];
        for (int k = 0; k < 3; ++k) shuffled.payloads[3 * i + k] = field.payloads[3 * j + k];
    }
    auto out = rasterize(shuffled, cam, RasterConfig{});
    CHECK(out.channels_data == base.channels_data);
    CHECK(out.alpha == base.alpha);
    CHECK(out.depth == base.depth);
}

TEST_CASE("invariance: per-pixel alpha in [0,1]; dense opaque coverage saturates") {
    Rng rng(31);
    Camera cam = simple_camera(32, 32, 25.0);
    GaussianField field = random_scene_field(rng, 120);
    auto out = rasterize(field, cam, RasterConfig{});
    for (float a : out.alpha) {
        CHECK(a >= 0.f);
        CHECK(a <= 1.f + 1e-6f);
    }

    GaussianField opaque = make_field(FieldKind::Color, 3, 3.f, 150);
    for (int i = 0; i < opaque.size(); ++i) {
        double z = rng.uniform(0.8, 2.0);
        opaque.centers[3 * i] = static_cast<float>(rng.uniform(-0.8, 0.8) * z);
        opaque.centers[3 * i + 1] = static_cast<float>(rng.uniform(-0.8, 0.8) * z);
        opaque.centers[3 * i + 2] = static_cast<float>(z);
        opaque.opacity_logits[i] = 18.f;
        for (int k = 0; k < 3; ++k) opaque.log_scales[3 * i + k] = static_cast<float>(std::log(0.4));
    }
    auto dense = rasterize(opaque, cam, RasterConfig{});
    float min_alpha = 1.f;
    for (float a : dense.alpha) min_alpha = std::min(min_alpha, a);
    CHECK(min_alpha > 0.999f);
}

TEST_CASE("invariance: semantic rendering with 3 channels is bit-identical to color") {
    Rng rng(55);
    Camera cam = simple_camera(40, 30, 28.0);
    GaussianField color = random_scene_field(rng, 25, 3);
    GaussianField sem = color;
    sem.kind = FieldKind::Semantic;
    auto a = rasterize(color, cam, RasterConfig{});
    auto b = rasterize(sem, cam, RasterConfig{});
    CHECK(a.channels_data == b.channels_data);
    CHECK(a.alpha == b.alpha);
    CHECK(a.depth == b.depth);
}

TEST_CASE("invariance: tile-parallel output and gradients are bit-identical to single-threaded") {
    Rng rng(91);
    Camera cam = simple_camera(64, 48, 40.0);
    GaussianField field = random_scene_field(rng, 200);
    RenderGradients grad;
    grad.channels.assign(static_cast<size_t>(64) * 48 * 3, 0.f);
    for (auto& g : grad.channels) g = static_cast<float>(rng.uniform(-1, 1));

    set_worker_threads(1);
    RasterContext ctx1;
    auto out1 = rasterize(field, cam, RasterConfig{}, &ctx1);
    auto g1 = rasterize_backward(field, cam, RasterConfig{}, ctx1, grad);

    set_worker_threads(4);
    RasterContext ctx4;
    auto out4 = rasterize(field, cam, RasterConfig{}, &ctx4);
    auto g4 = rasterize_backward(field, cam, RasterConfig{}, ctx4, grad);
    set_worker_threads(0);

    CHECK(out1.channels_data == out4.channels_data);
    CHECK(out1.alpha == out4.alpha);
    CHECK(out1.depth == out4.depth);
    CHECK(g1.centers == g4.centers);
    CHECK(g1.quaternions == g4.quaternions);
    CHECK(g1.log_scales == g4.log_scales);
    CHECK(g1.opacity_logits == g4.opacity_logits);
    CHECK(g1.payloads == g4.payloads);
}

TEST_SUITE_END();
