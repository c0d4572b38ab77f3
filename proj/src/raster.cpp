#include "gssplat/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gssplat/core.hpp"

namespace gssplat {

void RasterConfig::validate() const {
    if (tile_size < 4) throw data_error("raster config: tile size must be >= 4");
    if (!(transmittance_cutoff > 0.f && transmittance_cutoff < 1.f))
        throw data_error("raster config: transmittance cutoff must lie in (0,1)");
    if (!(radius_cutoff_sigma > 0.f)) throw data_error("raster config: radius cutoff must be positive");
    if (!(near_plane > 0.f)) throw data_error("raster config: near plane must be positive");
    if (min_splat_alpha < 0.f || min_splat_alpha >= 1.f)
        throw data_error("raster config: min splat alpha out of range");
}

namespace detail {

namespace {

constexpr double kAlphaClamp = 0.999;  // keeps 1/(1-a) bounded in the backward

template <typename S>
struct Proj {
    bool valid = false;
    // normalized quaternion and its raw norm (0 => identity fallback)
    S uq[4];
    S qnorm = 0;
    S rot[9];     // row-major rotation from uq
    S scales[3];  // exp(log_scale), exponent clamped to +-60
    S t[3];       // camera-frame center
    S txc = 0, tyc = 0;  // frustum-clamped tx, ty used by the Jacobian
    bool clamped_x = false, clamped_y = false;
    S mean_u = 0, mean_v = 0;
    S m[6];     // (J * W), 2x3 row-major
    S sigma3[9];
    S cov00 = 0, cov01 = 0, cov11 = 0;  // 2D covariance incl. low-pass
    S det = 0;
    S conic[3];  // packed inverse (a, b, c)
    S alpha = 0;
    S radius = 0;
};

template <typename S>
void quat_rotation(const S* u, S* r) {
    S w = u[0], x = u[1], y = u[2], z = u[3];
    r[0] = 1 - 2 * (y * y + z * z);
    r[1] = 2 * (x * y - z * w);
    r[2] = 2 * (x * z + y * w);
    r[3] = 2 * (x * y + z * w);
    r[4] = 1 - 2 * (x * x + z * z);
    r[5] = 2 * (y * z - x * w);
    r[6] = 2 * (x * z - y * w);
    r[7] = 2 * (y * z + x * w);
    r[8] = 1 - 2 * (x * x + y * y);
}

// Projects splat i; fills every intermediate the backward chain reuses.
template <typename S>
Proj<S> project_one(const FieldViewT<S>& f, int i, const Camera& cam, const RasterConfig& cfg) {
    Proj<S> p;
    const auto& K = cam.intrinsics;
    const S fx = static_cast<S>(K.fx), fy = static_cast<S>(K.fy);
    const S cx = static_cast<S>(K.cx), cy = static_cast<S>(K.cy);

    const S* q = f.quaternions + 4 * i;
    p.qnorm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (p.qnorm > S(1e-12)) {
        for (int k = 0; k < 4; ++k) p.uq[k] = q[k] / p.qnorm;
    } else {
        p.qnorm = 0;
        p.uq[0] = 1;
        p.uq[1] = p.uq[2] = p.uq[3] = 0;
    }
    quat_rotation(p.uq, p.rot);
    for (int k = 0; k < 3; ++k) {
        S ls = std::clamp<S>(f.log_scales[3 * i + k], S(-60), S(60));
        p.scales[k] = std::exp(ls);
    }

    // camera-frame center t = R^T (mu - c)
    const S* mu = f.centers + 3 * i;
    S d0 = mu[0] - static_cast<S>(cam.pose.translation[0]);
    S d1 = mu[1] - static_cast<S>(cam.pose.translation[1]);
    S d2 = mu[2] - static_cast<S>(cam.pose.translation[2]);
    S w[9];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) w[3 * r + c] = static_cast<S>(cam.pose.rotation(c, r));
    p.t[0] = w[0] * d0 + w[1] * d1 + w[2] * d2;
    p.t[1] = w[3] * d0 + w[4] * d1 + w[5] * d2;
    p.t[2] = w[6] * d0 + w[7] * d1 + w[8] * d2;
    if (!(p.t[2] > static_cast<S>(cfg.near_plane))) return p;

    S tz = p.t[2];
    p.mean_u = fx * p.t[0] / tz + cx;
    p.mean_v = fy * p.t[1] / tz + cy;

    // frustum clamp on the linearization point, as in EWA splatting
    const S limx = S(1.3) * static_cast<S>(0.5 * K.width / K.fx);
    const S limy = S(1.3) * static_cast<S>(0.5 * K.height / K.fy);
    S rx = p.t[0] / tz, ry = p.t[1] / tz;
    S rxc = std::clamp<S>(rx, -limx, limx);
    S ryc = std::clamp<S>(ry, -limy, limy);
    p.clamped_x = rxc != rx;
    p.clamped_y = ryc != ry;
    p.txc = rxc * tz;
    p.tyc = ryc * tz;

    // J rows of the perspective Jacobian at the (clamped) mean
    S j00 = fx / tz, j02 = -fx * p.txc / (tz * tz);
    S j11 = fy / tz, j12 = -fy * p.tyc / (tz * tz);
    // M = J * W
    p.m[0] = j00 * w[0] + j02 * w[6];
    p.m[1] = j00 * w[1] + j02 * w[7];
    p.m[2] = j00 * w[2] + j02 * w[8];
    p.m[3] = j11 * w[3] + j12 * w[6];
    p.m[4] = j11 * w[4] + j12 * w[7];
    p.m[5] = j11 * w[5] + j12 * w[8];

    // Sigma3 = (R S)(R S)^T
    S v[9];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) v[3 * r + c] = p.rot[3 * r + c] * p.scales[c];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            p.sigma3[3 * r + c] = v[3 * r] * v[3 * c] + v[3 * r + 1] * v[3 * c + 1] + v[3 * r + 2] * v[3 * c + 2];

    // Sigma2 = M Sigma3 M^T + lowpass I
    S ms[6];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            ms[3 * r + c] = p.m[3 * r] * p.sigma3[c] + p.m[3 * r + 1] * p.sigma3[3 + c] +
                            p.m[3 * r + 2] * p.sigma3[6 + c];
    p.cov00 = ms[0] * p.m[0] + ms[1] * p.m[1] + ms[2] * p.m[2] + static_cast<S>(kLowPass2D);
    p.cov01 = ms[0] * p.m[3] + ms[1] * p.m[4] + ms[2] * p.m[5];
    p.cov11 = ms[3] * p.m[3] + ms[4] * p.m[4] + ms[5] * p.m[5] + static_cast<S>(kLowPass2D);

    p.det = p.cov00 * p.cov11 - p.cov01 * p.cov01;
    if (!(p.det > 0) || !std::isfinite(p.det)) return p;
    p.conic[0] = p.cov11 / p.det;
    p.conic[1] = -p.cov01 / p.det;
    p.conic[2] = p.cov00 / p.det;

    S mid = S(0.5) * (p.cov00 + p.cov11);
    S disc = std::sqrt(std::max<S>(S(0), mid * mid - p.det));
    S max_eig = mid + disc;
    p.radius = static_cast<S>(cfg.radius_cutoff_sigma) * std::sqrt(std::max<S>(max_eig, S(0)));
    if (!std::isfinite(p.radius) || p.radius <= 0) return p;

    // footprint cull
    if (p.mean_u + p.radius < 0 || p.mean_u - p.radius > static_cast<S>(K.width) || p.mean_v + p.radius < 0 ||
        p.mean_v - p.radius > static_cast<S>(K.height))
        return p;

    p.alpha = S(1) / (S(1) + std::exp(-f.opacity_logits[i]));
    p.valid = true;
    return p;
}

template <typename S>
void splat_pixel_bbox(S mean_u, S mean_v, S radius, int width, int height, int* x0, int* x1, int* y0, int* y1) {
    *x0 = std::max(0, static_cast<int>(std::floor(mean_u - radius)));
    *x1 = std::min(width, static_cast<int>(std::ceil(mean_u + radius)) + 1);
    *y0 = std::max(0, static_cast<int>(std::floor(mean_v - radius)));
    *y1 = std::min(height, static_cast<int>(std::ceil(mean_v + radius)) + 1);
}

}  // namespace

template <typename S>
RenderOutputT<S> raster_forward(const FieldViewT<S>& field, const Camera& camera, const RasterConfig& config,
                                RasterContextT<S>* retain) {
    config.validate();
    const int width = camera.intrinsics.width;
    const int height = camera.intrinsics.height;
    const int channels = field.channels;
    const int n = field.n;

    RenderOutputT<S> out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.channels_data.assign(static_cast<size_t>(height) * width * channels, S(0));
    out.alpha.assign(static_cast<size_t>(height) * width, S(0));
    out.depth.assign(static_cast<size_t>(height) * width, S(0));

    RasterContextT<S> local;
    RasterContextT<S>& ctx = retain ? *retain : local;
    ctx.n = n;
    ctx.channels = channels;
    ctx.valid.assign(n, 0);
    ctx.mean2d.assign(static_cast<size_t>(n) * 2, S(0));
    ctx.conic.assign(static_cast<size_t>(n) * 3, S(0));
    ctx.zdepth.assign(n, S(0));
    ctx.salpha.assign(n, S(0));
    ctx.radius.assign(n, S(0));

    //--- project (parallel over splats, disjoint writes)
    parallel_for(n, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
            Proj<S> p = project_one(field, static_cast<int>(i), camera, config);
            if (!p.valid) continue;
            ctx.valid[i] = 1;
            ctx.mean2d[2 * i] = p.mean_u;
            ctx.mean2d[2 * i + 1] = p.mean_v;
            ctx.conic[3 * i] = p.conic[0];
            ctx.conic[3 * i + 1] = p.conic[1];
            ctx.conic[3 * i + 2] = p.conic[2];
            ctx.zdepth[i] = p.t[2];
            ctx.salpha[i] = p.alpha;
            ctx.radius[i] = p.radius;
        }
    });

    //--- canonical depth order (ties broken by index)
    std::vector<int32_t> order;
    order.reserve(n);
    for (int i = 0; i < n; ++i)
        if (ctx.valid[i]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (ctx.zdepth[a] != ctx.zdepth[b]) return ctx.zdepth[a] < ctx.zdepth[b];
        return a < b;
    });

    //--- tile binning in sorted order
    const int tile = config.tile_size;
    ctx.tiles_x = (width + tile - 1) / tile;
    ctx.tiles_y = (height + tile - 1) / tile;
    ctx.tile_splats.assign(static_cast<size_t>(ctx.tiles_x) * ctx.tiles_y, {});
    const S sigma_sq_cut = static_cast<S>(config.radius_cutoff_sigma) * static_cast<S>(config.radius_cutoff_sigma);
    for (int32_t i : order) {
        int x0, x1, y0, y1;
        splat_pixel_bbox(ctx.mean2d[2 * i], ctx.mean2d[2 * i + 1], ctx.radius[i], width, height, &x0, &x1, &y0,
                         &y1);
        if (x1 <= x0 || y1 <= y0) continue;
        int tx0 = x0 / tile, tx1 = (x1 - 1) / tile;
        int ty0 = y0 / tile, ty1 = (y1 - 1) / tile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                ctx.tile_splats[static_cast<size_t>(ty) * ctx.tiles_x + tx].push_back(i);
    }

    ctx.final_t.assign(static_cast<size_t>(height) * width, S(1));
    ctx.n_contrib.assign(static_cast<size_t>(height) * width, 0);

    //--- composite (parallel over tiles, disjoint pixel ranges)
    const int n_tiles = ctx.tiles_x * ctx.tiles_y;
    const S t_cut = static_cast<S>(config.transmittance_cutoff);
    const S min_alpha = static_cast<S>(config.min_splat_alpha);
    parallel_for(n_tiles, [&](int64_t tb, int64_t te) {
        std::vector<S> acc(channels);
        for (int64_t ti = tb; ti < te; ++ti) {
            const auto& list = ctx.tile_splats[ti];
            int tx = static_cast<int>(ti) % ctx.tiles_x;
            int ty = static_cast<int>(ti) / ctx.tiles_x;
            int px0 = tx * tile, px1 = std::min(width, px0 + tile);
            int py0 = ty * tile, py1 = std::min(height, py0 + tile);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const S ux = static_cast<S>(px) + S(0.5);
                    const S uy = static_cast<S>(py) + S(0.5);
                    S t_cur = S(1);
                    S alpha_sum = S(0);
                    S depth_sum = S(0);
                    std::fill(acc.begin(), acc.end(), S(0));
                    int processed = 0;
                    for (size_t e = 0; e < list.size(); ++e) {
                        int32_t i = list[e];
                        ++processed;
                        S dx = ux - ctx.mean2d[2 * i];
                        S dy = uy - ctx.mean2d[2 * i + 1];
                        S qf = ctx.conic[3 * i] * dx * dx + S(2) * ctx.conic[3 * i + 1] * dx * dy +
                               ctx.conic[3 * i + 2] * dy * dy;
                        if (qf > sigma_sq_cut || qf < 0) continue;
                        S a = ctx.salpha[i] * std::exp(S(-0.5) * qf);
                        if (a < min_alpha) continue;
                        a = std::min<S>(a, static_cast<S>(kAlphaClamp));
                        S wgt = a * t_cur;
                        const S* pay = field.payloads + static_cast<size_t>(i) * channels;
                        for (int ch = 0; ch < channels; ++ch) acc[ch] += pay[ch] * wgt;
                        alpha_sum += wgt;
                        depth_sum += ctx.zdepth[i] * wgt;
                        t_cur *= S(1) - a;
                        if (t_cur < t_cut) break;
                    }
                    size_t pix = static_cast<size_t>(py) * width + px;
                    S* dst = &out.channels_data[pix * channels];
                    for (int ch = 0; ch < channels; ++ch)
                        dst[ch] = acc[ch] + static_cast<S>(config.background_value(ch)) * t_cur;
                    out.alpha[pix] = alpha_sum;
                    out.depth[pix] = depth_sum / std::max<S>(alpha_sum, S(1e-8));
                    ctx.final_t[pix] = t_cur;
                    ctx.n_contrib[pix] = processed;
                }
            }
        }
    });

    if (retain) retain->out = out;
    return out;
}

template <typename S>
FieldGradT<S> raster_backward(const FieldViewT<S>& field, const Camera& camera, const RasterConfig& config,
                              const RasterContextT<S>& ctx, const RenderGradT<S>& grad) {
    const int width = camera.intrinsics.width;
    const int height = camera.intrinsics.height;
    const int channels = field.channels;
    const int n = field.n;
    if (ctx.n != n || ctx.channels != channels || ctx.out.height != height || ctx.out.width != width)
        throw ContractViolation("rasterize_backward: context does not match field/camera");

    FieldGradT<S> g;
    g.centers.assign(static_cast<size_t>(n) * 3, S(0));
    g.quaternions.assign(static_cast<size_t>(n) * 4, S(0));
    g.log_scales.assign(static_cast<size_t>(n) * 3, S(0));
    g.opacity_logits.assign(n, S(0));
    g.payloads.assign(static_cast<size_t>(n) * channels, S(0));

    // per-splat 2D-stage accumulators
    std::vector<S> d_mean(static_cast<size_t>(n) * 2, S(0));
    std::vector<S> d_conic(static_cast<size_t>(n) * 3, S(0));
    std::vector<S> d_salpha(n, S(0));
    std::vector<S> d_z(n, S(0));

    const int tile = config.tile_size;
    const int n_tiles = ctx.tiles_x * ctx.tiles_y;
    const S sigma_sq_cut = static_cast<S>(config.radius_cutoff_sigma) * static_cast<S>(config.radius_cutoff_sigma);
    const S min_alpha = static_cast<S>(config.min_splat_alpha);

    struct TileGrads {
        std::vector<S> mean, conic, salpha, z, payload;  // aligned with the tile list
    };
    std::vector<TileGrads> tg(n_tiles);

    parallel_for(n_tiles, [&](int64_t tb, int64_t te) {
        for (int64_t ti = tb; ti < te; ++ti) {
            const auto& list = ctx.tile_splats[ti];
            if (list.empty()) continue;
            auto& acc = tg[ti];
            acc.mean.assign(list.size() * 2, S(0));
            acc.conic.assign(list.size() * 3, S(0));
            acc.salpha.assign(list.size(), S(0));
            acc.z.assign(list.size(), S(0));
            acc.payload.assign(list.size() * channels, S(0));

            int tx = static_cast<int>(ti) % ctx.tiles_x;
            int ty = static_cast<int>(ti) / ctx.tiles_x;
            int px0 = tx * tile, px1 = std::min(width, px0 + tile);
            int py0 = ty * tile, py1 = std::min(height, py0 + tile);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    size_t pix = static_cast<size_t>(py) * width + px;
                    const S* gout = grad.channels ? grad.channels + pix * channels : nullptr;
                    S galpha = grad.alpha ? grad.alpha[pix] : S(0);
                    S gdepth = grad.depth ? grad.depth[pix] : S(0);
                    bool any = galpha != S(0) || gdepth != S(0);
                    if (gout && !any)
                        for (int ch = 0; ch < channels; ++ch)
                            if (gout[ch] != S(0)) {
                                any = true;
                                break;
                            }
                    if (!any) continue;

                    // depth normalization chain
                    S alpha_px = ctx.out.alpha[pix];
                    S mden = std::max<S>(alpha_px, S(1e-8));
                    S depth_px = ctx.out.depth[pix];
                    S dsum = depth_px * mden;
                    S g_dsum = gdepth / mden;
                    S galpha_eff = galpha;
                    if (alpha_px > S(1e-8)) galpha_eff -= gdepth * dsum / (mden * mden);

                    S bgdot = S(0);
                    if (gout)
                        for (int ch = 0; ch < channels; ++ch)
                            bgdot += gout[ch] * static_cast<S>(config.background_value(ch));

                    const S ux = static_cast<S>(px) + S(0.5);
                    const S uy = static_cast<S>(py) + S(0.5);
                    S t_cur = ctx.final_t[pix];
                    const S t_final = t_cur;
                    S suffix = S(0);  // sum over later splats of w_j * s_j
                    int last = ctx.n_contrib[pix];
                    for (int e = last - 1; e >= 0; --e) {
                        int32_t i = list[e];
                        S dx = ux - ctx.mean2d[2 * i];
                        S dy = uy - ctx.mean2d[2 * i + 1];
                        S ca = ctx.conic[3 * i], cb = ctx.conic[3 * i + 1], cc = ctx.conic[3 * i + 2];
                        S qf = ca * dx * dx + S(2) * cb * dx * dy + cc * dy * dy;
                        if (qf > sigma_sq_cut || qf < 0) continue;
                        S gexp = std::exp(S(-0.5) * qf);
                        S a_raw = ctx.salpha[i] * gexp;
                        if (a_raw < min_alpha) continue;
                        bool clamped = a_raw > static_cast<S>(kAlphaClamp);
                        S a = clamped ? static_cast<S>(kAlphaClamp) : a_raw;

                        S t_before = t_cur / (S(1) - a);
                        S wgt = a * t_before;

                        const S* pay = field.payloads + static_cast<size_t>(i) * channels;
                        S s_i = galpha_eff + g_dsum * ctx.zdepth[i];
                        if (gout)
                            for (int ch = 0; ch < channels; ++ch) {
                                s_i += gout[ch] * pay[ch];
                                acc.payload[static_cast<size_t>(e) * channels + ch] += wgt * gout[ch];
                            }
                        acc.z[e] += wgt * g_dsum;

                        S d_a = s_i * t_before - (suffix + bgdot * t_final) / (S(1) - a);
                        if (!clamped) {
                            S d_g = d_a * ctx.salpha[i];
                            acc.salpha[e] += d_a * gexp;
                            S d_qf = S(-0.5) * gexp * d_g;
                            acc.conic[3 * e] += d_qf * dx * dx;
                            acc.conic[3 * e + 1] += d_qf * S(2) * dx * dy;
                            acc.conic[3 * e + 2] += d_qf * dy * dy;
                            S d_dx = d_qf * (S(2) * ca * dx + S(2) * cb * dy);
                            S d_dy = d_qf * (S(2) * cc * dy + S(2) * cb * dx);
                            acc.mean[2 * e] -= d_dx;
                            acc.mean[2 * e + 1] -= d_dy;
                        }
                        suffix += wgt * s_i;
                        t_cur = t_before;
                    }
                }
            }
        }
    });

    // canonical reduction: tiles in index order, entries in list order
    for (int ti = 0; ti < n_tiles; ++ti) {
        const auto& list = ctx.tile_splats[ti];
        const auto& acc = tg[ti];
        if (acc.salpha.empty()) continue;
        for (size_t e = 0; e < list.size(); ++e) {
            int32_t i = list[e];
            d_mean[2 * i] += acc.mean[2 * e];
            d_mean[2 * i + 1] += acc.mean[2 * e + 1];
            d_conic[3 * i] += acc.conic[3 * e];
            d_conic[3 * i + 1] += acc.conic[3 * e + 1];
            d_conic[3 * i + 2] += acc.conic[3 * e + 2];
            d_salpha[i] += acc.salpha[e];
            d_z[i] += acc.z[e];
            for (int ch = 0; ch < channels; ++ch)
                g.payloads[static_cast<size_t>(i) * channels + ch] +=
                    acc.payload[static_cast<size_t>(e) * channels + ch];
        }
    }

    //--- chain 2D-stage gradients back to field parameters (parallel, disjoint)
    const auto& K = camera.intrinsics;
    const S fx = static_cast<S>(K.fx), fy = static_cast<S>(K.fy);
    parallel_for(n, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
            if (!ctx.valid[i]) continue;
            Proj<S> p = project_one(field, static_cast<int>(i), camera, config);
            if (!p.valid) continue;

            S gm_u = d_mean[2 * i], gm_v = d_mean[2 * i + 1];
            S gca = d_conic[3 * i], gcb = d_conic[3 * i + 1], gcc = d_conic[3 * i + 2];
            S gz = d_z[i];

            // opacity logit through the sigmoid
            g.opacity_logits[i] = d_salpha[i] * p.alpha * (S(1) - p.alpha);

            // conic = Sigma2^-1 (packed); matrix grad of K needs b halved
            S k00 = p.conic[0], k01 = p.conic[1], k11 = p.conic[2];
            S q00 = gca, q01 = S(0.5) * gcb, q11 = gcc;
            // G_sigma = -K * Q * K
            S kq00 = k00 * q00 + k01 * q01, kq01 = k00 * q01 + k01 * q11;
            S kq10 = k01 * q00 + k11 * q01, kq11 = k01 * q01 + k11 * q11;
            S gs00 = -(kq00 * k00 + kq01 * k01);
            S gs01 = -(kq00 * k01 + kq01 * k11);
            S gs11 = -(kq10 * k01 + kq11 * k11);
            // symmetric by construction; use (gs00, gs01, gs11)

            // Sigma2 = M Sigma3 M^T + c I
            // dSigma3 = M^T G M ; dM = 2 G M Sigma3
            S gsig3[9];
            {
                S gfull[4] = {gs00, gs01, gs01, gs11};
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) {
                        S acc = S(0);
                        for (int a2 = 0; a2 < 2; ++a2)
                            for (int b2 = 0; b2 < 2; ++b2)
                                acc += p.m[3 * a2 + r] * gfull[2 * a2 + b2] * p.m[3 * b2 + c];
                        gsig3[3 * r + c] = acc;
                    }
            }
            S gm[6];
            {
                S gfull[4] = {gs00, gs01, gs01, gs11};
                // (2 G M Sigma3)_{rc} = 2 * sum_{a,b} G_{ra} M_{ab} Sigma3_{bc}
                for (int r = 0; r < 2; ++r)
                    for (int c = 0; c < 3; ++c) {
                        S acc = S(0);
                        for (int a2 = 0; a2 < 2; ++a2)
                            for (int b2 = 0; b2 < 3; ++b2)
                                acc += gfull[2 * r + a2] * p.m[3 * a2 + b2] * p.sigma3[3 * b2 + c];
                        gm[3 * r + c] = S(2) * acc;
                    }
            }

            // M = J W  ->  dJ = dM W^T (W rows are camera axes in world frame)
            S w[9];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) w[3 * r + c] = static_cast<S>(camera.pose.rotation(c, r));
            S gj00 = gm[0] * w[0] + gm[1] * w[1] + gm[2] * w[2];
            S gj02 = gm[0] * w[6] + gm[1] * w[7] + gm[2] * w[8];
            S gj11 = gm[3] * w[3] + gm[4] * w[4] + gm[5] * w[5];
            S gj12 = gm[3] * w[6] + gm[4] * w[7] + gm[5] * w[8];

            // J entries: j00 = fx/tz, j02 = -fx*txc/tz^2, j11 = fy/tz, j12 = -fy*tyc/tz^2
            S tz = p.t[2];
            S gt0 = S(0), gt1 = S(0), gt2 = S(0);
            S gtxc = gj02 * (-fx / (tz * tz));
            S gtyc = gj12 * (-fy / (tz * tz));
            gt2 += gj00 * (-fx / (tz * tz)) + gj11 * (-fy / (tz * tz));
            gt2 += gj02 * (S(2) * fx * p.txc / (tz * tz * tz)) + gj12 * (S(2) * fy * p.tyc / (tz * tz * tz));
            // txc = clamp(tx/tz) * tz
            if (!p.clamped_x) {
                gt0 += gtxc;
            } else {
                gt2 += gtxc * (p.txc / tz);  // txc = lim * tz
            }
            if (!p.clamped_y) {
                gt1 += gtyc;
            } else {
                gt2 += gtyc * (p.tyc / tz);
            }

            // screen mean: u = fx*tx/tz + cx, v = fy*ty/tz + cy
            gt0 += gm_u * fx / tz;
            gt1 += gm_v * fy / tz;
            gt2 += -gm_u * fx * p.t[0] / (tz * tz) - gm_v * fy * p.t[1] / (tz * tz);

            // splat depth output
            gt2 += gz;

            // t = W (mu - c)  ->  dmu = W^T dt
            g.centers[3 * i] = w[0] * gt0 + w[3] * gt1 + w[6] * gt2;
            g.centers[3 * i + 1] = w[1] * gt0 + w[4] * gt1 + w[7] * gt2;
            g.centers[3 * i + 2] = w[2] * gt0 + w[5] * gt1 + w[8] * gt2;

            // Sigma3 = V V^T, V = R diag(s):  dV = 2 G3 V
            S vmat[9];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) vmat[3 * r + c] = p.rot[3 * r + c] * p.scales[c];
            S gv[9];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                    S acc = S(0);
                    for (int k = 0; k < 3; ++k) acc += gsig3[3 * r + k] * vmat[3 * k + c];
                    gv[3 * r + c] = S(2) * acc;
                }
            // dR = dV diag(s), ds_c = sum_r R_rc * dV_rc
            S grot[9];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) grot[3 * r + c] = gv[3 * r + c] * p.scales[c];
            for (int c = 0; c < 3; ++c) {
                S gs = p.rot[c] * gv[c] + p.rot[3 + c] * gv[3 + c] + p.rot[6 + c] * gv[6 + c];
                S ls = field.log_scales[3 * i + c];
                g.log_scales[3 * i + c] = (ls > S(-60) && ls < S(60)) ? gs * p.scales[c] : S(0);
            }

            // rotation -> unit quaternion
            S uw = p.uq[0], ux = p.uq[1], uy = p.uq[2], uz = p.uq[3];
            const S* gr = grot;
            S gu[4];
            gu[0] = S(2) * (-uz * gr[1] + uy * gr[2] + uz * gr[3] - ux * gr[5] - uy * gr[6] + ux * gr[7]);
            gu[1] = S(2) * (uy * gr[1] + uz * gr[2] + uy * gr[3] - S(2) * ux * gr[4] - uw * gr[5] +
                            uz * gr[6] + uw * gr[7] - S(2) * ux * gr[8]);
            gu[2] = S(2) * (-S(2) * uy * gr[0] + ux * gr[1] + uw * gr[2] + ux * gr[3] + uz * gr[5] -
                            uw * gr[6] + uz * gr[7] - S(2) * uy * gr[8]);
            gu[3] = S(2) * (-S(2) * uz * gr[0] - uw * gr[1] + ux * gr[2] + uw * gr[3] - S(2) * uz * gr[4] +
                            uy * gr[5] + ux * gr[6] + uy * gr[7]);
            // unit quaternion -> raw quaternion
            if (p.qnorm > 0) {
                S dot = gu[0] * uw + gu[1] * ux + gu[2] * uy + gu[3] * uz;
                g.quaternions[4 * i] = (gu[0] - uw * dot) / p.qnorm;
                g.quaternions[4 * i + 1] = (gu[1] - ux * dot) / p.qnorm;
                g.quaternions[4 * i + 2] = (gu[2] - uy * dot) / p.qnorm;
                g.quaternions[4 * i + 3] = (gu[3] - uz * dot) / p.qnorm;
            }
        }
    });

    return g;
}

template RenderOutputT<float> raster_forward<float>(const FieldViewT<float>&, const Camera&, const RasterConfig&,
                                                    RasterContextT<float>*);
template RenderOutputT<double> raster_forward<double>(const FieldViewT<double>&, const Camera&,
                                                      const RasterConfig&, RasterContextT<double>*);
template FieldGradT<float> raster_backward<float>(const FieldViewT<float>&, const Camera&, const RasterConfig&,
                                                  const RasterContextT<float>&, const RenderGradT<float>&);
template FieldGradT<double> raster_backward<double>(const FieldViewT<double>&, const Camera&, const RasterConfig&,
                                                    const RasterContextT<double>&, const RenderGradT<double>&);

}  // namespace detail

namespace {

detail::FieldViewT<float> view_of(const GaussianField& f) {
    detail::FieldViewT<float> v;
    v.centers = f.centers.data();
    v.quaternions = f.quaternions.data();
    v.log_scales = f.log_scales.data();
    v.opacity_logits = f.opacity_logits.data();
    v.payloads = f.payloads.data();
    v.n = f.size();
    v.channels = f.channels;
    return v;
}

}  // namespace

std::optional<Splat2D> project_gaussian(const GaussianField& field, int index, const Camera& camera,
                                        const RasterConfig& config) {
    field.validate();
    auto p = detail::project_one<float>(view_of(field), index, camera, config);
    if (!p.valid) return std::nullopt;
    Splat2D s;
    s.mean_u = p.mean_u;
    s.mean_v = p.mean_v;
    s.cov00 = p.cov00;
    s.cov01 = p.cov01;
    s.cov11 = p.cov11;
    s.depth = p.t[2];
    s.alpha = p.alpha;
    s.radius = p.radius;
    return s;
}

RenderOutput rasterize(const GaussianField& field, const Camera& camera, const RasterConfig& config,
                       RasterContext* retain) {
    field.validate();
    if (!config.background.empty() && static_cast<int>(config.background.size()) != field.channels &&
        config.background.size() != 1)
        throw ContractViolation("rasterize: background channel count does not match field");
    auto out = detail::raster_forward<float>(view_of(field), camera, config, retain);
    RenderOutput r;
    r.height = out.height;
    r.width = out.width;
    r.channels = out.channels;
    r.channels_data = std::move(out.channels_data);
    r.alpha = std::move(out.alpha);
    r.depth = std::move(out.depth);
    return r;
}

FieldGradients rasterize_backward(const GaussianField& field, const Camera& camera, const RasterConfig& config,
                                  const RasterContext& ctx, const RenderGradients& grad) {
    size_t pixels = static_cast<size_t>(camera.intrinsics.width) * camera.intrinsics.height;
    if (!grad.channels.empty() && grad.channels.size() != pixels * field.channels)
        throw ContractViolation("rasterize_backward: channel gradient size mismatch");
    if (!grad.alpha.empty() && grad.alpha.size() != pixels)
        throw ContractViolation("rasterize_backward: alpha gradient size mismatch");
    if (!grad.depth.empty() && grad.depth.size() != pixels)
        throw ContractViolation("rasterize_backward: depth gradient size mismatch");
    detail::RenderGradT<float> g;
    g.channels = grad.channels.empty() ? nullptr : grad.channels.data();
    g.alpha = grad.alpha.empty() ? nullptr : grad.alpha.data();
    g.depth = grad.depth.empty() ? nullptr : grad.depth.data();
    auto fg = detail::raster_backward<float>(view_of(field), camera, config, ctx, g);
    FieldGradients out;
    out.centers = std::move(fg.centers);
    out.quaternions = std::move(fg.quaternions);
    out.log_scales = std::move(fg.log_scales);
    out.opacity_logits = std::move(fg.opacity_logits);
    out.payloads = std::move(fg.payloads);
    return out;
}

ImageF render_channels_image(const RenderOutput& out) {
    ImageF img(out.height, out.width, out.channels);
    img.data = out.channels_data;
    return img;
}

ImageF render_alpha_image(const RenderOutput& out) {
    ImageF img(out.height, out.width, 1);
    img.data = out.alpha;
    return img;
}

ImageF render_depth_image(const RenderOutput& out) {
    ImageF img(out.height, out.width, 1);
    img.data = out.depth;
    return img;
}

LabelMap render_argmax_labels(const RenderOutput& out) {
    LabelMap labels(out.height, out.width, 0);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            int best = 0;
            float best_v = out.channel_at(y, x, 0);
            for (int c = 1; c < out.channels; ++c) {
                float v = out.channel_at(y, x, c);
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            labels.at(y, x) = static_cast<uint8_t>(best);
        }
    return labels;
}

}  // namespace gssplat
