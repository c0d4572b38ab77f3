#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gssplat/core.hpp"
#include "gssplat/field.hpp"
#include "gssplat/geometry.hpp"
#include "gssplat/image.hpp"

namespace gssplat {

struct RasterConfig {
    int tile_size = 16;
    float near_plane = 0.01f;
    // Compositing stops once transmittance falls below this.
    float transmittance_cutoff = 1e-4f;
    // Footprint bound in sigma multiples; contributions outside are dropped.
    float radius_cutoff_sigma = 3.f;
    // Per-channel fill for the remaining transmittance; empty = zeros.
    std::vector<float> background;
    // Contributions with alpha*g below this are skipped (0 = exact).
    float min_splat_alpha = 1.f / 1024.f;

    void validate() const;

    float background_value(int c) const {
        if (background.empty()) return 0.f;
        return background[c < static_cast<int>(background.size()) ? c : background.size() - 1];
    }
};

// Screen-space low-pass added to projected covariance diagonals (px^2).
inline constexpr double kLowPass2D = 0.3;

struct Splat2D {
    double mean_u = 0, mean_v = 0;
    double cov00 = 0, cov01 = 0, cov11 = 0;  // includes the low-pass term
    double depth = 0;
    double alpha = 0;
    double radius = 0;  // cutoff_sigma * sqrt(max eigenvalue), pixels
};

// Projects one Gaussian of the field; nullopt when culled (behind the near
// plane or footprint entirely off-screen).
std::optional<Splat2D> project_gaussian(const GaussianField& field, int index, const Camera& camera,
                                        const RasterConfig& config);

struct RenderOutput {
    int height = 0, width = 0, channels = 0;
    std::vector<float> channels_data;  // H*W*C, row-major
    std::vector<float> alpha;          // H*W
    std::vector<float> depth;          // H*W, alpha-normalized expected depth

    float channel_at(int y, int x, int c) const {
        return channels_data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

struct FieldGradients {
    std::vector<float> centers;         // N*3
    std::vector<float> quaternions;     // N*4
    std::vector<float> log_scales;      // N*3
    std::vector<float> opacity_logits;  // N
    std::vector<float> payloads;        // N*C
};

// Per-pixel upstream gradients; empty vectors mean zero.
struct RenderGradients {
    std::vector<float> channels;  // H*W*C
    std::vector<float> alpha;     // H*W
    std::vector<float> depth;     // H*W
};

namespace detail {

template <typename S>
struct FieldViewT {
    const S* centers = nullptr;
    const S* quaternions = nullptr;
    const S* log_scales = nullptr;
    const S* opacity_logits = nullptr;
    const S* payloads = nullptr;
    int n = 0;
    int channels = 0;
};

template <typename S>
struct RenderOutputT {
    int height = 0, width = 0, channels = 0;
    std::vector<S> channels_data, alpha, depth;
};

template <typename S>
struct RasterContextT {
    int n = 0, channels = 0;
    int tiles_x = 0, tiles_y = 0;
    std::vector<uint8_t> valid;              // N
    std::vector<S> mean2d;                   // 2N
    std::vector<S> conic;                    // 3N, packed inverse covariance (a,b,c)
    std::vector<S> zdepth;                   // N
    std::vector<S> salpha;                   // N, sigmoid(opacity_logit)
    std::vector<S> radius;                   // N, pixels
    std::vector<std::vector<int32_t>> tile_splats;  // per tile, depth-sorted order
    std::vector<S> final_t;                  // H*W
    std::vector<int32_t> n_contrib;          // H*W, tile-list entries processed
    RenderOutputT<S> out;
};

template <typename S>
struct FieldGradT {
    std::vector<S> centers, quaternions, log_scales, opacity_logits, payloads;
};

template <typename S>
struct RenderGradT {
    const S* channels = nullptr;  // H*W*C
    const S* alpha = nullptr;     // H*W
    const S* depth = nullptr;     // H*W
};

template <typename S>
RenderOutputT<S> raster_forward(const FieldViewT<S>& field, const Camera& camera, const RasterConfig& config,
                                RasterContextT<S>* retain);

template <typename S>
FieldGradT<S> raster_backward(const FieldViewT<S>& field, const Camera& camera, const RasterConfig& config,
                              const RasterContextT<S>& ctx, const RenderGradT<S>& grad);

extern template RenderOutputT<float> raster_forward<float>(const FieldViewT<float>&, const Camera&,
                                                           const RasterConfig&, RasterContextT<float>*);
extern template RenderOutputT<double> raster_forward<double>(const FieldViewT<double>&, const Camera&,
                                                             const RasterConfig&, RasterContextT<double>*);
extern template FieldGradT<float> raster_backward<float>(const FieldViewT<float>&, const Camera&,
                                                         const RasterConfig&, const RasterContextT<float>&,
                                                         const RenderGradT<float>&);
extern template FieldGradT<double> raster_backward<double>(const FieldViewT<double>&, const Camera&,
                                                           const RasterConfig&, const RasterContextT<double>&,
                                                           const RenderGradT<double>&);

}  // namespace detail

using RasterContext = detail::RasterContextT<float>;

// Depth-sorted, tile-parallel front-to-back compositing over an arbitrary
// channel count. Pass a context to retain the state rasterize_backward needs.
RenderOutput rasterize(const GaussianField& field, const Camera& camera, const RasterConfig& config,
                       RasterContext* retain = nullptr);

// Exact adjoints of the forward compositing in the field's raw
// parameterization (centers, raw quaternions, log scales, opacity logits,
// payloads).
FieldGradients rasterize_backward(const GaussianField& field, const Camera& camera, const RasterConfig& config,
                                  const RasterContext& ctx, const RenderGradients& grad);

// Export helpers.
ImageF render_channels_image(const RenderOutput& out);  // H x W x C (C = 1 or 3 for PPM/PFM)
ImageF render_alpha_image(const RenderOutput& out);
ImageF render_depth_image(const RenderOutput& out);
LabelMap render_argmax_labels(const RenderOutput& out);

}  // namespace gssplat
