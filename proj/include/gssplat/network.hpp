#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gssplat/core.hpp"
#include "gssplat/ops.hpp"
#include "gssplat/tensor.hpp"

namespace gssplat {

struct HybridNetConfig {
    int shared_blocks = 4;     // 2, 4 or 6
    int attention_layers = 3;  // 1..4
    int encoder_channels = 32;  // C_e
    int decoder_channels = 32;  // C_d
    int num_classes = 6;        // eta
    // Stride schedules: shared trunk == color branch; the semantic branch
    // appends its own. Products must give H/2 for color and H/4 for semantics.
    std::vector<int> color_strides;     // per shared block
    std::vector<int> semantic_strides;  // extra blocks after the split
    uint64_t init_seed = 1234;

    static HybridNetConfig defaults() {
        HybridNetConfig c;
        c.color_strides = {1, 2, 1, 1};
        c.semantic_strides = {2};
        return c;
    }

    void validate() const {
        if (shared_blocks != 2 && shared_blocks != 4 && shared_blocks != 6)
            throw data_error("net config: shared_blocks must be 2, 4 or 6");
        if (attention_layers < 1 || attention_layers > 4)
            throw data_error("net config: attention_layers must be 1..4");
        if (encoder_channels < 4 || decoder_channels < 4)
            throw data_error("net config: channel counts must be >= 4");
        if (num_classes < 2) throw data_error("net config: class count must be >= 2");
        if (static_cast<int>(color_strides.size()) != shared_blocks)
            throw data_error("net config: color stride schedule length must equal shared_blocks");
        int p = 1;
        for (int s : color_strides) p *= s;
        if (p != 2) throw data_error("net config: color branch must have total stride 2");
        int q = 1;
        for (int s : semantic_strides) q *= s;
        if (q != 2) throw data_error("net config: semantic branch must add total stride 2");
    }

    // Keeps derived schedules in sync when only shared_blocks was changed.
    void rebuild_strides() {
        color_strides.assign(shared_blocks, 1);
        color_strides[1] = 2;  // first downsample sits in the second block
        semantic_strides = {2};
    }
};

inline int norm_groups(int channels) {
    for (int g = std::min(8, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

namespace nn {

template <typename S>
std::vector<S> kaiming_uniform(Rng& rng, int64_t count, int64_t fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
    std::vector<S> w(count);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-bound, bound));
    return w;
}

template <typename S>
struct Conv2dLayer {
    TensorT<S> w, b;
    int stride = 1, pad = 1;

    TensorT<S> forward(const TensorT<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename S>
Conv2dLayer<S> make_conv(ParamStore<S>& store, const std::string& name, int cin, int cout, int k, int stride,
                         int pad, Rng& rng) {
    Conv2dLayer<S> c;
    c.stride = stride;
    c.pad = pad;
    c.w = store.add(name + ".w",
                    TensorT<S>::param({cout, cin, k, k},
                                      kaiming_uniform<S>(rng, static_cast<int64_t>(cout) * cin * k * k,
                                                         static_cast<int64_t>(cin) * k * k)));
    c.b = store.add(name + ".b", TensorT<S>::param({cout}, std::vector<S>(cout, S(0))));
    return c;
}

template <typename S>
struct GroupNormLayer {
    TensorT<S> gamma, beta;
    int groups = 1;

    TensorT<S> forward(const TensorT<S>& x) const { return group_norm(x, gamma, beta, groups); }
};

template <typename S>
GroupNormLayer<S> make_group_norm(ParamStore<S>& store, const std::string& name, int channels) {
    GroupNormLayer<S> g;
    g.groups = norm_groups(channels);
    g.gamma = store.add(name + ".gamma", TensorT<S>::param({channels}, std::vector<S>(channels, S(1))));
    g.beta = store.add(name + ".beta", TensorT<S>::param({channels}, std::vector<S>(channels, S(0))));
    return g;
}

template <typename S>
struct LinearLayer {
    TensorT<S> w, b;

    TensorT<S> forward(const TensorT<S>& x) const { return linear(x, w, b); }
};

template <typename S>
LinearLayer<S> make_linear(ParamStore<S>& store, const std::string& name, int cin, int cout, Rng& rng) {
    LinearLayer<S> l;
    l.w = store.add(name + ".w",
                    TensorT<S>::param({cout, cin}, kaiming_uniform<S>(rng, static_cast<int64_t>(cout) * cin, cin)));
    l.b = store.add(name + ".b", TensorT<S>::param({cout}, std::vector<S>(cout, S(0))));
    return l;
}

// Two 3x3 convolutions with group norm; 1x1 projection on the skip when the
// shape changes.
template <typename S>
struct ResBlock {
    Conv2dLayer<S> conv1, conv2;
    GroupNormLayer<S> norm1, norm2;
    Conv2dLayer<S> proj;
    bool has_proj = false;

    TensorT<S> forward(const TensorT<S>& x) const {
        auto h = relu(norm1.forward(conv1.forward(x)));
        h = norm2.forward(conv2.forward(h));
        auto skip = has_proj ? proj.forward(x) : x;
        return relu(add(h, skip));
    }
};

template <typename S>
ResBlock<S> make_res_block(ParamStore<S>& store, const std::string& name, int cin, int cout, int stride,
                           Rng& rng) {
    ResBlock<S> b;
    b.conv1 = make_conv(store, name + ".conv1", cin, cout, 3, stride, 1, rng);
    b.norm1 = make_group_norm(store, name + ".norm1", cout);
    b.conv2 = make_conv(store, name + ".conv2", cout, cout, 3, 1, 1, rng);
    b.norm2 = make_group_norm(store, name + ".norm2", cout);
    b.has_proj = stride != 1 || cin != cout;
    if (b.has_proj) b.proj = make_conv(store, name + ".proj", cin, cout, 1, stride, 0, rng);
    return b;
}

// Residual single-head self-attention over flattened spatial tokens.
template <typename S>
struct AttentionLayer {
    LinearLayer<S> q, k, v, o;

    TensorT<S> forward(const TensorT<S>& tokens) const {
        auto att = sdpa(q.forward(tokens), k.forward(tokens), v.forward(tokens));
        return add(tokens, o.forward(att));
    }
};

template <typename S>
AttentionLayer<S> make_attention(ParamStore<S>& store, const std::string& name, int dim, Rng& rng) {
    AttentionLayer<S> a;
    a.q = make_linear(store, name + ".q", dim, dim, rng);
    a.k = make_linear(store, name + ".k", dim, dim, rng);
    a.v = make_linear(store, name + ".v", dim, dim, rng);
    a.o = make_linear(store, name + ".o", dim, dim, rng);
    return a;
}

}  // namespace nn

template <typename S>
struct FeatureMapsT {
    TensorT<S> color;     // [K, C_d, H, W] (F'_r)
    TensorT<S> semantic;  // [K, C_d, H, W] (F'_s)
    TensorT<S> seg2d;     // [K, eta, H, W] per-view segmentation logits
};

// Shared shallow trunk, early color exit at stride 2, deeper semantic branch
// at stride 4 with self-attention, depth-conditioned semantic decoding.
template <typename S>
struct HybridNet {
    HybridNetConfig cfg;
    std::vector<nn::ResBlock<S>> shared;
    std::vector<nn::ResBlock<S>> semantic_down;
    std::vector<nn::AttentionLayer<S>> attention;
    // color decoder
    nn::Conv2dLayer<S> cdec1;
    nn::GroupNormLayer<S> cdec1n;
    nn::Conv2dLayer<S> cdec2;
    // semantic decoder (input C_e + 1 depth channel)
    nn::Conv2dLayer<S> sdec1;
    nn::GroupNormLayer<S> sdec1n;
    nn::Conv2dLayer<S> sdec2;
    nn::GroupNormLayer<S> sdec2n;
    nn::Conv2dLayer<S> sdec3;
    nn::Conv2dLayer<S> seg_head;

    // images [K,3,H,W]; depth_quarter [K,1,H/4,W/4] already extent-normalized.
    FeatureMapsT<S> forward(const TensorT<S>& images, const TensorT<S>& depth_quarter) const {
        if (images.ndim() != 4 || images.dim(1) != 3)
            throw ContractViolation("hybrid_forward: images must be [K,3,H,W]");
        int k = images.dim(0), h = images.dim(2), w = images.dim(3);
        if (h % 4 != 0 || w % 4 != 0) throw ContractViolation("hybrid_forward: H and W must be multiples of 4");
        if (depth_quarter.ndim() != 4 || depth_quarter.dim(0) != k || depth_quarter.dim(1) != 1 ||
            depth_quarter.dim(2) != h / 4 || depth_quarter.dim(3) != w / 4)
            throw ContractViolation("hybrid_forward: depth must be [K,1,H/4,W/4]");

        auto x = images;
        for (const auto& blk : shared) x = blk.forward(x);
        auto f_color = x;  // [K,C_e,H/2,W/2]

        auto s = x;
        for (const auto& blk : semantic_down) s = blk.forward(s);  // [K,C_e,H/4,W/4]

        // per-view self-attention over flattened tokens
        int h4 = h / 4, w4 = w / 4;
        int tokens = h4 * w4;
        auto rows = nchw_to_rows(s);  // [K*T, C_e]
        std::vector<TensorT<S>> views;
        views.reserve(k);
        for (int vi = 0; vi < k; ++vi) {
            auto tok = slice_rows(rows, vi * tokens, (vi + 1) * tokens);
            for (const auto& layer : attention) tok = layer.forward(tok);
            views.push_back(rows_to_chw(tok, h4, w4));
        }
        auto f_sem = k == 1 ? views[0] : concat(views, 0);  // [K,C_e,H/4,W/4]

        // color decoding to full resolution
        auto cd = relu(cdec1n.forward(cdec1.forward(f_color)));
        cd = upsample_bilinear2(cd);
        auto color_full = cdec2.forward(cd);  // [K,C_d,H,W]

        // depth-conditioned semantic decoding
        auto sd_in = concat<S>({f_sem, depth_quarter}, 1);
        auto sd = relu(sdec1n.forward(sdec1.forward(sd_in)));
        sd = upsample_bilinear2(sd);
        sd = relu(sdec2n.forward(sdec2.forward(sd)));
        sd = upsample_bilinear2(sd);
        auto sem_full = sdec3.forward(sd);  // [K,C_d,H,W]

        FeatureMapsT<S> out;
        out.color = color_full;
        out.semantic = sem_full;
        out.seg2d = seg_head.forward(sem_full);
        return out;
    }
};

template <typename S>
HybridNet<S> build_hybrid_net(const HybridNetConfig& cfg, ParamStore<S>& store, Rng& rng) {
    cfg.validate();
    HybridNet<S> net;
    net.cfg = cfg;
    int ce = cfg.encoder_channels, cd = cfg.decoder_channels;
    int cin = 3;
    for (int i = 0; i < cfg.shared_blocks; ++i) {
        net.shared.push_back(
            nn::make_res_block(store, "shared" + std::to_string(i), cin, ce, cfg.color_strides[i], rng));
        cin = ce;
    }
    for (size_t i = 0; i < cfg.semantic_strides.size(); ++i)
        net.semantic_down.push_back(nn::make_res_block(store, "semdown" + std::to_string(i), ce, ce,
                                                       cfg.semantic_strides[i], rng));
    for (int i = 0; i < cfg.attention_layers; ++i)
        net.attention.push_back(nn::make_attention(store, "att" + std::to_string(i), ce, rng));
    net.cdec1 = nn::make_conv(store, "cdec1", ce, cd, 3, 1, 1, rng);
    net.cdec1n = nn::make_group_norm(store, "cdec1n", cd);
    net.cdec2 = nn::make_conv(store, "cdec2", cd, cd, 3, 1, 1, rng);
    net.sdec1 = nn::make_conv(store, "sdec1", ce + 1, cd, 3, 1, 1, rng);
    net.sdec1n = nn::make_group_norm(store, "sdec1n", cd);
    net.sdec2 = nn::make_conv(store, "sdec2", cd, cd, 3, 1, 1, rng);
    net.sdec2n = nn::make_group_norm(store, "sdec2n", cd);
    net.sdec3 = nn::make_conv(store, "sdec3", cd, cd, 3, 1, 1, rng);
    net.seg_head = nn::make_conv(store, "seg_head", cd, cfg.num_classes, 3, 1, 1, rng);
    return net;
}

// Per-point parameter heads. Offset probability and opacity come out as
// logits/probabilities, offsets are tanh-bounded by the interaction unit
// interval, scales are clamped into the field's valid range and quaternions
// normalized with an identity fallback.
template <typename S>
struct HeadOutputs {
    TensorT<S> offset_prob;     // [N,1] sigmoid
    TensorT<S> offsets;         // [N,3] within +- unit_interval
    TensorT<S> log_scales;      // [N,3]
    TensorT<S> rotations;       // [N,4] unit quaternions
    TensorT<S> opacity_logits;  // [N,1]
    TensorT<S> payload;         // [N,C]
};

template <typename S>
struct GaussianHeads {
    nn::LinearLayer<S> prob, offset, scale, rot, opacity, payload;
    int payload_dim = 3;
    bool payload_sigmoid = true;
    // structural prior added to the scale head before clamping
    double log_scale_bias = -4.0;

    HeadOutputs<S> forward(const TensorT<S>& features, double unit_interval, double scene_extent) const {
        HeadOutputs<S> out;
        out.offset_prob = sigmoid(prob.forward(features));
        out.offsets = scalar_mul(tanh_op(offset.forward(features)), unit_interval);
        double lo = std::log(1e-6 * scene_extent), hi = std::log(scene_extent);
        out.log_scales = clamp_op(scalar_add(scale.forward(features), log_scale_bias), lo, hi);
        out.rotations = normalize_quaternion_rows(rot.forward(features));
        out.opacity_logits = opacity.forward(features);
        auto raw = payload.forward(features);
        out.payload = payload_sigmoid ? sigmoid(raw) : raw;
        return out;
    }
};

template <typename S>
GaussianHeads<S> make_heads(ParamStore<S>& store, const std::string& prefix, int feature_dim, int payload_dim,
                            bool payload_sigmoid, double log_scale_bias, Rng& rng) {
    GaussianHeads<S> h;
    h.payload_dim = payload_dim;
    h.payload_sigmoid = payload_sigmoid;
    h.log_scale_bias = log_scale_bias;
    h.prob = nn::make_linear(store, prefix + ".prob", feature_dim, 1, rng);
    h.offset = nn::make_linear(store, prefix + ".offset", feature_dim, 3, rng);
    h.scale = nn::make_linear(store, prefix + ".scale", feature_dim, 3, rng);
    h.rot = nn::make_linear(store, prefix + ".rot", feature_dim, 4, rng);
    h.opacity = nn::make_linear(store, prefix + ".opacity", feature_dim, 1, rng);
    h.payload = nn::make_linear(store, prefix + ".payload", feature_dim, payload_dim, rng);
    return h;
}

//---------------------------------------------------------------- optimizer

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Core update on one tensor; m/v are the caller's state for it.
// Returns false (and touches nothing) when the gradient is non-finite.
template <typename S>
bool adam_update(std::vector<S>& param, const std::vector<S>& grad, std::vector<double>& m,
                 std::vector<double>& v, int64_t t, const AdamConfig& cfg) {
    for (S g : grad)
        if (!std::isfinite(static_cast<double>(g))) return false;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        param[i] = static_cast<S>(param[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    return true;
}

template <typename S>
struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t step_count = 0;
    int64_t skipped = 0;

    void init(const ParamStore<S>& store) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : store.items) {
            m.emplace_back(t.size(), 0.0);
            v.emplace_back(t.size(), 0.0);
        }
    }
};

template <typename S>
void adam_step(ParamStore<S>& store, AdamState<S>& state, const AdamConfig& cfg) {
    if (state.m.size() != store.items.size()) throw ContractViolation("adam: state not initialized for store");
    ++state.step_count;
    for (size_t i = 0; i < store.items.size(); ++i) {
        auto& t = store.items[i].second;
        if (!adam_update(t.data(), t.grad(), state.m[i], state.v[i], state.step_count, cfg)) ++state.skipped;
    }
}

using FeatureMaps = FeatureMapsT<float>;

}  // namespace gssplat
