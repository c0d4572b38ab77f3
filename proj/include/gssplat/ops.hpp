#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gssplat/tensor.hpp"

namespace gssplat {

namespace opdetail {

inline void require(bool cond, const char* msg) {
    if (!cond) throw ContractViolation(msg);
}

template <typename S>
const std::vector<S>& val(const TensorT<S>& t) {
    return t.data();
}

}  // namespace opdetail

//---------------------------------------------------------------- elementwise

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    opdetail::require(a.shape() == b.shape(), "add: shape mismatch");
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op<S>(a.shape(), std::move(out), {a, b}, [](NodeT<S>& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] += n.grad[i];
        }
    });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    opdetail::require(a.shape() == b.shape(), "sub: shape mismatch");
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op<S>(a.shape(), std::move(out), {a, b}, [](NodeT<S>& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] -= n.grad[i];
        }
    });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    opdetail::require(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op<S>(a.shape(), std::move(out), {a, b}, [](NodeT<S>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i] * bv[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] += n.grad[i] * av[i];
        }
    });
}

template <typename S>
TensorT<S> scalar_mul(const TensorT<S>& a, double c) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = static_cast<S>(a.data()[i] * c);
    return make_op<S>(a.shape(), std::move(out), {a}, [c](NodeT<S>& n) {
        for (size_t i = 0; i < n.grad.size(); ++i)
            n.parents[0]->grad[i] += static_cast<S>(n.grad[i] * c);
    });
}

template <typename S>
TensorT<S> scalar_add(const TensorT<S>& a, double c) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = static_cast<S>(a.data()[i] + c);
    return make_op<S>(a.shape(), std::move(out), {a}, [](NodeT<S>& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
    return make_op<S>(a.shape(), std::move(out), {a}, [](NodeT<S>& n) {
        const auto& x = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (x[i] > S(0)) n.parents[0]->grad[i] += n.grad[i];
    });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-a.data()[i]));
    TensorT<S> t = make_op<S>(a.shape(), std::move(out), {a}, nullptr);
    auto node = t.node();
    if (node->requires_grad) {
        node->backward = [](NodeT<S>& n) {
            const auto& y = n.value;
            for (size_t i = 0; i < n.grad.size(); ++i)
                n.parents[0]->grad[i] += n.grad[i] * y[i] * (S(1) - y[i]);
        };
    }
    return t;
}

template <typename S>
TensorT<S> tanh_op(const TensorT<S>& a) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a.data()[i]);
    TensorT<S> t = make_op<S>(a.shape(), std::move(out), {a}, nullptr);
    auto node = t.node();
    if (node->requires_grad) {
        node->backward = [](NodeT<S>& n) {
            const auto& y = n.value;
            for (size_t i = 0; i < n.grad.size(); ++i)
                n.parents[0]->grad[i] += n.grad[i] * (S(1) - y[i] * y[i]);
        };
    }
    return t;
}

// Hard clamp; gradient passes where lo <= x <= hi.
template <typename S>
TensorT<S> clamp_op(const TensorT<S>& a, double lo, double hi) {
    std::vector<S> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i)
        out[i] = std::min<S>(std::max<S>(a.data()[i], static_cast<S>(lo)), static_cast<S>(hi));
    return make_op<S>(a.shape(), std::move(out), {a}, [lo, hi](NodeT<S>& n) {
        const auto& x = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (x[i] >= static_cast<S>(lo) && x[i] <= static_cast<S>(hi)) n.parents[0]->grad[i] += n.grad[i];
    });
}

//---------------------------------------------------------------- linear alg

// x [M,Cin] * w [Cout,Cin]^T + b [Cout] -> [M,Cout]; b may be undefined.
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    opdetail::require(x.ndim() == 2 && w.ndim() == 2, "linear: rank");
    int m = x.dim(0), cin = x.dim(1), cout = w.dim(0);
    opdetail::require(w.dim(1) == cin, "linear: in-feature mismatch");
    if (b.defined()) opdetail::require(b.size() == cout, "linear: bias size");
    std::vector<S> out(static_cast<size_t>(m) * cout);
    const auto& xv = x.data();
    const auto& wv = w.data();
    for (int i = 0; i < m; ++i)
        for (int o = 0; o < cout; ++o) {
            double acc = b.defined() ? static_cast<double>(b.data()[o]) : 0.0;
            const S* xr = &xv[static_cast<size_t>(i) * cin];
            const S* wr = &wv[static_cast<size_t>(o) * cin];
            for (int k = 0; k < cin; ++k) acc += static_cast<double>(xr[k]) * wr[k];
            out[static_cast<size_t>(i) * cout + o] = static_cast<S>(acc);
        }
    std::vector<TensorT<S>> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_op<S>({m, cout}, std::move(out), std::move(parents), [m, cin, cout](NodeT<S>& n) {
        auto& xp = *n.parents[0];
        auto& wp = *n.parents[1];
        NodeT<S>* bp = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        for (int i = 0; i < m; ++i) {
            const S* g = &n.grad[static_cast<size_t>(i) * cout];
            for (int o = 0; o < cout; ++o) {
                S go = g[o];
                if (go == S(0)) continue;
                const S* wr = &wp.value[static_cast<size_t>(o) * cin];
                const S* xr = &xp.value[static_cast<size_t>(i) * cin];
                if (xp.requires_grad) {
                    S* xg = &xp.grad[static_cast<size_t>(i) * cin];
                    for (int k = 0; k < cin; ++k) xg[k] += go * wr[k];
                }
                if (wp.requires_grad) {
                    S* wg = &wp.grad[static_cast<size_t>(o) * cin];
                    for (int k = 0; k < cin; ++k) wg[k] += go * xr[k];
                }
                if (bp && bp->requires_grad) bp->grad[o] += go;
            }
        }
    });
}

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], stride 1|2, zero padding.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride, int pad) {
    opdetail::require(x.ndim() == 4 && w.ndim() == 4, "conv2d: rank");
    opdetail::require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    opdetail::require(w.dim(1) == cin, "conv2d: channel mismatch");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (ww + 2 * pad - kw) / stride + 1;
    opdetail::require(ho > 0 && wo > 0, "conv2d: empty output");
    if (b.defined()) opdetail::require(b.size() == cout, "conv2d: bias size");

    std::vector<S> out(static_cast<size_t>(n) * cout * ho * wo);
    const auto& xv = x.data();
    const auto& wv = w.data();
    auto xat = [&](int ni, int ci, int y, int xx) -> S {
        return xv[((static_cast<size_t>(ni) * cin + ci) * h + y) * ww + xx];
    };
    for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = b.defined() ? static_cast<double>(b.data()[co]) : 0.0;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky) {
                            int y = oy * stride + ky - pad;
                            if (y < 0 || y >= h) continue;
                            const S* wr = &wv[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw];
                            for (int kx = 0; kx < kw; ++kx) {
                                int xx = ox * stride + kx - pad;
                                if (xx < 0 || xx >= ww) continue;
                                acc += static_cast<double>(xat(ni, ci, y, xx)) * wr[kx];
                            }
                        }
                    out[((static_cast<size_t>(ni) * cout + co) * ho + oy) * wo + ox] = static_cast<S>(acc);
                }

    std::vector<TensorT<S>> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_op<S>({n, cout, ho, wo}, std::move(out), std::move(parents),
                      [n, cin, h, ww, cout, kh, kw, ho, wo, stride, pad](NodeT<S>& nd) {
                          auto& xp = *nd.parents[0];
                          auto& wp = *nd.parents[1];
                          NodeT<S>* bp = nd.parents.size() > 2 ? nd.parents[2].get() : nullptr;
                          for (int ni = 0; ni < n; ++ni)
                              for (int co = 0; co < cout; ++co)
                                  for (int oy = 0; oy < ho; ++oy)
                                      for (int ox = 0; ox < wo; ++ox) {
                                          S go = nd.grad[((static_cast<size_t>(ni) * cout + co) * ho + oy) * wo + ox];
                                          if (go == S(0)) continue;
                                          if (bp && bp->requires_grad) bp->grad[co] += go;
                                          for (int ci = 0; ci < cin; ++ci)
                                              for (int ky = 0; ky < kh; ++ky) {
                                                  int y = oy * stride + ky - pad;
                                                  if (y < 0 || y >= h) continue;
                                                  for (int kx = 0; kx < kw; ++kx) {
                                                      int xx = ox * stride + kx - pad;
                                                      if (xx < 0 || xx >= ww) continue;
                                                      size_t xi =
                                                          ((static_cast<size_t>(ni) * cin + ci) * h + y) * ww + xx;
                                                      size_t wi =
                                                          ((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx;
                                                      if (xp.requires_grad) xp.grad[xi] += go * wp.value[wi];
                                                      if (wp.requires_grad) wp.grad[wi] += go * xp.value[xi];
                                                  }
                                              }
                                      }
                      });
}

// x [N,C,H,W]; per (sample, group) normalization with affine gamma/beta [C].
template <typename S>
TensorT<S> group_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta, int groups,
                      double eps = 1e-5) {
    opdetail::require(x.ndim() == 4, "group_norm: rank");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    opdetail::require(c % groups == 0, "group_norm: channels not divisible by groups");
    opdetail::require(gamma.size() == c && beta.size() == c, "group_norm: affine size");
    int cg = c / groups;
    int64_t hw = static_cast<int64_t>(h) * w;
    int64_t m = cg * hw;

    std::vector<S> out(x.size());
    std::vector<S> means(static_cast<size_t>(n) * groups), inv_stds(static_cast<size_t>(n) * groups);
    const auto& xv = x.data();
    for (int ni = 0; ni < n; ++ni)
        for (int g = 0; g < groups; ++g) {
            double sum = 0, sq = 0;
            size_t base = (static_cast<size_t>(ni) * c + static_cast<size_t>(g) * cg) * hw;
            for (int64_t i = 0; i < m; ++i) {
                double v = xv[base + i];
                sum += v;
                sq += v * v;
            }
            double mean = sum / m;
            double var = std::max(0.0, sq / m - mean * mean);
            double inv = 1.0 / std::sqrt(var + eps);
            means[static_cast<size_t>(ni) * groups + g] = static_cast<S>(mean);
            inv_stds[static_cast<size_t>(ni) * groups + g] = static_cast<S>(inv);
            for (int cc = 0; cc < cg; ++cc) {
                int ch = g * cg + cc;
                S ga = gamma.data()[ch], be = beta.data()[ch];
                size_t cb = (static_cast<size_t>(ni) * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i)
                    out[cb + i] = static_cast<S>((xv[cb + i] - mean) * inv) * ga + be;
            }
        }

    return make_op<S>(x.shape(), std::move(out), {x, gamma, beta},
                      [n, c, groups, cg, hw, m, means, inv_stds](NodeT<S>& nd) {
                          auto& xp = *nd.parents[0];
                          auto& gp = *nd.parents[1];
                          auto& bp = *nd.parents[2];
                          for (int ni = 0; ni < n; ++ni)
                              for (int g = 0; g < groups; ++g) {
                                  double mean = means[static_cast<size_t>(ni) * groups + g];
                                  double inv = inv_stds[static_cast<size_t>(ni) * groups + g];
                                  // first pass: per-group reductions of dxhat and dxhat*xhat
                                  double sum_dxh = 0, sum_dxh_xh = 0;
                                  for (int cc = 0; cc < cg; ++cc) {
                                      int ch = g * cg + cc;
                                      double ga = gp.value[ch];
                                      size_t cb = (static_cast<size_t>(ni) * c + ch) * hw;
                                      for (int64_t i = 0; i < hw; ++i) {
                                          double xh = (xp.value[cb + i] - mean) * inv;
                                          double go = nd.grad[cb + i];
                                          if (gp.requires_grad) gp.grad[ch] += static_cast<S>(go * xh);
                                          if (bp.requires_grad) bp.grad[ch] += static_cast<S>(go);
                                          double dxh = go * ga;
                                          sum_dxh += dxh;
                                          sum_dxh_xh += dxh * xh;
                                      }
                                  }
                                  if (!xp.requires_grad) continue;
                                  double mdxh = sum_dxh / m, mdxh_xh = sum_dxh_xh / m;
                                  for (int cc = 0; cc < cg; ++cc) {
                                      int ch = g * cg + cc;
                                      double ga = gp.value[ch];
                                      size_t cb = (static_cast<size_t>(ni) * c + ch) * hw;
                                      for (int64_t i = 0; i < hw; ++i) {
                                          double xh = (xp.value[cb + i] - mean) * inv;
                                          double dxh = static_cast<double>(nd.grad[cb + i]) * ga;
                                          xp.grad[cb + i] +=
                                              static_cast<S>(inv * (dxh - mdxh - xh * mdxh_xh));
                                      }
                                  }
                              }
                      });
}

// x [N,C,H,W] -> [N,C,2H,2W], half-pixel bilinear with border clamp.
template <typename S>
TensorT<S> upsample_bilinear2(const TensorT<S>& x) {
    opdetail::require(x.ndim() == 4, "upsample: rank");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int oh = 2 * h, ow = 2 * w;
    std::vector<S> out(static_cast<size_t>(n) * c * oh * ow);
    const auto& xv = x.data();

    auto src_setup = [](int dst, int limit, int* i0, int* i1, S* f) {
        double s = (dst + 0.5) / 2.0 - 0.5;
        double fl = std::floor(s);
        *f = static_cast<S>(s - fl);
        int i = static_cast<int>(fl);
        *i0 = std::clamp(i, 0, limit - 1);
        *i1 = std::clamp(i + 1, 0, limit - 1);
    };

    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            size_t ib = (static_cast<size_t>(ni) * c + ci) * h * w;
            size_t ob = (static_cast<size_t>(ni) * c + ci) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                int y0, y1;
                S fy;
                src_setup(oy, h, &y0, &y1, &fy);
                for (int ox = 0; ox < ow; ++ox) {
                    int x0, x1;
                    S fx;
                    src_setup(ox, w, &x0, &x1, &fx);
                    S v00 = xv[ib + static_cast<size_t>(y0) * w + x0];
                    S v01 = xv[ib + static_cast<size_t>(y0) * w + x1];
                    S v10 = xv[ib + static_cast<size_t>(y1) * w + x0];
                    S v11 = xv[ib + static_cast<size_t>(y1) * w + x1];
                    out[ob + static_cast<size_t>(oy) * ow + ox] =
                        (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) + fy * ((S(1) - fx) * v10 + fx * v11);
                }
            }
        }

    return make_op<S>({n, c, oh, ow}, std::move(out), {x}, [n, c, h, w, oh, ow, src_setup](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                size_t ib = (static_cast<size_t>(ni) * c + ci) * h * w;
                size_t ob = (static_cast<size_t>(ni) * c + ci) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int y0, y1;
                    S fy;
                    src_setup(oy, h, &y0, &y1, &fy);
                    for (int ox = 0; ox < ow; ++ox) {
                        int x0, x1;
                        S fx;
                        src_setup(ox, w, &x0, &x1, &fx);
                        S go = nd.grad[ob + static_cast<size_t>(oy) * ow + ox];
                        xp.grad[ib + static_cast<size_t>(y0) * w + x0] += (S(1) - fy) * (S(1) - fx) * go;
                        xp.grad[ib + static_cast<size_t>(y0) * w + x1] += (S(1) - fy) * fx * go;
                        xp.grad[ib + static_cast<size_t>(y1) * w + x0] += fy * (S(1) - fx) * go;
                        xp.grad[ib + static_cast<size_t>(y1) * w + x1] += fy * fx * go;
                    }
                }
            }
    });
}

// Concatenate along an axis; all other dims must match.
template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
    opdetail::require(!parts.empty(), "concat: empty input");
    Shape shape = parts[0].shape();
    opdetail::require(axis >= 0 && axis < static_cast<int>(shape.size()), "concat: axis");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    int total_axis = 0;
    std::vector<int64_t> axis_sizes;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        opdetail::require(static_cast<int>(ps.size()) == static_cast<int>(shape.size()), "concat: rank");
        for (size_t i = 0; i < ps.size(); ++i)
            if (static_cast<int>(i) != axis) opdetail::require(ps[i] == shape[i], "concat: dim mismatch");
        axis_sizes.push_back(ps[axis]);
        total_axis += ps[axis];
    }
    Shape out_shape = shape;
    out_shape[axis] = total_axis;
    std::vector<S> out(outer * total_axis * inner);
    int64_t offset = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& pv = parts[pi].data();
        int64_t ax = axis_sizes[pi];
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + o * ax * inner, pv.begin() + (o + 1) * ax * inner,
                      out.begin() + (o * total_axis + offset) * inner);
        offset += ax;
    }
    return make_op<S>(out_shape, std::move(out), parts,
                      [outer, inner, total_axis, axis_sizes](NodeT<S>& nd) {
                          int64_t offset = 0;
                          for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                              auto& p = *nd.parents[pi];
                              int64_t ax = axis_sizes[pi];
                              if (p.requires_grad)
                                  for (int64_t o = 0; o < outer; ++o)
                                      for (int64_t i = 0; i < ax * inner; ++i)
                                          p.grad[o * ax * inner + i] +=
                                              nd.grad[(o * total_axis + offset) * inner + i];
                              offset += ax;
                          }
                      });
}

//---------------------------------------------------------------- softmax/attention

template <typename S>
TensorT<S> softmax_lastdim(const TensorT<S>& x) {
    opdetail::require(x.ndim() >= 1, "softmax: rank");
    int64_t c = x.shape().back();
    int64_t rows = x.size() / c;
    std::vector<S> out(x.size());
    const auto& xv = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = &xv[r * c];
        S* o = &out[r * c];
        S mx = in[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, in[i]);
        double sum = 0;
        for (int64_t i = 0; i < c; ++i) sum += std::exp(static_cast<double>(in[i] - mx));
        for (int64_t i = 0; i < c; ++i)
            o[i] = static_cast<S>(std::exp(static_cast<double>(in[i] - mx)) / sum);
    }
    TensorT<S> t = make_op<S>(x.shape(), std::move(out), {x}, nullptr);
    auto node = t.node();
    if (node->requires_grad) {
        node->backward = [rows, c](NodeT<S>& nd) {
            const auto& y = nd.value;
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0;
                for (int64_t i = 0; i < c; ++i)
                    dot += static_cast<double>(nd.grad[r * c + i]) * y[r * c + i];
                for (int64_t i = 0; i < c; ++i)
                    nd.parents[0]->grad[r * c + i] +=
                        static_cast<S>(y[r * c + i] * (nd.grad[r * c + i] - dot));
            }
        };
    }
    return t;
}

// Scaled dot-product self-attention for one token set: q,k,v [T,D].
// softmax(q k^T / sqrt(D)) v. Attention probabilities are retained for the
// backward pass.
template <typename S>
TensorT<S> sdpa(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v) {
    opdetail::require(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "sdpa: rank");
    int t = q.dim(0), d = q.dim(1);
    opdetail::require(k.dim(0) == t && k.dim(1) == d && v.dim(0) == t, "sdpa: shape mismatch");
    int dv = v.dim(1);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));

    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(t) * t);
    const auto& qv = q.data();
    const auto& kv = k.data();
    const auto& vv = v.data();
    std::vector<double> row(t);
    for (int i = 0; i < t; ++i) {
        double mx = -1e300;
        for (int j = 0; j < t; ++j) {
            double acc = 0;
            for (int e = 0; e < d; ++e)
                acc += static_cast<double>(qv[static_cast<size_t>(i) * d + e]) * kv[static_cast<size_t>(j) * d + e];
            row[j] = acc * scale;
            mx = std::max(mx, row[j]);
        }
        double sum = 0;
        for (int j = 0; j < t; ++j) sum += std::exp(row[j] - mx);
        for (int j = 0; j < t; ++j)
            (*probs)[static_cast<size_t>(i) * t + j] = static_cast<S>(std::exp(row[j] - mx) / sum);
    }
    std::vector<S> out(static_cast<size_t>(t) * dv);
    for (int i = 0; i < t; ++i)
        for (int e = 0; e < dv; ++e) {
            double acc = 0;
            for (int j = 0; j < t; ++j)
                acc += static_cast<double>((*probs)[static_cast<size_t>(i) * t + j]) *
                       vv[static_cast<size_t>(j) * dv + e];
            out[static_cast<size_t>(i) * dv + e] = static_cast<S>(acc);
        }

    return make_op<S>({t, dv}, std::move(out), {q, k, v}, [t, d, dv, scale, probs](NodeT<S>& nd) {
        auto& qp = *nd.parents[0];
        auto& kp = *nd.parents[1];
        auto& vp = *nd.parents[2];
        std::vector<double> dprobs(static_cast<size_t>(t) * t);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j) {
                double acc = 0;
                for (int e = 0; e < dv; ++e)
                    acc += static_cast<double>(nd.grad[static_cast<size_t>(i) * dv + e]) *
                           vp.value[static_cast<size_t>(j) * dv + e];
                dprobs[static_cast<size_t>(i) * t + j] = acc;
            }
        if (vp.requires_grad)
            for (int j = 0; j < t; ++j)
                for (int e = 0; e < dv; ++e) {
                    double acc = 0;
                    for (int i = 0; i < t; ++i)
                        acc += static_cast<double>((*probs)[static_cast<size_t>(i) * t + j]) *
                               nd.grad[static_cast<size_t>(i) * dv + e];
                    vp.grad[static_cast<size_t>(j) * dv + e] += static_cast<S>(acc);
                }
        // softmax backward into logit grads, in place in dprobs
        for (int i = 0; i < t; ++i) {
            double dot = 0;
            for (int j = 0; j < t; ++j)
                dot += dprobs[static_cast<size_t>(i) * t + j] * (*probs)[static_cast<size_t>(i) * t + j];
            for (int j = 0; j < t; ++j) {
                double p = (*probs)[static_cast<size_t>(i) * t + j];
                dprobs[static_cast<size_t>(i) * t + j] = p * (dprobs[static_cast<size_t>(i) * t + j] - dot);
            }
        }
        if (qp.requires_grad)
            for (int i = 0; i < t; ++i)
                for (int e = 0; e < d; ++e) {
                    double acc = 0;
                    for (int j = 0; j < t; ++j)
                        acc += dprobs[static_cast<size_t>(i) * t + j] * kp.value[static_cast<size_t>(j) * d + e];
                    qp.grad[static_cast<size_t>(i) * d + e] += static_cast<S>(acc * scale);
                }
        if (kp.requires_grad)
            for (int j = 0; j < t; ++j)
                for (int e = 0; e < d; ++e) {
                    double acc = 0;
                    for (int i = 0; i < t; ++i)
                        acc += dprobs[static_cast<size_t>(i) * t + j] * qp.value[static_cast<size_t>(i) * d + e];
                    kp.grad[static_cast<size_t>(j) * d + e] += static_cast<S>(acc * scale);
                }
    });
}

//---------------------------------------------------------------- reshaping

// [N,C,H,W] -> [(n,h,w) rows, C]
template <typename S>
TensorT<S> nchw_to_rows(const TensorT<S>& x) {
    opdetail::require(x.ndim() == 4, "nchw_to_rows: rank");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<S> out(x.size());
    const auto& xv = x.data();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int64_t p = 0; p < hw; ++p)
                out[(static_cast<size_t>(ni) * hw + p) * c + ci] =
                    xv[(static_cast<size_t>(ni) * c + ci) * hw + p];
    return make_op<S>({static_cast<int>(n * hw), c}, std::move(out), {x}, [n, c, hw](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int64_t p = 0; p < hw; ++p)
                    xp.grad[(static_cast<size_t>(ni) * c + ci) * hw + p] +=
                        nd.grad[(static_cast<size_t>(ni) * hw + p) * c + ci];
    });
}

// [H*W rows, C] -> [1,C,H,W]
template <typename S>
TensorT<S> rows_to_chw(const TensorT<S>& x, int h, int w) {
    opdetail::require(x.ndim() == 2 && x.dim(0) == h * w, "rows_to_chw: shape");
    int c = x.dim(1);
    int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<S> out(x.size());
    const auto& xv = x.data();
    for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < hw; ++p) out[ci * hw + p] = xv[p * c + ci];
    return make_op<S>({1, c, h, w}, std::move(out), {x}, [c, hw](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (int ci = 0; ci < c; ++ci)
            for (int64_t p = 0; p < hw; ++p) xp.grad[p * c + ci] += nd.grad[ci * hw + p];
    });
}

// Views a flat range of the input as a new shape (for multi-output ops).
template <typename S>
TensorT<S> slice_flat(const TensorT<S>& x, int64_t begin, Shape shape) {
    int64_t count = shape_numel(shape);
    opdetail::require(begin >= 0 && begin + count <= x.size(), "slice_flat: range");
    std::vector<S> out(x.data().begin() + begin, x.data().begin() + begin + count);
    return make_op<S>(std::move(shape), std::move(out), {x}, [begin](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (size_t i = 0; i < nd.grad.size(); ++i) xp.grad[begin + i] += nd.grad[i];
    });
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& x, int begin, int end) {
    opdetail::require(x.ndim() == 2 && begin >= 0 && end <= x.dim(0) && begin < end, "slice_rows: range");
    int c = x.dim(1);
    std::vector<S> out(x.data().begin() + static_cast<size_t>(begin) * c,
                       x.data().begin() + static_cast<size_t>(end) * c);
    return make_op<S>({end - begin, c}, std::move(out), {x}, [begin, c](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (size_t i = 0; i < nd.grad.size(); ++i)
            xp.grad[static_cast<size_t>(begin) * c + i] += nd.grad[i];
    });
}

template <typename S>
TensorT<S> gather_rows(const TensorT<S>& x, std::vector<int32_t> idx) {
    opdetail::require(x.ndim() == 2, "gather_rows: rank");
    int c = x.dim(1), m = x.dim(0);
    for (int32_t i : idx) opdetail::require(i >= 0 && i < m, "gather_rows: index out of range");
    std::vector<S> out(idx.size() * c);
    const auto& xv = x.data();
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(&xv[static_cast<size_t>(idx[r]) * c], &xv[static_cast<size_t>(idx[r]) * c] + c, &out[r * c]);
    int rows = static_cast<int>(idx.size());
    return make_op<S>({rows, c}, std::move(out), {x}, [idx = std::move(idx), c](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (size_t r = 0; r < idx.size(); ++r)
            for (int k = 0; k < c; ++k)
                xp.grad[static_cast<size_t>(idx[r]) * c + k] += nd.grad[r * c + k];
    });
}

// Segment mean: out[l] = mean of rows with seg==l; empty segments are zero.
template <typename S>
TensorT<S> segment_mean(const TensorT<S>& x, std::vector<int32_t> seg, int num_segments) {
    opdetail::require(x.ndim() == 2 && static_cast<int>(seg.size()) == x.dim(0), "segment_mean: shape");
    int c = x.dim(1), n = x.dim(0);
    auto counts = std::make_shared<std::vector<int32_t>>(num_segments, 0);
    for (int32_t s : seg) {
        opdetail::require(s >= 0 && s < num_segments, "segment_mean: segment out of range");
        ++(*counts)[s];
    }
    std::vector<double> acc(static_cast<size_t>(num_segments) * c, 0.0);
    const auto& xv = x.data();
    for (int r = 0; r < n; ++r)
        for (int k = 0; k < c; ++k) acc[static_cast<size_t>(seg[r]) * c + k] += xv[static_cast<size_t>(r) * c + k];
    std::vector<S> out(static_cast<size_t>(num_segments) * c, S(0));
    for (int l = 0; l < num_segments; ++l)
        if ((*counts)[l] > 0)
            for (int k = 0; k < c; ++k)
                out[static_cast<size_t>(l) * c + k] = static_cast<S>(acc[static_cast<size_t>(l) * c + k] / (*counts)[l]);
    return make_op<S>({num_segments, c}, std::move(out), {x},
                      [seg = std::move(seg), counts, c](NodeT<S>& nd) {
                          auto& xp = *nd.parents[0];
                          for (size_t r = 0; r < seg.size(); ++r) {
                              int32_t l = seg[r];
                              S inv = S(1) / static_cast<S>((*counts)[l]);
                              for (int k = 0; k < c; ++k)
                                  xp.grad[r * c + k] += nd.grad[static_cast<size_t>(l) * c + k] * inv;
                          }
                      });
}

// Multiplies row i by the constant s[i].
template <typename S>
TensorT<S> rowwise_scale(const TensorT<S>& x, std::vector<S> s) {
    opdetail::require(x.ndim() == 2 && static_cast<int>(s.size()) == x.dim(0), "rowwise_scale: shape");
    int c = x.dim(1);
    std::vector<S> out(x.size());
    const auto& xv = x.data();
    for (size_t r = 0; r < s.size(); ++r)
        for (int k = 0; k < c; ++k) out[r * c + k] = xv[r * c + k] * s[r];
    return make_op<S>(x.shape(), std::move(out), {x}, [s = std::move(s), c](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (size_t r = 0; r < s.size(); ++r)
            for (int k = 0; k < c; ++k) xp.grad[r * c + k] += nd.grad[r * c + k] * s[r];
    });
}

// Row-wise L2 normalization of 4-vectors with identity-quaternion fallback
// for rows with near-zero norm.
template <typename S>
TensorT<S> normalize_quaternion_rows(const TensorT<S>& x) {
    opdetail::require(x.ndim() == 2 && x.dim(1) == 4, "normalize_quaternion_rows: shape");
    int n = x.dim(0);
    auto norms = std::make_shared<std::vector<S>>(n);
    std::vector<S> out(x.size());
    const auto& xv = x.data();
    for (int r = 0; r < n; ++r) {
        double nn = 0;
        for (int k = 0; k < 4; ++k) nn += static_cast<double>(xv[4 * r + k]) * xv[4 * r + k];
        nn = std::sqrt(nn);
        (*norms)[r] = static_cast<S>(nn);
        if (nn < 1e-8) {
            out[4 * r] = S(1);
            out[4 * r + 1] = out[4 * r + 2] = out[4 * r + 3] = S(0);
        } else {
            for (int k = 0; k < 4; ++k) out[4 * r + k] = static_cast<S>(xv[4 * r + k] / nn);
        }
    }
    return make_op<S>(x.shape(), std::move(out), {x}, [n, norms](NodeT<S>& nd) {
        auto& xp = *nd.parents[0];
        for (int r = 0; r < n; ++r) {
            S nn = (*norms)[r];
            if (nn < S(1e-8)) continue;  // fallback rows pass no gradient
            double dot = 0;
            for (int k = 0; k < 4; ++k)
                dot += static_cast<double>(nd.grad[4 * r + k]) * nd.value[4 * r + k];
            for (int k = 0; k < 4; ++k)
                xp.grad[4 * r + k] +=
                    static_cast<S>((nd.grad[4 * r + k] - nd.value[4 * r + k] * dot) / nn);
        }
    });
}

//---------------------------------------------------------------- reductions & losses

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    double acc = 0;
    for (S v : x.data()) acc += v;
    return make_op<S>({1}, {static_cast<S>(acc)}, {x}, [](NodeT<S>& nd) {
        S g = nd.grad[0];
        for (auto& v : nd.parents[0]->grad) v += g;
    });
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    opdetail::require(x.size() > 0, "mean_all: empty");
    double acc = 0;
    for (S v : x.data()) acc += v;
    int64_t m = x.size();
    return make_op<S>({1}, {static_cast<S>(acc / m)}, {x}, [m](NodeT<S>& nd) {
        S g = nd.grad[0] / static_cast<S>(m);
        for (auto& v : nd.parents[0]->grad) v += g;
    });
}

// Mean squared error against a constant target.
template <typename S>
TensorT<S> mse_loss(const TensorT<S>& pred, const std::vector<S>& target) {
    opdetail::require(pred.size() == static_cast<int64_t>(target.size()), "mse_loss: shape mismatch");
    opdetail::require(pred.size() > 0, "mse_loss: empty");
    double acc = 0;
    const auto& pv = pred.data();
    for (size_t i = 0; i < target.size(); ++i) {
        double d = static_cast<double>(pv[i]) - target[i];
        acc += d * d;
    }
    int64_t m = pred.size();
    auto tgt = std::make_shared<std::vector<S>>(target);
    return make_op<S>({1}, {static_cast<S>(acc / m)}, {pred}, [m, tgt](NodeT<S>& nd) {
        S g = nd.grad[0];
        auto& p = *nd.parents[0];
        for (int64_t i = 0; i < m; ++i)
            p.grad[i] += g * S(2) * (p.value[i] - (*tgt)[i]) / static_cast<S>(m);
    });
}

// Cross entropy over rows of logits with integer labels; rows whose label is
// ignore_index are excluded from the mean. valid_count_out reports how many
// rows contributed (0 => the returned loss is exactly zero).
template <typename S>
TensorT<S> cross_entropy_rows(const TensorT<S>& logits, const std::vector<int32_t>& labels,
                              int ignore_index = 255, int* valid_count_out = nullptr) {
    opdetail::require(logits.ndim() == 2, "cross_entropy: rank");
    int m = logits.dim(0), c = logits.dim(1);
    opdetail::require(static_cast<int>(labels.size()) == m, "cross_entropy: label count");
    const auto& lv = logits.data();
    double acc = 0;
    int valid = 0;
    for (int r = 0; r < m; ++r) {
        int32_t lab = labels[r];
        if (lab == ignore_index) continue;
        opdetail::require(lab >= 0 && lab < c, "cross_entropy: label out of range");
        const S* row = &lv[static_cast<size_t>(r) * c];
        S mx = row[0];
        for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
        double sum = 0;
        for (int k = 0; k < c; ++k) sum += std::exp(static_cast<double>(row[k] - mx));
        acc += std::log(sum) + mx - row[lab];
        ++valid;
    }
    if (valid_count_out) *valid_count_out = valid;
    double loss = valid > 0 ? acc / valid : 0.0;
    auto labs = std::make_shared<std::vector<int32_t>>(labels);
    return make_op<S>({1}, {static_cast<S>(loss)}, {logits},
                      [m, c, valid, labs, ignore_index](NodeT<S>& nd) {
                          if (valid == 0) return;
                          S g = nd.grad[0] / static_cast<S>(valid);
                          auto& p = *nd.parents[0];
                          for (int r = 0; r < m; ++r) {
                              int32_t lab = (*labs)[r];
                              if (lab == ignore_index) continue;
                              const S* row = &p.value[static_cast<size_t>(r) * c];
                              S mx = row[0];
                              for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
                              double sum = 0;
                              for (int k = 0; k < c; ++k) sum += std::exp(static_cast<double>(row[k] - mx));
                              for (int k = 0; k < c; ++k) {
                                  double soft = std::exp(static_cast<double>(row[k] - mx)) / sum;
                                  p.grad[static_cast<size_t>(r) * c + k] +=
                                      g * static_cast<S>(soft - (k == lab ? 1.0 : 0.0));
                              }
                          }
                      });
}

// Mean absolute difference of forward image gradients; optional stand-in for
// a perceptual term. pred and target are pixel-major [H*W, C] rows.
template <typename S>
TensorT<S> grad_diff_loss(const TensorT<S>& pred, const std::vector<S>& target, int h, int w, int c) {
    opdetail::require(pred.size() == static_cast<int64_t>(target.size()), "grad_diff_loss: shape");
    opdetail::require(pred.size() == static_cast<int64_t>(c) * h * w, "grad_diff_loss: dims");
    const auto& pv = pred.data();
    auto at = [w, c](int y, int x, int ci) -> size_t { return (static_cast<size_t>(y) * w + x) * c + ci; };
    double acc = 0;
    int64_t terms = 0;
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x, ++terms)
                acc += std::abs((pv[at(y, x + 1, ci)] - pv[at(y, x, ci)]) -
                                (target[at(y, x + 1, ci)] - target[at(y, x, ci)]));
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x, ++terms)
                acc += std::abs((pv[at(y + 1, x, ci)] - pv[at(y, x, ci)]) -
                                (target[at(y + 1, x, ci)] - target[at(y, x, ci)]));
    }
    auto tgt = std::make_shared<std::vector<S>>(target);
    return make_op<S>({1}, {static_cast<S>(terms > 0 ? acc / terms : 0.0)}, {pred},
                      [tgt, c, h, w, terms, at](NodeT<S>& nd) {
                          if (terms == 0) return;
                          S g = nd.grad[0] / static_cast<S>(terms);
                          auto& p = *nd.parents[0];
                          auto step = [&](size_t ia, size_t ib) {
                              S diff = (p.value[ib] - p.value[ia]) - ((*tgt)[ib] - (*tgt)[ia]);
                              S s = diff > S(0) ? g : (diff < S(0) ? -g : S(0));
                              p.grad[ib] += s;
                              p.grad[ia] -= s;
                          };
                          for (int ci = 0; ci < c; ++ci) {
                              for (int y = 0; y < h; ++y)
                                  for (int x = 0; x + 1 < w; ++x) step(at(y, x, ci), at(y, x + 1, ci));
                              for (int y = 0; y + 1 < h; ++y)
                                  for (int x = 0; x < w; ++x) step(at(y, x, ci), at(y + 1, x, ci));
                          }
                      });
}

}  // namespace gssplat
