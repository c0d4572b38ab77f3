#pragma once

#include <functional>
#include <vector>

#include "gssplat/ops.hpp"
#include "gssplat/tensor.hpp"

namespace gstest {

// Central finite-difference check of reverse-mode gradients at double
// precision. make_loss rebuilds the scalar loss from the current parameter
// values; params are the leaves being probed.
inline double max_rel_fd(std::vector<gssplat::TensorT<double>> params,
                         const std::function<gssplat::TensorT<double>()>& make_loss, double eps = 1e-3) {
    using gssplat::backward;
    for (auto& p : params) {
        auto& g = p.grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
    auto loss = make_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double max_rel = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        for (size_t i = 0; i < data.size(); ++i) {
            double saved = data[i];
            data[i] = saved + eps;
            double fp = make_loss().item();
            data[i] = saved - eps;
            double fm = make_loss().item();
            data[i] = saved;
            double fd = (fp - fm) / (2 * eps);
            double rel =
                std::abs(fd - analytic[pi][i]) / std::max({std::abs(fd), std::abs(analytic[pi][i]), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// Fixed random readout turning a tensor into a scalar so every output
// element influences the loss.
inline gssplat::TensorT<double> dot_readout(const gssplat::TensorT<double>& t, gssplat::Rng& rng) {
    std::vector<double> w(t.size());
    for (auto& v : w) v = rng.uniform(-1, 1);
    auto weights = gssplat::TensorT<double>::constant(t.shape(), std::move(w));
    return gssplat::sum_all(gssplat::mul(t, weights));
}

}  // namespace gstest
