#pragma once

#include <functional>

#include "dgp/autodiff.hpp"
#include "dgp/gan.hpp"

namespace dgp::testutil {

// Central finite differences of f against the analytic gradient already
// stored in `grad`. Returns the fraction of coordinates whose relative error
// is within `tol` (coordinates where both sides are tiny count as matches).
inline double gradient_match_fraction(const std::function<double(const Tensor<double>&)>& f,
                                      const Tensor<double>& x, const Tensor<double>& grad,
                                      double step = 1e-3, double tol = 1e-3,
                                      double floor = 1e-8) {
    int64_t ok = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor<double> xp = x, xm = x;
        xp.data[i] += step;
        xm.data[i] -= step;
        const double fd = (f(xp) - f(xm)) / (2.0 * step);
        const double g = grad.data[i];
        const double denom = std::max({std::abs(fd), std::abs(g), floor});
        if (std::abs(fd - g) / denom <= tol || std::abs(fd - g) <= floor) ++ok;
    }
    return double(ok) / double(std::max<int64_t>(1, x.numel()));
}

// Tiny 8x8 architecture used by gradient and gating tests. Two blocks is
// below the public builder's minimum, so the handles are constructed
// directly.
inline ArchConfig micro_arch() {
    ArchConfig a;
    a.resolution = 8;
    a.blocks = 2;
    a.classes = 3;
    a.latent_dim = 8;
    a.embed_dim = 6;
    a.base_channels = 4;
    a.channel_mult = {2, 1};
    a.d_base_channels = 4;
    a.d_channel_mult = {1};
    return a;
}

template <class S>
inline GanPair<S> micro_pair(uint64_t seed = 11) {
    Rng rng(derive_seed(seed, "micro"));
    GanPair<S> p;
    p.g = Generator<S>(micro_arch(), rng);
    p.d = Discriminator<S>(micro_arch(), rng);
    return p;
}

// Small valid architecture (32x32, B=4) for contract tests that must go
// through build_pair.
inline ArchConfig small_arch() {
    ArchConfig a;
    a.resolution = 32;
    a.blocks = 4;
    a.classes = 4;
    a.latent_dim = 16;
    a.embed_dim = 8;
    a.base_channels = 4;
    a.channel_mult = {4, 3, 2, 1};
    a.d_base_channels = 4;
    a.d_channel_mult = {1, 2, 2};
    return a;
}

}  // namespace dgp::testutil
