#pragma once

#include <cmath>

#include "dgp/ops_spatial.hpp"

namespace dgp {

// sRGB (D65) <-> CIE Lab. Images on the public surfaces are display-range
// [0,1]; L is carried as L/100 so gray images live in [0,1] too.

namespace color {

template <class S>
inline S srgb_to_linear(S u) {
    return u <= S(0.04045) ? u / S(12.92) : std::pow((u + S(0.055)) / S(1.055), S(2.4));
}

template <class S>
inline S srgb_to_linear_d(S u) {
    return u <= S(0.04045)
               ? S(1) / S(12.92)
               : S(2.4) / S(1.055) * std::pow((u + S(0.055)) / S(1.055), S(1.4));
}

template <class S>
inline S linear_to_srgb(S u) {
    return u <= S(0.0031308) ? S(12.92) * u : S(1.055) * std::pow(u, S(1.0 / 2.4)) - S(0.055);
}

inline constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;
inline constexpr double kM[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                    {0.2126729, 0.7151522, 0.0721750},
                                    {0.0193339, 0.1191920, 0.9503041}};
inline constexpr double kMInv[3][3] = {{3.2404542, -1.5371385, -0.4985314},
                                       {-0.9692660, 1.8760108, 0.0415560},
                                       {0.0556434, -0.2040259, 1.0572252}};

template <class S>
inline S lab_f(S t) {
    constexpr double d = 6.0 / 29.0;
    return t > S(d * d * d) ? std::cbrt(t) : t / S(3 * d * d) + S(4.0 / 29.0);
}

template <class S>
inline S lab_f_d(S t) {
    constexpr double d = 6.0 / 29.0;
    return t > S(d * d * d) ? std::cbrt(t) == S(0) ? S(0) : S(1.0 / 3.0) / (std::cbrt(t) * std::cbrt(t))
                            : S(1) / S(3 * d * d);
}

template <class S>
inline S lab_f_inv(S t) {
    constexpr double d = 6.0 / 29.0;
    return t > S(d) ? t * t * t : S(3 * d * d) * (t - S(4.0 / 29.0));
}

// One sRGB display pixel -> (L, a, b), L in [0,100].
template <class S>
inline void rgb_to_lab(S r, S g, S b, S& L, S& a, S& bb) {
    const S rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
    const S x = S(kM[0][0]) * rl + S(kM[0][1]) * gl + S(kM[0][2]) * bl;
    const S y = S(kM[1][0]) * rl + S(kM[1][1]) * gl + S(kM[1][2]) * bl;
    const S z = S(kM[2][0]) * rl + S(kM[2][1]) * gl + S(kM[2][2]) * bl;
    const S fx = lab_f(S(x / kXn)), fy = lab_f(S(y / kYn)), fz = lab_f(S(z / kZn));
    L = S(116) * fy - S(16);
    a = S(500) * (fx - fy);
    bb = S(200) * (fy - fz);
}

template <class S>
inline void lab_to_rgb(S L, S a, S bb, S& r, S& g, S& b) {
    const S fy = (L + S(16)) / S(116);
    const S fx = fy + a / S(500);
    const S fz = fy - bb / S(200);
    const S x = S(kXn) * lab_f_inv(fx), y = S(kYn) * lab_f_inv(fy), z = S(kZn) * lab_f_inv(fz);
    r = linear_to_srgb(S(kMInv[0][0]) * x + S(kMInv[0][1]) * y + S(kMInv[0][2]) * z);
    g = linear_to_srgb(S(kMInv[1][0]) * x + S(kMInv[1][1]) * y + S(kMInv[1][2]) * z);
    b = linear_to_srgb(S(kMInv[2][0]) * x + S(kMInv[2][1]) * y + S(kMInv[2][2]) * z);
}

}  // namespace color

// Display image (3,H,W) -> Lab planes (3,H,W): L/100, a, b.
template <class S>
inline Tensor<S> rgb_image_to_lab(const Tensor<S>& img) {
    if (img.shape.rank != 3 || img.shape[0] != 3)
        throw DomainError("rgb_image_to_lab: expected (3,H,W)");
    const int64_t hw = int64_t(img.shape[1]) * img.shape[2];
    Tensor<S> lab(img.shape);
    for (int64_t i = 0; i < hw; ++i) {
        S L, a, b;
        color::rgb_to_lab(img.data[i], img.data[hw + i], img.data[2 * hw + i], L, a, b);
        lab.data[i] = L / S(100);
        lab.data[hw + i] = a;
        lab.data[2 * hw + i] = b;
    }
    return lab;
}

// Lab planes (L/100, a, b) -> display image. When `fit_gamut` is set the
// chroma of out-of-gamut pixels is scaled towards neutral until the sRGB
// values fit, which keeps L intact (the neutral axis is always in gamut).
template <class S>
inline Tensor<S> lab_image_to_rgb(const Tensor<S>& lab, bool fit_gamut = true) {
    if (lab.shape.rank != 3 || lab.shape[0] != 3)
        throw DomainError("lab_image_to_rgb: expected (3,H,W)");
    const int64_t hw = int64_t(lab.shape[1]) * lab.shape[2];
    Tensor<S> img(lab.shape);
    const S margin = S(1e-6);
    for (int64_t i = 0; i < hw; ++i) {
        const S L = lab.data[i] * S(100);
        S a = lab.data[hw + i], b = lab.data[2 * hw + i];
        S r, g, bl;
        color::lab_to_rgb(L, a, b, r, g, bl);
        const bool inside = r >= -margin && r <= S(1) + margin && g >= -margin &&
                            g <= S(1) + margin && bl >= -margin && bl <= S(1) + margin;
        if (!inside && fit_gamut) {
            S lo = 0, hi = 1;
            for (int it = 0; it < 22; ++it) {
                const S mid = (lo + hi) / 2;
                color::lab_to_rgb(L, a * mid, b * mid, r, g, bl);
                const bool ok = r >= -margin && r <= S(1) + margin && g >= -margin &&
                                g <= S(1) + margin && bl >= -margin && bl <= S(1) + margin;
                (ok ? lo : hi) = mid;
            }
            color::lab_to_rgb(L, a * lo, b * lo, r, g, bl);
        }
        img.data[i] = std::min(S(1), std::max(S(0), r));
        img.data[hw + i] = std::min(S(1), std::max(S(0), g));
        img.data[2 * hw + i] = std::min(S(1), std::max(S(0), bl));
    }
    return img;
}

// Chroma-weighted mean hue vector of a display image: mean of (a,b).
template <class S>
inline std::pair<S, S> mean_ab(const Tensor<S>& img) {
    Tensor<S> lab = rgb_image_to_lab(img);
    const int64_t hw = int64_t(img.shape[1]) * img.shape[2];
    S sa = 0, sb = 0;
    for (int64_t i = 0; i < hw; ++i) {
        sa += lab.data[hw + i];
        sb += lab.data[2 * hw + i];
    }
    return {sa / S(hw), sb / S(hw)};
}

// Angle between two hue vectors, in radians [0, pi].
template <class S>
inline S hue_distance(std::pair<S, S> u, std::pair<S, S> v) {
    const S hu = std::atan2(u.second, u.first);
    const S hv = std::atan2(v.second, v.first);
    S d = std::abs(hu - hv);
    const S tau = S(6.283185307179586);
    if (d > tau / 2) d = tau - d;
    return d;
}

// ---------------------------------------------------------------------------
// Differentiable graying: model-range RGB (N,3,H,W) -> model-range L (N,1,H,W)
// where L is the CIE Lab lightness of the display image, rescaled by 1/100.

template <class S>
inline Var<S> gray_l_op(const Var<S>& x) {
    const auto& sh = x.value().shape;
    if (sh.rank != 4 || sh[1] != 3) throw DomainError("gray_l_op: expected (N,3,H,W)");
    const int n = sh[0];
    const int64_t hw = int64_t(sh[2]) * sh[3];
    Tensor<S> y(Shape{n, 1, sh[2], sh[3]});
    for (int ni = 0; ni < n; ++ni)
        for (int64_t i = 0; i < hw; ++i) {
            const int64_t base = int64_t(ni) * 3 * hw;
            S yy = 0;
            for (int c = 0; c < 3; ++c) {
                const S disp = (x.value().data[base + c * hw + i] + S(1)) * S(0.5);
                yy += S(color::kM[1][c]) * color::srgb_to_linear(disp);
            }
            const S l01 = S(1.16) * color::lab_f(yy) - S(0.16);
            y.data[int64_t(ni) * hw + i] = S(2) * l01 - S(1);
        }
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [n, hw](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        const auto& xv = nd.inputs[0]->value;
        Tensor<S> dx(xv.shape);
        for (int ni = 0; ni < n; ++ni)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t base = int64_t(ni) * 3 * hw;
                S yy = 0;
                S disp[3];
                for (int c = 0; c < 3; ++c) {
                    disp[c] = (xv.data[base + c * hw + i] + S(1)) * S(0.5);
                    yy += S(color::kM[1][c]) * color::srgb_to_linear(disp[c]);
                }
                const S outer = nd.grad.data[int64_t(ni) * hw + i] * S(1.16) * color::lab_f_d(yy);
                for (int c = 0; c < 3; ++c)
                    dx.data[base + c * hw + i] =
                        outer * S(color::kM[1][c]) * color::srgb_to_linear_d(disp[c]);
            }
        nd.inputs[0]->accumulate(dx.data);
    }));
}

}  // namespace dgp
