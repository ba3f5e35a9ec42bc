#pragma once

#include <cmath>
#include <memory>

#include "dgp/tensor.hpp"

namespace dgp {

namespace detail {

template <class S>
inline S lanczos3(S t) {
    constexpr double a = 3.0;
    const double x = double(t);
    if (x == 0.0) return S(1);
    if (std::abs(x) >= a) return S(0);
    const double pix = 3.14159265358979323846 * x;
    return S(a * std::sin(pix) * std::sin(pix / a) / (pix * pix));
}

// Half-sample symmetric reflection into [0, n).
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace detail

// 1-D Lanczos-3 operators as dense (out x in) matrices, reflect padding,
// rows renormalized to sum to one. Applying the downsample matrix to a
// constant signal therefore reproduces the constant exactly.
template <class S>
inline Tensor<S> lanczos_downsample_matrix(int in, int factor) {
    if (factor < 2) throw DomainError("lanczos: factor must be >= 2");
    if (in % factor != 0)
        throw DomainError("lanczos: factor " + std::to_string(factor) + " does not divide " +
                          std::to_string(in));
    const int out = in / factor;
    Tensor<S> k(Shape{out, in});
    const double support = 3.0 * factor;
    for (int j = 0; j < out; ++j) {
        const double center = (j + 0.5) * factor - 0.5;
        const int lo = int(std::floor(center - support)) + 1;
        const int hi = int(std::ceil(center + support)) - 1;
        S wsum = 0;
        for (int i = lo; i <= hi; ++i) {
            const S w = detail::lanczos3(S((i - center) / factor));
            if (w == S(0)) continue;
            k.data[int64_t(j) * in + detail::reflect_index(i, in)] += w;
            wsum += w;
        }
        for (int i = 0; i < in; ++i) k.data[int64_t(j) * in + i] /= wsum;
    }
    return k;
}

template <class S>
inline Tensor<S> lanczos_upsample_matrix(int in, int factor) {
    if (factor < 2) throw DomainError("lanczos: factor must be >= 2");
    const int out = in * factor;
    Tensor<S> k(Shape{out, in});
    for (int j = 0; j < out; ++j) {
        const double center = (j + 0.5) / factor - 0.5;
        const int lo = int(std::floor(center)) - 2;
        const int hi = int(std::floor(center)) + 3;
        S wsum = 0;
        for (int i = lo; i <= hi; ++i) {
            const S w = detail::lanczos3(S(i - center));
            if (w == S(0)) continue;
            k.data[int64_t(j) * in + detail::reflect_index(i, in)] += w;
            wsum += w;
        }
        for (int i = 0; i < in; ++i) k.data[int64_t(j) * in + i] /= wsum;
    }
    return k;
}

// Plain (C,H,W) -> (C,H/f,W/f) downsample for file-domain use.
template <class S>
inline Tensor<S> lanczos_downsample_image(const Tensor<S>& x, int factor) {
    if (x.shape.rank != 3) throw DomainError("lanczos_downsample_image: expected (C,H,W)");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor<S> kh = lanczos_downsample_matrix<S>(h, factor);
    Tensor<S> kw = lanczos_downsample_matrix<S>(w, factor);
    const int h2 = h / factor, w2 = w / factor;
    Tensor<S> y(Shape{c, h2, w2});
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(h2, w);
    for (int ci = 0; ci < c; ++ci) {
        auto xin = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            x.ptr() + int64_t(ci) * h * w, h, w);
        auto yout = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            y.ptr() + int64_t(ci) * h2 * w2, h2, w2);
        tmp.noalias() = kh.mat() * xin;
        yout.noalias() = tmp * kw.mat().transpose();
    }
    return y;
}

template <class S>
inline Tensor<S> lanczos_upsample_image(const Tensor<S>& x, int factor) {
    if (x.shape.rank != 3) throw DomainError("lanczos_upsample_image: expected (C,H,W)");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor<S> kh = lanczos_upsample_matrix<S>(h, factor);
    Tensor<S> kw = lanczos_upsample_matrix<S>(w, factor);
    const int h2 = h * factor, w2 = w * factor;
    Tensor<S> y(Shape{c, h2, w2});
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(h2, w);
    for (int ci = 0; ci < c; ++ci) {
        auto xin = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            x.ptr() + int64_t(ci) * h * w, h, w);
        auto yout = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            y.ptr() + int64_t(ci) * h2 * w2, h2, w2);
        tmp.noalias() = kh.mat() * xin;
        yout.noalias() = tmp * kw.mat().transpose();
    }
    return y;
}

}  // namespace dgp
