#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "dgp/errors.hpp"
#include "dgp/rng.hpp"

namespace dgp {

// Dense shape, rank <= 4. Conventions used throughout:
//   rank 1: (n)           vectors (latents, per-channel params)
//   rank 2: (rows, cols)  matrices (weights, embeddings, batched features)
//   rank 4: (N, C, H, W)  image batches, conv weights as (Co, Ci, kh, kw)
struct Shape {
    std::array<int, 4> d{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<int> dims) {
        rank = int(dims.size());
        if (rank > 4) throw DomainError("Shape: rank > 4");
        int i = 0;
        for (int v : dims) d[i++] = v;
    }

    int operator[](int i) const { return d[i]; }
    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= d[i];
        return n;
    }
    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (d[i] != o.d[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < rank; ++i) s += std::to_string(d[i]) + (i + 1 < rank ? "," : "");
        return s + ")";
    }
};

// Flat row-major dense tensor over an Eigen array.
template <class S>
struct Tensor {
    using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

    Shape shape;
    Array data;

    Tensor() = default;
    explicit Tensor(Shape sh) : shape(sh), data(Array::Zero(sh.numel())) {}
    Tensor(Shape sh, S fill) : shape(sh), data(Array::Constant(sh.numel(), fill)) {}

    static Tensor zeros(Shape sh) { return Tensor(sh); }
    static Tensor full(Shape sh, S v) { return Tensor(sh, v); }
    static Tensor scalar(S v) { return Tensor(Shape{1}, v); }

    static Tensor randn(Shape sh, Rng& rng, S stddev = S(1)) {
        Tensor t(sh);
        for (int64_t i = 0; i < t.data.size(); ++i) t.data[i] = S(rng.normal()) * stddev;
        return t;
    }

    int64_t numel() const { return data.size(); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    S& operator[](int64_t i) { return data[i]; }
    S operator[](int64_t i) const { return data[i]; }

    // NCHW indexing (rank 4 only).
    S& at(int n, int c, int h, int w) {
        return data[((int64_t(n) * shape.d[1] + c) * shape.d[2] + h) * shape.d[3] + w];
    }
    S at(int n, int c, int h, int w) const {
        return data[((int64_t(n) * shape.d[1] + c) * shape.d[2] + h) * shape.d[3] + w];
    }

    // Row-major matrix view of a rank-2 tensor (or (rows,cols) slab of flat data).
    auto mat(int rows, int cols) {
        return Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), rows, cols);
    }
    auto mat(int rows, int cols) const {
        return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), rows, cols);
    }
    auto mat() { return mat(shape.d[0], shape.rank >= 2 ? shape.d[1] : 1); }
    auto mat() const { return mat(shape.d[0], shape.rank >= 2 ? shape.d[1] : 1); }

    bool all_finite() const { return data.isFinite().all(); }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data = data.template cast<T>();
        return out;
    }

    Tensor reshaped(Shape sh) const {
        if (sh.numel() != numel())
            throw DomainError("reshape: numel mismatch " + shape.str() + " -> " + sh.str());
        Tensor out = *this;
        out.shape = sh;
        return out;
    }
};

template <class S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
    if (a.shape != b.shape)
        throw DomainError(std::string(where) + ": shape mismatch " + a.shape.str() + " vs " +
                          b.shape.str());
}

template <class S>
inline S mean_sq_err(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mean_sq_err");
    return (a.data - b.data).square().mean();
}

template <class S>
inline S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "max_abs_diff");
    if (a.numel() == 0) return S(0);
    return (a.data - b.data).abs().maxCoeff();
}

// [-1,1] model range <-> [0,1] display range.
template <class S>
inline Tensor<S> to_display(const Tensor<S>& x) {
    Tensor<S> y = x;
    y.data = (x.data + S(1)) * S(0.5);
    return y;
}

template <class S>
inline Tensor<S> to_model_range(const Tensor<S>& x) {
    Tensor<S> y = x;
    y.data = x.data * S(2) - S(1);
    return y;
}

template <class S>
inline Tensor<S> clamped(const Tensor<S>& x, S lo, S hi) {
    Tensor<S> y = x;
    y.data = x.data.max(lo).min(hi);
    return y;
}

}  // namespace dgp
