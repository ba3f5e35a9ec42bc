#pragma once

#include <algorithm>
#include <cstring>
#include <memory>

#include "dgp/autodiff.hpp"

namespace dgp {

namespace detail {

// Single-plane im2col for stride-1 same conv: (C,H,W) sample -> column matrix
// with rows (ci, kh, kw) and columns (oh, ow). Convolutions run one sample at
// a time so a sample's result never depends on what else is in the batch.
template <class S>
inline void im2col_plane(const S* x, int c, int h, int w, int k, int pad, Tensor<S>& col) {
    col.data.setZero();
    const int64_t ncols = int64_t(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                S* dst_row = col.ptr() + int64_t((ci * k + kh) * k + kw) * ncols;
                for (int oh = 0; oh < h; ++oh) {
                    const int ih = oh + kh - pad;
                    if (ih < 0 || ih >= h) continue;
                    const int ow0 = std::max(0, pad - kw);
                    const int ow1 = std::min(w, w + pad - kw);
                    if (ow1 <= ow0) continue;
                    const S* src = x + (int64_t(ci) * h + ih) * w + (ow0 + kw - pad);
                    std::memcpy(dst_row + int64_t(oh) * w + ow0, src,
                                size_t(ow1 - ow0) * sizeof(S));
                }
            }
        }
    }
}

template <class S>
inline void col2im_plane_add(const Tensor<S>& col, S* dx, int c, int h, int w, int k, int pad) {
    const int64_t ncols = int64_t(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const S* src_row = col.ptr() + int64_t((ci * k + kh) * k + kw) * ncols;
                for (int oh = 0; oh < h; ++oh) {
                    const int ih = oh + kh - pad;
                    if (ih < 0 || ih >= h) continue;
                    const int ow0 = std::max(0, pad - kw);
                    const int ow1 = std::min(w, w + pad - kw);
                    const S* src = src_row + int64_t(oh) * w;
                    S* dst = dx + (int64_t(ci) * h + ih) * w + (kw - pad);
                    for (int ow = ow0; ow < ow1; ++ow) dst[ow] += src[ow];
                }
            }
        }
    }
}

}  // namespace detail

// Stride-1 same convolution, kernel 1 or 3. x (N,Ci,H,W), w (Co,Ci,k,k), b (Co).
template <class S>
inline Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    const auto& xs = x.value().shape;
    const auto& ws = w.value().shape;
    const int n = xs[0], ci = xs[1], h = xs[2], ww = xs[3];
    const int co = ws[0], k = ws[2];
    if (ws[1] != ci || ws[3] != k || (k != 1 && k != 3))
        throw DomainError("conv2d: bad weight shape " + w.value().shape.str());
    if (b.value().numel() != co) throw DomainError("conv2d: bad bias length");
    const int pad = k / 2;
    const int64_t hw = int64_t(h) * ww;
    const bool keep_col = w.node->needs_grad;

    Tensor<S> cols;  // per-sample column matrices, kept only when dW is needed
    if (keep_col) cols = Tensor<S>(Shape{n, ci * k * k, h, ww});
    Tensor<S> col1(Shape{ci * k * k, int(hw)});
    Tensor<S> y(Shape{n, co, h, ww});
    for (int ni = 0; ni < n; ++ni) {
        detail::im2col_plane(x.value().ptr() + int64_t(ni) * ci * hw, ci, h, ww, k, pad, col1);
        auto out = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            y.ptr() + int64_t(ni) * co * hw, co, hw);
        out.noalias() = w.value().mat(co, ci * k * k) * col1.mat();
        for (int cc = 0; cc < co; ++cc)
            y.data.segment((int64_t(ni) * co + cc) * hw, hw) += b.value().data[cc];
        if (keep_col) cols.data.segment(int64_t(ni) * col1.numel(), col1.numel()) = col1.data;
    }

    auto bw = [cols = keep_col ? std::move(cols) : Tensor<S>(), n, ci, co, h, ww, k,
               pad](Node<S>& nd) {
        const int64_t hw2 = int64_t(h) * ww;
        const int kk = ci * k * k;
        if (nd.inputs[1]->needs_grad) {
            Tensor<S> dw(Shape{co, ci, k, k});
            for (int ni = 0; ni < n; ++ni) {
                auto g = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                                        Eigen::RowMajor>>(
                    nd.grad.ptr() + int64_t(ni) * co * hw2, co, hw2);
                auto col = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                                          Eigen::RowMajor>>(
                    cols.ptr() + int64_t(ni) * kk * hw2, kk, hw2);
                dw.mat(co, kk).noalias() += g * col.transpose();
            }
            nd.inputs[1]->accumulate(dw.data);
        }
        if (nd.inputs[2]->needs_grad) {
            Tensor<S> db(Shape{co});
            for (int ni = 0; ni < n; ++ni)
                for (int cc = 0; cc < co; ++cc)
                    db.data[cc] += nd.grad.data.segment((int64_t(ni) * co + cc) * hw2, hw2).sum();
            nd.inputs[2]->accumulate(db.data);
        }
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> dx(Shape{n, ci, h, ww});
            Tensor<S> dcol(Shape{kk, int(hw2)});
            for (int ni = 0; ni < n; ++ni) {
                auto g = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                                        Eigen::RowMajor>>(
                    nd.grad.ptr() + int64_t(ni) * co * hw2, co, hw2);
                dcol.mat().noalias() = nd.inputs[1]->value.mat(co, kk).transpose() * g;
                detail::col2im_plane_add(dcol, dx.ptr() + int64_t(ni) * ci * hw2, ci, h, ww, k,
                                         pad);
            }
            nd.inputs[0]->accumulate(dx.data);
        }
    };
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, w.node, b.node}, std::move(bw)));
}

template <class S>
inline Var<S> upsample_nearest2(const Var<S>& x) {
    const int n = x.value().shape[0], c = x.value().shape[1], h = x.value().shape[2],
              w = x.value().shape[3];
    Tensor<S> y(Shape{n, c, 2 * h, 2 * w});
    for (int nc = 0; nc < n * c; ++nc) {
        const S* src = x.value().ptr() + int64_t(nc) * h * w;
        S* dst = y.ptr() + int64_t(nc) * 4 * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const S v = src[i * w + j];
                S* d = dst + (2 * i) * 2 * w + 2 * j;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
    }
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [n, c, h, w](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(Shape{n, c, h, w});
        for (int nc = 0; nc < n * c; ++nc) {
            const S* g = nd.grad.ptr() + int64_t(nc) * 4 * h * w;
            S* d = dx.ptr() + int64_t(nc) * h * w;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const S* s = g + (2 * i) * 2 * w + 2 * j;
                    d[i * w + j] = s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                }
        }
        nd.inputs[0]->accumulate(dx.data);
    }));
}

template <class S>
inline Var<S> avg_pool2(const Var<S>& x) {
    const int n = x.value().shape[0], c = x.value().shape[1], h = x.value().shape[2],
              w = x.value().shape[3];
    if (h % 2 || w % 2) throw DomainError("avg_pool2: odd spatial dims");
    Tensor<S> y(Shape{n, c, h / 2, w / 2});
    for (int nc = 0; nc < n * c; ++nc) {
        const S* src = x.value().ptr() + int64_t(nc) * h * w;
        S* dst = y.ptr() + int64_t(nc) * (h / 2) * (w / 2);
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j) {
                const S* s = src + (2 * i) * w + 2 * j;
                dst[i * (w / 2) + j] = (s[0] + s[1] + s[w] + s[w + 1]) * S(0.25);
            }
    }
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [n, c, h, w](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(Shape{n, c, h, w});
        for (int nc = 0; nc < n * c; ++nc) {
            const S* g = nd.grad.ptr() + int64_t(nc) * (h / 2) * (w / 2);
            S* d = dx.ptr() + int64_t(nc) * h * w;
            for (int i = 0; i < h / 2; ++i)
                for (int j = 0; j < w / 2; ++j) {
                    const S v = g[i * (w / 2) + j] * S(0.25);
                    S* t = d + (2 * i) * w + 2 * j;
                    t[0] = v;
                    t[1] = v;
                    t[w] = v;
                    t[w + 1] = v;
                }
        }
        nd.inputs[0]->accumulate(dx.data);
    }));
}

// (N,C,H,W) -> (N,C)
template <class S>
inline Var<S> global_sum_pool(const Var<S>& x) {
    const int n = x.value().shape[0], c = x.value().shape[1];
    const int64_t hw = int64_t(x.value().shape[2]) * x.value().shape[3];
    Tensor<S> y(Shape{n, c});
    for (int i = 0; i < n * c; ++i) y.data[i] = x.value().data.segment(int64_t(i) * hw, hw).sum();
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [n, c, hw](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(nd.inputs[0]->value.shape);
        for (int i = 0; i < n * c; ++i)
            dx.data.segment(int64_t(i) * hw, hw).setConstant(nd.grad.data[i]);
        nd.inputs[0]->accumulate(dx.data);
    }));
}

// Separable fixed linear resampling: per (n,c) plane Y = Kh * X * Kw^T.
template <class S>
inline Var<S> resample_hw(const Var<S>& x, std::shared_ptr<const Tensor<S>> kh,
                          std::shared_ptr<const Tensor<S>> kw) {
    const int n = x.value().shape[0], c = x.value().shape[1], h = x.value().shape[2],
              w = x.value().shape[3];
    const int h2 = kh->shape[0], w2 = kw->shape[0];
    if (kh->shape[1] != h || kw->shape[1] != w)
        throw DomainError("resample_hw: kernel/input size mismatch");
    Tensor<S> y(Shape{n, c, h2, w2});
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(h2, w);
    for (int nc = 0; nc < n * c; ++nc) {
        auto xin = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            x.value().ptr() + int64_t(nc) * h * w, h, w);
        auto yout = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            y.ptr() + int64_t(nc) * h2 * w2, h2, w2);
        tmp.noalias() = kh->mat() * xin;
        yout.noalias() = tmp * kw->mat().transpose();
    }
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [kh, kw, n, c, h, w, h2, w2](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(Shape{n, c, h, w});
        Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(h, w2);
        for (int nc = 0; nc < n * c; ++nc) {
            auto g = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                nd.grad.ptr() + int64_t(nc) * h2 * w2, h2, w2);
            auto d = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                dx.ptr() + int64_t(nc) * h * w, h, w);
            tmp.noalias() = kh->mat().transpose() * g;
            d.noalias() = tmp * kw->mat();
        }
        nd.inputs[0]->accumulate(dx.data);
    }));
}

// (N,1,H,W) -> (N,reps,H,W)
template <class S>
inline Var<S> replicate_channels(const Var<S>& x, int reps) {
    const int n = x.value().shape[0], h = x.value().shape[2], w = x.value().shape[3];
    if (x.value().shape[1] != 1) throw DomainError("replicate_channels: input must be 1-channel");
    const int64_t hw = int64_t(h) * w;
    Tensor<S> y(Shape{n, reps, h, w});
    for (int ni = 0; ni < n; ++ni)
        for (int r = 0; r < reps; ++r)
            y.data.segment((int64_t(ni) * reps + r) * hw, hw) = x.value().data.segment(int64_t(ni) * hw, hw);
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [n, reps, hw](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(nd.inputs[0]->value.shape);
        for (int ni = 0; ni < n; ++ni)
            for (int r = 0; r < reps; ++r)
                dx.data.segment(int64_t(ni) * hw, hw) +=
                    nd.grad.data.segment((int64_t(ni) * reps + r) * hw, hw);
        nd.inputs[0]->accumulate(dx.data);
    }));
}

// Masking in model range: y = m*x + (m-1). Pixels with m=0 become -1 (black in
// display range), pixels with m=1 pass through exactly.
template <class S>
inline Var<S> mask_affine(const Var<S>& x, std::shared_ptr<const Tensor<S>> m) {
    const int n = x.value().shape[0], c = x.value().shape[1], h = x.value().shape[2],
              w = x.value().shape[3];
    if (m->shape != Shape{h, w}) throw DomainError("mask_affine: mask shape mismatch");
    const int64_t hw = int64_t(h) * w;
    Tensor<S> y(x.value().shape);
    for (int nc = 0; nc < n * c; ++nc)
        y.data.segment(int64_t(nc) * hw, hw) =
            m->data * x.value().data.segment(int64_t(nc) * hw, hw) + (m->data - S(1));
    return Var<S>(detail::make_op<S>(std::move(y), {x.node}, [m, n, c, hw](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dx(nd.inputs[0]->value.shape);
        for (int nc = 0; nc < n * c; ++nc)
            dx.data.segment(int64_t(nc) * hw, hw) = m->data * nd.grad.data.segment(int64_t(nc) * hw, hw);
        nd.inputs[0]->accumulate(dx.data);
    }));
}

// Per-sample channel affine: y[n,c,:] = gain[n,c]*x[n,c,:] + bias[n,c].
template <class S>
inline Var<S> channel_affine(const Var<S>& x, const Var<S>& gain, const Var<S>& bias) {
    const int n = x.value().shape[0], c = x.value().shape[1];
    const int64_t hw = int64_t(x.value().shape[2]) * x.value().shape[3];
    if (gain.value().shape != Shape{n, c} || bias.value().shape != Shape{n, c})
        throw DomainError("channel_affine: gain/bias must be (N,C)");
    Tensor<S> y(x.value().shape);
    for (int i = 0; i < n * c; ++i)
        y.data.segment(int64_t(i) * hw, hw) =
            x.value().data.segment(int64_t(i) * hw, hw) * gain.value().data[i] + bias.value().data[i];
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, gain.node, bias.node},
                                     [n, c, hw](Node<S>& nd) {
        const auto& x_ = nd.inputs[0]->value;
        const auto& gain_ = nd.inputs[1]->value;
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> dx(x_.shape);
            for (int i = 0; i < n * c; ++i)
                dx.data.segment(int64_t(i) * hw, hw) =
                    nd.grad.data.segment(int64_t(i) * hw, hw) * gain_.data[i];
            nd.inputs[0]->accumulate(dx.data);
        }
        if (nd.inputs[1]->needs_grad) {
            Tensor<S> dg(Shape{n, c});
            for (int i = 0; i < n * c; ++i)
                dg.data[i] = (nd.grad.data.segment(int64_t(i) * hw, hw) *
                              x_.data.segment(int64_t(i) * hw, hw))
                                 .sum();
            nd.inputs[1]->accumulate(dg.data);
        }
        if (nd.inputs[2]->needs_grad) {
            Tensor<S> db(Shape{n, c});
            for (int i = 0; i < n * c; ++i) db.data[i] = nd.grad.data.segment(int64_t(i) * hw, hw).sum();
            nd.inputs[2]->accumulate(db.data);
        }
    }));
}

// ---------------------------------------------------------------------------
// Normalization.

// Training-mode batch norm over (N,H,W) per channel, with per-sample affine
// (gain/bias are (N,C), produced from the class embedding). Updates the
// running statistic buffers in place as a forward side effect.
template <class S>
inline Var<S> batch_norm_train(const Var<S>& x, const Var<S>& gain, const Var<S>& bias,
                               Tensor<S>& running_mean, Tensor<S>& running_var, S momentum, S eps) {
    const int n = x.value().shape[0], c = x.value().shape[1];
    const int64_t hw = int64_t(x.value().shape[2]) * x.value().shape[3];
    const S invm = S(1) / S(int64_t(n) * hw);

    Tensor<S> mu(Shape{c}), invstd(Shape{c});
    for (int ci = 0; ci < c; ++ci) {
        S s = 0;
        for (int ni = 0; ni < n; ++ni)
            s += x.value().data.segment((int64_t(ni) * c + ci) * hw, hw).sum();
        mu.data[ci] = s * invm;
    }
    for (int ci = 0; ci < c; ++ci) {
        S s = 0;
        for (int ni = 0; ni < n; ++ni)
            s += (x.value().data.segment((int64_t(ni) * c + ci) * hw, hw) - mu.data[ci]).square().sum();
        const S var = s * invm;
        invstd.data[ci] = S(1) / std::sqrt(var + eps);
        running_mean.data[ci] = (S(1) - momentum) * running_mean.data[ci] + momentum * mu.data[ci];
        running_var.data[ci] = (S(1) - momentum) * running_var.data[ci] + momentum * var;
    }

    Tensor<S> y(x.value().shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const int64_t off = (int64_t(ni) * c + ci) * hw;
            y.data.segment(off, hw) =
                (x.value().data.segment(off, hw) - mu.data[ci]) * invstd.data[ci] *
                    gain.value().data[ni * c + ci] +
                bias.value().data[ni * c + ci];
        }

    auto bw = [mu = std::move(mu), invstd = std::move(invstd), n, c, hw, invm](Node<S>& nd) {
        const auto& x_ = nd.inputs[0]->value;
        const auto& gain_ = nd.inputs[1]->value;
        // dgain/dbias
        if (nd.inputs[1]->needs_grad || nd.inputs[2]->needs_grad) {
            Tensor<S> dg(Shape{n, c}), db(Shape{n, c});
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t off = (int64_t(ni) * c + ci) * hw;
                    auto xhat = (x_.data.segment(off, hw) - mu.data[ci]) * invstd.data[ci];
                    dg.data[ni * c + ci] = (nd.grad.data.segment(off, hw) * xhat).sum();
                    db.data[ni * c + ci] = nd.grad.data.segment(off, hw).sum();
                }
            if (nd.inputs[1]->needs_grad) nd.inputs[1]->accumulate(dg.data);
            if (nd.inputs[2]->needs_grad) nd.inputs[2]->accumulate(db.data);
        }
        if (nd.inputs[0]->needs_grad) {
            // t = g*gain (per sample); dx = invstd*(t - mean(t) - xhat*mean(t*xhat))
            Tensor<S> dx(x_.shape);
            for (int ci = 0; ci < c; ++ci) {
                S sum_t = 0, sum_tx = 0;
                for (int ni = 0; ni < n; ++ni) {
                    const int64_t off = (int64_t(ni) * c + ci) * hw;
                    auto t = nd.grad.data.segment(off, hw) * gain_.data[ni * c + ci];
                    auto xhat = (x_.data.segment(off, hw) - mu.data[ci]) * invstd.data[ci];
                    sum_t += t.sum();
                    sum_tx += (t * xhat).sum();
                }
                const S mt = sum_t * invm, mtx = sum_tx * invm;
                for (int ni = 0; ni < n; ++ni) {
                    const int64_t off = (int64_t(ni) * c + ci) * hw;
                    auto t = nd.grad.data.segment(off, hw) * gain_.data[ni * c + ci];
                    auto xhat = (x_.data.segment(off, hw) - mu.data[ci]) * invstd.data[ci];
                    dx.data.segment(off, hw) = invstd.data[ci] * (t - mt - xhat * mtx);
                }
            }
            nd.inputs[0]->accumulate(dx.data);
        }
    };
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, gain.node, bias.node}, std::move(bw)));
}

// Evaluation-mode batch norm: fixed running statistics, per-sample affine.
template <class S>
inline Var<S> batch_norm_eval(const Var<S>& x, const Var<S>& gain, const Var<S>& bias,
                              const Tensor<S>& running_mean, const Tensor<S>& running_var, S eps) {
    const int n = x.value().shape[0], c = x.value().shape[1];
    const int64_t hw = int64_t(x.value().shape[2]) * x.value().shape[3];
    Tensor<S> invstd(Shape{c});
    invstd.data = (running_var.data + eps).sqrt().inverse();
    Tensor<S> mu = running_mean;

    Tensor<S> y(x.value().shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const int64_t off = (int64_t(ni) * c + ci) * hw;
            y.data.segment(off, hw) =
                (x.value().data.segment(off, hw) - mu.data[ci]) * invstd.data[ci] *
                    gain.value().data[ni * c + ci] +
                bias.value().data[ni * c + ci];
        }
    auto bw = [mu = std::move(mu), invstd = std::move(invstd), n, c, hw](Node<S>& nd) {
        const auto& x_ = nd.inputs[0]->value;
        const auto& gain_ = nd.inputs[1]->value;
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> dx(x_.shape);
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t off = (int64_t(ni) * c + ci) * hw;
                    dx.data.segment(off, hw) = nd.grad.data.segment(off, hw) *
                                               (gain_.data[ni * c + ci] * invstd.data[ci]);
                }
            nd.inputs[0]->accumulate(dx.data);
        }
        if (nd.inputs[1]->needs_grad || nd.inputs[2]->needs_grad) {
            Tensor<S> dg(Shape{n, c}), db(Shape{n, c});
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t off = (int64_t(ni) * c + ci) * hw;
                    auto xhat = (x_.data.segment(off, hw) - mu.data[ci]) * invstd.data[ci];
                    dg.data[ni * c + ci] = (nd.grad.data.segment(off, hw) * xhat).sum();
                    db.data[ni * c + ci] = nd.grad.data.segment(off, hw).sum();
                }
            if (nd.inputs[1]->needs_grad) nd.inputs[1]->accumulate(dg.data);
            if (nd.inputs[2]->needs_grad) nd.inputs[2]->accumulate(db.data);
        }
    };
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, gain.node, bias.node}, std::move(bw)));
}

// Instance norm with per-channel affine (scale/shift are (C) parameters).
template <class S>
inline Var<S> instance_norm(const Var<S>& x, const Var<S>& scale, const Var<S>& shift, S eps) {
    const int n = x.value().shape[0], c = x.value().shape[1];
    const int64_t hw = int64_t(x.value().shape[2]) * x.value().shape[3];
    const S invm = S(1) / S(hw);
    Tensor<S> mu(Shape{n, c}), invstd(Shape{n, c});
    for (int i = 0; i < n * c; ++i) {
        auto seg = x.value().data.segment(int64_t(i) * hw, hw);
        mu.data[i] = seg.sum() * invm;
        invstd.data[i] = S(1) / std::sqrt((seg - mu.data[i]).square().sum() * invm + eps);
    }
    Tensor<S> y(x.value().shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const int i = ni * c + ci;
            y.data.segment(int64_t(i) * hw, hw) =
                (x.value().data.segment(int64_t(i) * hw, hw) - mu.data[i]) * invstd.data[i] *
                    scale.value().data[ci] +
                shift.value().data[ci];
        }
    auto bw = [mu = std::move(mu), invstd = std::move(invstd), n, c, hw, invm](Node<S>& nd) {
        const auto& x_ = nd.inputs[0]->value;
        const auto& scale_ = nd.inputs[1]->value;
        if (nd.inputs[1]->needs_grad || nd.inputs[2]->needs_grad) {
            Tensor<S> ds(Shape{c}), dt(Shape{c});
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const int i = ni * c + ci;
                    auto xhat = (x_.data.segment(int64_t(i) * hw, hw) - mu.data[i]) * invstd.data[i];
                    ds.data[ci] += (nd.grad.data.segment(int64_t(i) * hw, hw) * xhat).sum();
                    dt.data[ci] += nd.grad.data.segment(int64_t(i) * hw, hw).sum();
                }
            if (nd.inputs[1]->needs_grad) nd.inputs[1]->accumulate(ds.data);
            if (nd.inputs[2]->needs_grad) nd.inputs[2]->accumulate(dt.data);
        }
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> dx(x_.shape);
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const int i = ni * c + ci;
                    auto g = nd.grad.data.segment(int64_t(i) * hw, hw);
                    auto xhat = (x_.data.segment(int64_t(i) * hw, hw) - mu.data[i]) * invstd.data[i];
                    auto t = g * scale_.data[ci];
                    const S mt = t.sum() * invm;
                    const S mtx = (t * xhat).sum() * invm;
                    dx.data.segment(int64_t(i) * hw, hw) = invstd.data[i] * (t - mt - xhat * mtx);
                }
            nd.inputs[0]->accumulate(dx.data);
        }
    };
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, scale.node, shift.node}, std::move(bw)));
}

}  // namespace dgp
