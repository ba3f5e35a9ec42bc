#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dgp/ops_spatial.hpp"

namespace dgp {

// (C) -> (N,C), rows identical.
template <class S>
inline Var<S> tile_rows(const Var<S>& v, int n) {
    const int c = int(v.value().numel());
    Tensor<S> y(Shape{n, c});
    for (int r = 0; r < n; ++r) y.mat().row(r) = v.value().data.matrix().transpose();
    return Var<S>(detail::make_op<S>(std::move(y), {v.node}, [n, c](Node<S>& nd) {
        if (!nd.inputs[0]->needs_grad) return;
        Tensor<S> dv(nd.inputs[0]->value.shape);
        dv.data = nd.grad.mat(n, c).colwise().sum().transpose().array();
        nd.inputs[0]->accumulate(dv.data);
    }));
}

enum class NormMode { batch_running_stats, instance_swapped };

// Values captured during a swap forward, one entry per normalization layer.
template <class S>
struct SwapInit {
    Tensor<S> in_scale;  // (C)
    Tensor<S> in_shift;  // (C)
};

template <class S>
struct NormOpts {
    bool train = false;  // batch statistics + running update
    std::vector<SwapInit<S>>* capture = nullptr;
};

template <class S>
struct Linear {
    Parameter<S> w, b;

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng, S stddev)
        : w(name + ".w", Tensor<S>::randn(Shape{in, out}, rng, stddev)),
          b(name + ".b", Tensor<S>(Shape{out})) {}

    Var<S> forward(const Var<S>& x) {
        return add_row_bias(matmul(x, Var<S>::from_param(w)), Var<S>::from_param(b));
    }
    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <class S>
struct Conv {
    Parameter<S> w, b;

    Conv() = default;
    Conv(const std::string& name, int cin, int cout, int k, Rng& rng)
        : w(name + ".w",
            Tensor<S>::randn(Shape{cout, cin, k, k}, rng, S(std::sqrt(2.0 / (cin * k * k))))),
          b(name + ".b", Tensor<S>(Shape{cout})) {}

    Var<S> forward(const Var<S>& x) {
        return conv2d(x, Var<S>::from_param(w), Var<S>::from_param(b));
    }
    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

namespace detail {

template <class S>
inline constexpr S kBnEps = S(1e-4);

// Shared swap logic: given the layer input x (batch 1) and the per-channel
// BN affine y = a*x + b implied by the running statistics, produce IN
// parameters that reproduce the same output on this input. The scale keeps
// the sign of `a` so the identity holds even for negative gains.
template <class S>
inline SwapInit<S> swap_init_from(const Tensor<S>& x, const Tensor<S>& a, const Tensor<S>& b) {
    const int c = x.shape[1];
    const int64_t hw = int64_t(x.shape[2]) * x.shape[3];
    SwapInit<S> init{Tensor<S>(Shape{c}), Tensor<S>(Shape{c})};
    for (int ci = 0; ci < c; ++ci) {
        auto seg = x.data.segment(int64_t(ci) * hw, hw);
        const S mu = seg.mean();
        const S var = (seg - mu).square().sum() / S(hw);
        init.in_scale.data[ci] = a.data[ci] * std::sqrt(var + kBnEps<S>);
        init.in_shift.data[ci] = a.data[ci] * mu + b.data[ci];
    }
    return init;
}

}  // namespace detail

// Class-conditional batch normalization: gain/bias come from a linear map of
// the class embedding (gain = 1 + e*Wg, bias = e*Wb). After a BN->IN swap the
// layer normalizes per instance with plain per-channel affine parameters.
template <class S>
struct CondBN {
    Parameter<S> wg, wb;
    Parameter<S> running_mean, running_var;  // buffers
    Parameter<S> in_scale, in_shift;         // active only when swapped
    int channels = 0;

    CondBN() = default;
    CondBN(const std::string& name, int embed_dim, int c, Rng& rng)
        : wg(name + ".wg", Tensor<S>::randn(Shape{embed_dim, c}, rng, S(0.05))),
          wb(name + ".wb", Tensor<S>::randn(Shape{embed_dim, c}, rng, S(0.05))),
          running_mean(name + ".rm", Tensor<S>(Shape{c}), false),
          running_var(name + ".rv", Tensor<S>::full(Shape{c}, S(1)), false),
          in_scale(name + ".ins", Tensor<S>::full(Shape{c}, S(1)), false),
          in_shift(name + ".int", Tensor<S>(Shape{c}), false),
          channels(c) {}

    Var<S> forward(const Var<S>& x, const Var<S>& e, NormMode mode, const NormOpts<S>& opts) {
        if (mode == NormMode::instance_swapped)
            return instance_norm(x, Var<S>::from_param(in_scale), Var<S>::from_param(in_shift),
                                 detail::kBnEps<S>);
        const int n = x.value().shape[0];
        Var<S> gain = add_scalar(matmul(e, Var<S>::from_param(wg)), S(1));
        Var<S> bias = matmul(e, Var<S>::from_param(wb));
        if (opts.capture) {
            Tensor<S> a(Shape{channels}), b(Shape{channels});
            for (int c = 0; c < channels; ++c) {
                const S is = S(1) / std::sqrt(running_var.value.data[c] + detail::kBnEps<S>);
                a.data[c] = gain.value().data[c] * is;
                b.data[c] = bias.value().data[c] - gain.value().data[c] * running_mean.value.data[c] * is;
            }
            opts.capture->push_back(detail::swap_init_from(x.value(), a, b));
        }
        if (opts.train)
            return batch_norm_train(x, gain, bias, running_mean.value, running_var.value,
                                    S(0.05), detail::kBnEps<S>);
        return batch_norm_eval(x, gain, bias, running_mean.value, running_var.value,
                               detail::kBnEps<S>);
    }

    void apply_swap(const SwapInit<S>& init) {
        in_scale.value = init.in_scale;
        in_shift.value = init.in_shift;
        in_scale.trainable = true;
        in_shift.trainable = true;
        wg.trainable = false;
        wb.trainable = false;
    }

    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&wg);
        out.push_back(&wb);
        out.push_back(&running_mean);
        out.push_back(&running_var);
        out.push_back(&in_scale);
        out.push_back(&in_shift);
    }
};

// Unconditional batch norm for the output head, same swap behaviour.
template <class S>
struct PlainBN {
    Parameter<S> gamma, beta;
    Parameter<S> running_mean, running_var;
    Parameter<S> in_scale, in_shift;
    int channels = 0;

    PlainBN() = default;
    PlainBN(const std::string& name, int c)
        : gamma(name + ".g", Tensor<S>::full(Shape{c}, S(1))),
          beta(name + ".b", Tensor<S>(Shape{c})),
          running_mean(name + ".rm", Tensor<S>(Shape{c}), false),
          running_var(name + ".rv", Tensor<S>::full(Shape{c}, S(1)), false),
          in_scale(name + ".ins", Tensor<S>::full(Shape{c}, S(1)), false),
          in_shift(name + ".int", Tensor<S>(Shape{c}), false),
          channels(c) {}

    Var<S> forward(const Var<S>& x, NormMode mode, const NormOpts<S>& opts) {
        if (mode == NormMode::instance_swapped)
            return instance_norm(x, Var<S>::from_param(in_scale), Var<S>::from_param(in_shift),
                                 detail::kBnEps<S>);
        const int n = x.value().shape[0];
        Var<S> gain = tile_rows(Var<S>::from_param(gamma), n);
        Var<S> bias = tile_rows(Var<S>::from_param(beta), n);
        if (opts.capture) {
            Tensor<S> a(Shape{channels}), b(Shape{channels});
            for (int c = 0; c < channels; ++c) {
                const S is = S(1) / std::sqrt(running_var.value.data[c] + detail::kBnEps<S>);
                a.data[c] = gamma.value.data[c] * is;
                b.data[c] = beta.value.data[c] - gamma.value.data[c] * running_mean.value.data[c] * is;
            }
            opts.capture->push_back(detail::swap_init_from(x.value(), a, b));
        }
        if (opts.train)
            return batch_norm_train(x, gain, bias, running_mean.value, running_var.value,
                                    S(0.05), detail::kBnEps<S>);
        return batch_norm_eval(x, gain, bias, running_mean.value, running_var.value,
                               detail::kBnEps<S>);
    }

    void apply_swap(const SwapInit<S>& init) {
        in_scale.value = init.in_scale;
        in_shift.value = init.in_shift;
        in_scale.trainable = true;
        in_shift.trainable = true;
        gamma.trainable = false;
        beta.trainable = false;
    }

    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
        out.push_back(&running_mean);
        out.push_back(&running_var);
        out.push_back(&in_scale);
        out.push_back(&in_shift);
    }
};

}  // namespace dgp
