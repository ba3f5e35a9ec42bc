#pragma once

#include <memory>
#include <vector>

#include "dgp/color.hpp"
#include "dgp/lanczos.hpp"

namespace dgp {

enum class DegKind { identity, gray, mask, downsample, perturb_observed, compose };

// A differentiable observation map phi. Public tensor surfaces are
// display-range (C,H,W); the engine path works on model-range batches.
// compose applies children right-to-left: compose([a,b,c])(x) = a(b(c(x))).
template <class S>
struct DegradationTransform {
    DegKind kind = DegKind::identity;
    std::shared_ptr<const Tensor<S>> mask;  // (H,W), {0,1}
    int factor = 1;
    Tensor<S> delta;
    S eps = S(0);
    std::vector<DegradationTransform> children;

    static DegradationTransform identity() { return {}; }
    static DegradationTransform grayscale() {
        DegradationTransform t;
        t.kind = DegKind::gray;
        return t;
    }
    static DegradationTransform masked(Tensor<S> m) {
        validate_mask(m);
        DegradationTransform t;
        t.kind = DegKind::mask;
        t.mask = std::make_shared<Tensor<S>>(std::move(m));
        return t;
    }
    static DegradationTransform downsampled(int f) {
        if (f < 2) throw DomainError("downsample: factor must be >= 2");
        DegradationTransform t;
        t.kind = DegKind::downsample;
        t.factor = f;
        return t;
    }
    static DegradationTransform perturbed(Tensor<S> d, S eps) {
        if (eps < S(0)) throw DomainError("perturb_observed: eps must be >= 0");
        if (d.numel() > 0 && d.data.abs().maxCoeff() > eps + S(1e-6))
            throw DomainError("perturb_observed: |delta| exceeds eps");
        DegradationTransform t;
        t.kind = DegKind::perturb_observed;
        t.delta = std::move(d);
        t.eps = eps;
        return t;
    }
    static DegradationTransform compose(std::vector<DegradationTransform> cs) {
        DegradationTransform t;
        t.kind = DegKind::compose;
        t.children = std::move(cs);
        return t;
    }

    static void validate_mask(const Tensor<S>& m) {
        if (m.shape.rank != 2) throw DomainError("mask: expected (H,W), got " + m.shape.str());
        for (int64_t i = 0; i < m.numel(); ++i)
            if (m.data[i] != S(0) && m.data[i] != S(1))
                throw DomainError("mask: entries must be exactly 0 or 1");
    }

    bool contains_perturb() const {
        if (kind == DegKind::perturb_observed) return true;
        for (const auto& c : children)
            if (c.contains_perturb()) return true;
        return false;
    }

    // Display-range application, (C,H,W) -> observation.
    Tensor<S> apply(const Tensor<S>& x) const {
        switch (kind) {
            case DegKind::identity:
                return x;
            case DegKind::gray: {
                if (x.shape.rank != 3 || x.shape[0] != 3)
                    throw DomainError("gray: expected (3,H,W), got " + x.shape.str());
                Tensor<S> lab = rgb_image_to_lab(x);
                Tensor<S> g(Shape{1, x.shape[1], x.shape[2]});
                g.data = lab.data.segment(0, g.numel());
                return g;
            }
            case DegKind::mask: {
                if (x.shape.rank != 3 || mask->shape != Shape{x.shape[1], x.shape[2]})
                    throw DomainError("mask: shape mismatch, image " + x.shape.str() + " mask " +
                                      mask->shape.str());
                Tensor<S> y = x;
                const int64_t hw = mask->numel();
                for (int c = 0; c < x.shape[0]; ++c)
                    y.data.segment(int64_t(c) * hw, hw) *= mask->data;
                return y;
            }
            case DegKind::downsample:
                return lanczos_downsample_image(x, factor);
            case DegKind::perturb_observed: {
                check_same_shape(x, delta, "perturb_observed");
                Tensor<S> y = x;
                y.data += delta.data;
                y.data = y.data.max(S(0)).min(S(1));
                return y;
            }
            case DegKind::compose: {
                Tensor<S> y = x;
                for (auto it = children.rbegin(); it != children.rend(); ++it) y = it->apply(y);
                return y;
            }
        }
        throw DomainError("unreachable");
    }

    // Model-range autodiff application, (N,C,H,W) -> observation batch.
    // perturb_observed never participates: it is an offline constructor for
    // the observed image, not part of the objective.
    Var<S> apply_var(const Var<S>& x) const {
        switch (kind) {
            case DegKind::identity:
                return x;
            case DegKind::gray:
                return gray_l_op(x);
            case DegKind::mask:
                return mask_affine(x, mask);
            case DegKind::downsample: {
                auto kh = std::make_shared<Tensor<S>>(
                    lanczos_downsample_matrix<S>(x.value().shape[2], factor));
                auto kw = std::make_shared<Tensor<S>>(
                    lanczos_downsample_matrix<S>(x.value().shape[3], factor));
                return resample_hw(x, std::shared_ptr<const Tensor<S>>(kh),
                                   std::shared_ptr<const Tensor<S>>(kw));
            }
            case DegKind::perturb_observed:
                throw ConfigError("perturb_observed cannot appear inside the objective");
            case DegKind::compose: {
                Var<S> y = x;
                for (auto it = children.rbegin(); it != children.rend(); ++it)
                    y = it->apply_var(y);
                return y;
            }
        }
        throw DomainError("unreachable");
    }

    // Lift an observation-space batch back into discriminator input space
    // (N,3,res,res): gray replicates channels, downsample Lanczos-upsamples,
    // mask is already same-shape. Lifts are applied innermost-last so a
    // composed observation unwinds in reverse.
    Var<S> lift_var(const Var<S>& obs, int res) const {
        switch (kind) {
            case DegKind::identity:
            case DegKind::mask:
            case DegKind::perturb_observed:
                return obs;
            case DegKind::gray:
                return replicate_channels(obs, 3);
            case DegKind::downsample: {
                const int h = obs.value().shape[2], w = obs.value().shape[3];
                auto kh = std::make_shared<Tensor<S>>(lanczos_upsample_matrix<S>(h, factor));
                auto kw = std::make_shared<Tensor<S>>(lanczos_upsample_matrix<S>(w, factor));
                return resample_hw(obs, std::shared_ptr<const Tensor<S>>(kh),
                                   std::shared_ptr<const Tensor<S>>(kw));
            }
            case DegKind::compose: {
                Var<S> y = obs;
                for (const auto& c : children) y = c.lift_var(y, res);
                return y;
            }
        }
        throw DomainError("unreachable");
    }
};

// ---------------------------------------------------------------------------
// Free-function forms of the individual transforms.

template <class S>
inline Tensor<S> gray(const Tensor<S>& x) {
    return DegradationTransform<S>::grayscale().apply(x);
}

template <class S>
inline Tensor<S> mask_apply(const Tensor<S>& x, const Tensor<S>& m) {
    return DegradationTransform<S>::masked(m).apply(x);
}

template <class S>
inline Tensor<S> lanczos_downsample(const Tensor<S>& x, int f) {
    return DegradationTransform<S>::downsampled(f).apply(x);
}

template <class S>
inline Tensor<S> perturb_observed(const Tensor<S>& x, const Tensor<S>& delta, S eps) {
    return DegradationTransform<S>::perturbed(delta, eps).apply(x);
}

}  // namespace dgp
