#pragma once

#include <vector>

#include "dgp/autodiff.hpp"

namespace dgp {

// Adaptive moment estimation over a set of parameters. One slot per
// parameter; state is created fresh when the optimizer is constructed
// (the reconstruction engine rebuilds it at every stage boundary).
template <class S>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Parameter<S>*> params, S lr, S beta1 = S(0), S beta2 = S(0.999),
         S eps = S(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    void set_lr(S lr) { lr_ = lr; }
    S lr() const { return lr_; }
    const std::vector<Parameter<S>*>& params() const { return params_; }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const S c1 = S(1) - std::pow(beta1_, S(t_));
        const S c2 = S(1) - std::pow(beta2_, S(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            m_[i].data = beta1_ * m_[i].data + (S(1) - beta1_) * p.grad.data;
            v_[i].data = beta2_ * v_[i].data + (S(1) - beta2_) * p.grad.data.square();
            p.value.data -= lr_ * (m_[i].data / c1) / ((v_[i].data / c2).sqrt() + eps_);
        }
    }

    // Moment access for resumable training checkpoints.
    std::vector<Tensor<S>>& m() { return m_; }
    std::vector<Tensor<S>>& v() { return v_; }
    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    std::vector<Parameter<S>*> params_;
    std::vector<Tensor<S>> m_, v_;
    S lr_ = S(1e-4), beta1_ = S(0), beta2_ = S(0.999), eps_ = S(1e-8);
    int64_t t_ = 0;
};

// Plain single-tensor Adam for the latent vector.
template <class S>
class AdamVec {
public:
    AdamVec() = default;
    AdamVec(Shape sh, S lr, S beta1 = S(0), S beta2 = S(0.999), S eps = S(1e-8))
        : m_(sh), v_(sh), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Tensor<S>& value, const Tensor<S>& grad) {
        ++t_;
        const S c1 = S(1) - std::pow(beta1_, S(t_));
        const S c2 = S(1) - std::pow(beta2_, S(t_));
        m_.data = beta1_ * m_.data + (S(1) - beta1_) * grad.data;
        v_.data = beta2_ * v_.data + (S(1) - beta2_) * grad.data.square();
        value.data -= lr_ * (m_.data / c1) / ((v_.data / c2).sqrt() + eps_);
    }

private:
    Tensor<S> m_, v_;
    S lr_ = S(1e-3), beta1_ = S(0), beta2_ = S(0.999), eps_ = S(1e-8);
    int64_t t_ = 0;
};

}  // namespace dgp
