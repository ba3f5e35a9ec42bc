#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dgp/tensor.hpp"

namespace dgp {

// A named, persistent model tensor. `trainable` is false for buffers
// (e.g. normalization running statistics); `requires_grad` is what the
// optimization stages toggle to freeze/unfreeze parameter groups.
template <class S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool trainable = true;
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<S> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape), trainable(train),
          requires_grad(train) {}

    bool active() const { return trainable && requires_grad; }
    void zero_grad() { grad.data.setZero(); }
};

template <class S>
struct Node;

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

// One tape entry. `backward` pulls this node's grad and pushes into inputs.
template <class S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<NodePtr<S>> inputs;
    std::function<void(Node<S>&)> backward;
    Parameter<S>* param = nullptr;

    void accumulate(const typename Tensor<S>::Array& g) {
        if (!has_grad) {
            grad = Tensor<S>(value.shape);
            has_grad = true;
        }
        grad.data += g;
    }
};

template <class S>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<S> n) : node(std::move(n)) {}

    static Var leaf(Tensor<S> v, bool needs_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(v);
        n->needs_grad = needs_grad;
        return Var(std::move(n));
    }

    static Var from_param(Parameter<S>& p) {
        auto n = std::make_shared<Node<S>>();
        n->value = p.value;
        n->needs_grad = p.active();
        n->param = &p;
        return Var(std::move(n));
    }

    const Tensor<S>& value() const { return node->value; }
    const Tensor<S>& grad() const { return node->grad; }
    bool needs_grad() const { return node && node->needs_grad; }
    S scalar() const { return node->value.data[0]; }

    NodePtr<S> node;
};

namespace detail {

template <class S>
inline NodePtr<S> make_op(Tensor<S> value, std::vector<NodePtr<S>> inputs,
                          std::function<void(Node<S>&)> backward) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    for (const auto& in : inputs)
        if (in->needs_grad) n->needs_grad = true;
    if (n->needs_grad) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
    }
    return n;
}

}  // namespace detail

// Reverse sweep from a scalar root. Parameter gradients are accumulated into
// their Parameter::grad at the end, so a parameter used several times in one
// graph sums naturally.
template <class S>
inline void backward(const Var<S>& root) {
    if (root.value().numel() != 1) throw DomainError("backward: root must be scalar");
    if (!root.node->needs_grad) return;

    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.push_back({root.node.get(), 0});
    seen.insert(root.node.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->inputs.size()) {
            Node<S>* in = n->inputs[i++].get();
            if (in->needs_grad && !seen.count(in)) {
                seen.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node->accumulate(Tensor<S>::Array::Ones(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward && n->has_grad) n->backward(*n);
    }
    for (Node<S>* n : order)
        if (n->param && n->has_grad && n->param->active()) n->param->grad.data += n->grad.data;
}

// ---------------------------------------------------------------------------
// Elementwise and dense ops.

template <class S>
inline Var<S> add(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "add");
    Tensor<S> y = a.value();
    y.data += b.value().data;
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.grad.data);
    }));
}

template <class S>
inline Var<S> sub(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "sub");
    Tensor<S> y = a.value();
    y.data -= b.value().data;
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(-n.grad.data);
    }));
}

template <class S>
inline Var<S> mul(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "mul");
    Tensor<S> y = a.value();
    y.data *= b.value().data;
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data * n.inputs[1]->value.data);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.grad.data * n.inputs[0]->value.data);
    }));
}

template <class S>
inline Var<S> mul_scalar(const Var<S>& a, S c) {
    Tensor<S> y = a.value();
    y.data *= c;
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [c](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data * c);
    }));
}

template <class S>
inline Var<S> add_scalar(const Var<S>& a, S c) {
    Tensor<S> y = a.value();
    y.data += c;
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data);
    }));
}

template <class S>
inline Var<S> relu(const Var<S>& a) {
    Tensor<S> y = a.value();
    y.data = y.data.max(S(0));
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (!n.inputs[0]->needs_grad) return;
        const auto& x = n.inputs[0]->value.data;
        n.inputs[0]->accumulate(n.grad.data * (x > S(0)).template cast<S>());
    }));
}

template <class S>
inline Var<S> leaky_relu(const Var<S>& a, S slope) {
    Tensor<S> y = a.value();
    y.data = y.data.max(y.data * slope);
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [slope](Node<S>& n) {
        if (!n.inputs[0]->needs_grad) return;
        const auto& x = n.inputs[0]->value.data;
        n.inputs[0]->accumulate(n.grad.data *
                                (x > S(0)).select(Tensor<S>::Array::Ones(x.size()),
                                                  Tensor<S>::Array::Constant(x.size(), slope)));
    }));
}

template <class S>
inline Var<S> tanh_op(const Var<S>& a) {
    Tensor<S> y = a.value();
    y.data = y.data.tanh();
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad)
            n.inputs[0]->accumulate(n.grad.data * (S(1) - n.value.data.square()));
    }));
}

template <class S>
inline Var<S> reshape(const Var<S>& a, Shape sh) {
    Tensor<S> y = a.value().reshaped(sh);
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.data);
    }));
}

// (N,F1) ++ (N,F2) -> (N, F1+F2)
template <class S>
inline Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
    const int n = a.value().shape[0], fa = a.value().shape[1], fb = b.value().shape[1];
    if (b.value().shape[0] != n) throw DomainError("concat_cols: row mismatch");
    Tensor<S> y(Shape{n, fa + fb});
    y.mat().leftCols(fa) = a.value().mat();
    y.mat().rightCols(fb) = b.value().mat();
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [n, fa, fb](Node<S>& n_) {
        auto g = n_.grad.mat(n, fa + fb);
        if (n_.inputs[0]->needs_grad) {
            Tensor<S> da(Shape{n, fa});
            da.mat() = g.leftCols(fa);
            n_.inputs[0]->accumulate(da.data);
        }
        if (n_.inputs[1]->needs_grad) {
            Tensor<S> db(Shape{n, fb});
            db.mat() = g.rightCols(fb);
            n_.inputs[1]->accumulate(db.data);
        }
    }));
}

// (N,K) x (K,M) -> (N,M)
template <class S>
inline Var<S> matmul(const Var<S>& x, const Var<S>& w) {
    const int n = x.value().shape[0], k = x.value().shape[1], m = w.value().shape[1];
    if (w.value().shape[0] != k) throw DomainError("matmul: inner dim mismatch");
    Tensor<S> y(Shape{n, m});
    y.mat().noalias() = x.value().mat() * w.value().mat();
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, w.node}, [n, k, m](Node<S>& nd) {
        auto g = nd.grad.mat(n, m);
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> dx(Shape{n, k});
            dx.mat().noalias() = g * nd.inputs[1]->value.mat(k, m).transpose();
            nd.inputs[0]->accumulate(dx.data);
        }
        if (nd.inputs[1]->needs_grad) {
            Tensor<S> dw(Shape{k, m});
            dw.mat().noalias() = nd.inputs[0]->value.mat(n, k).transpose() * g;
            nd.inputs[1]->accumulate(dw.data);
        }
    }));
}

// x (N,M) + b (M) broadcast over rows.
template <class S>
inline Var<S> add_row_bias(const Var<S>& x, const Var<S>& b) {
    const int n = x.value().shape[0], m = x.value().shape[1];
    if (b.value().numel() != m) throw DomainError("add_row_bias: width mismatch");
    Tensor<S> y = x.value();
    y.mat().rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.value().ptr(), m);
    return Var<S>(detail::make_op<S>(std::move(y), {x.node, b.node}, [n, m](Node<S>& nd) {
        if (nd.inputs[0]->needs_grad) nd.inputs[0]->accumulate(nd.grad.data);
        if (nd.inputs[1]->needs_grad) {
            Tensor<S> db(Shape{m});
            db.data = nd.grad.mat(n, m).colwise().sum().transpose().array();
            nd.inputs[1]->accumulate(db.data);
        }
    }));
}

// Gather rows of a (C,E) table -> (N,E).
template <class S>
inline Var<S> embedding_rows(const Var<S>& table, std::vector<int> idx) {
    const int c = table.value().shape[0], e = table.value().shape[1];
    const int n = int(idx.size());
    for (int i : idx)
        if (i < 0 || i >= c) throw DomainError("embedding_rows: index out of range");
    Tensor<S> y(Shape{n, e});
    for (int r = 0; r < n; ++r) y.mat().row(r) = table.value().mat(c, e).row(idx[r]);
    return Var<S>(
        detail::make_op<S>(std::move(y), {table.node}, [idx = std::move(idx), c, e, n](Node<S>& nd) {
            if (!nd.inputs[0]->needs_grad) return;
            Tensor<S> dt(Shape{c, e});
            for (int r = 0; r < n; ++r) dt.mat().row(idx[r]) += nd.grad.mat(n, e).row(r);
            nd.inputs[0]->accumulate(dt.data);
        }));
}

// Per-row dot product of two (N,F) matrices -> (N).
template <class S>
inline Var<S> rows_dot(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "rows_dot");
    const int n = a.value().shape[0], f = a.value().shape[1];
    Tensor<S> y(Shape{n});
    y.data = (a.value().mat() .array() * b.value().mat().array()).rowwise().sum();
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [n, f](Node<S>& nd) {
        auto g = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(nd.grad.ptr(), n);
        if (nd.inputs[0]->needs_grad) {
            Tensor<S> da(Shape{n, f});
            da.mat() = nd.inputs[1]->value.mat(n, f).array().colwise() * g.array();
            nd.inputs[0]->accumulate(da.data);
        }
        if (nd.inputs[1]->needs_grad) {
            Tensor<S> db(Shape{n, f});
            db.mat() = nd.inputs[0]->value.mat(n, f).array().colwise() * g.array();
            nd.inputs[1]->accumulate(db.data);
        }
    }));
}

// ---------------------------------------------------------------------------
// Reductions.

template <class S>
inline Var<S> sum(const Var<S>& a) {
    Tensor<S> y = Tensor<S>::scalar(a.value().data.sum());
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (!n.inputs[0]->needs_grad) return;
        const S g = n.grad.data[0];
        n.inputs[0]->accumulate(Tensor<S>::Array::Constant(n.inputs[0]->value.numel(), g));
    }));
}

template <class S>
inline Var<S> mean(const Var<S>& a) {
    const S inv = S(1) / S(a.value().numel());
    Tensor<S> y = Tensor<S>::scalar(a.value().data.sum() * inv);
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [inv](Node<S>& n) {
        if (!n.inputs[0]->needs_grad) return;
        const S g = n.grad.data[0] * inv;
        n.inputs[0]->accumulate(Tensor<S>::Array::Constant(n.inputs[0]->value.numel(), g));
    }));
}

template <class S>
inline Var<S> sum_squares(const Var<S>& a) {
    Tensor<S> y = Tensor<S>::scalar(a.value().data.square().sum());
    return Var<S>(detail::make_op<S>(std::move(y), {a.node}, [](Node<S>& n) {
        if (!n.inputs[0]->needs_grad) return;
        const S g = n.grad.data[0];
        n.inputs[0]->accumulate(S(2) * g * n.inputs[0]->value.data);
    }));
}

template <class S>
inline Var<S> mean_sq_diff(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "mean_sq_diff");
    const S inv = S(1) / S(a.value().numel());
    Tensor<S> y = Tensor<S>::scalar((a.value().data - b.value().data).square().sum() * inv);
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [inv](Node<S>& n) {
        const S g = n.grad.data[0];
        auto diff = (n.inputs[0]->value.data - n.inputs[1]->value.data) * (S(2) * inv * g);
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(diff);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(-diff);
    }));
}

template <class S>
inline Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.value(), b.value(), "mean_abs_diff");
    const S inv = S(1) / S(a.value().numel());
    Tensor<S> y = Tensor<S>::scalar((a.value().data - b.value().data).abs().sum() * inv);
    return Var<S>(detail::make_op<S>(std::move(y), {a.node, b.node}, [inv](Node<S>& n) {
        const S g = n.grad.data[0];
        auto s = (n.inputs[0]->value.data - n.inputs[1]->value.data).sign() * (inv * g);
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(s);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(-s);
    }));
}

// y = sum_i coeff[i] * scalar_var[i]
template <class S>
inline Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<S>& coeff) {
    if (terms.empty() || terms.size() != coeff.size())
        throw DomainError("weighted_sum: bad term list");
    S total = 0;
    std::vector<NodePtr<S>> nodes;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].value().numel() != 1) throw DomainError("weighted_sum: non-scalar term");
        total += coeff[i] * terms[i].value().data[0];
        nodes.push_back(terms[i].node);
    }
    return Var<S>(detail::make_op<S>(Tensor<S>::scalar(total), std::move(nodes),
                                     [coeff](Node<S>& n) {
                                         const S g = n.grad.data[0];
                                         for (size_t i = 0; i < n.inputs.size(); ++i)
                                             if (n.inputs[i]->needs_grad)
                                                 n.inputs[i]->accumulate(
                                                     Tensor<S>::Array::Constant(1, coeff[i] * g));
                                     }));
}

}  // namespace dgp
