#include "doctest.h"

#include "dgp/adam.hpp"
#include "dgp/ops_spatial.hpp"
#include "test_util.hpp"

using namespace dgp;
using T = Tensor<double>;
using V = Var<double>;

namespace {

// Builds the graph twice: once to read the analytic gradient, then per
// finite-difference probe.
void check_grad(const std::function<V(const V&)>& build, Shape in_shape, uint64_t seed,
                double min_frac = 1.0, double step = 1e-4) {
    Rng rng(seed);
    T x = T::randn(in_shape, rng);
    V xv = V::leaf(x, true);
    V y = build(xv);
    REQUIRE(y.value().numel() == 1);
    backward(y);
    auto f = [&](const T& probe) { return build(V::leaf(probe)).scalar(); };
    const double frac = testutil::gradient_match_fraction(f, x, xv.grad(), step, 1e-5);
    CHECK(frac >= min_frac);
}

}  // namespace

TEST_CASE("autodiff: elementwise and dense op gradients") {
    Rng aux(99);
    T b = T::randn(Shape{3, 5}, aux);
    V bv = V::leaf(b);

    check_grad([&](const V& x) { return sum(mul(x, bv)); }, Shape{3, 5}, 1);
    check_grad([&](const V& x) { return mean(add(x, bv)); }, Shape{3, 5}, 2);
    check_grad([&](const V& x) { return sum(sub(x, bv)); }, Shape{3, 5}, 3);
    check_grad([&](const V& x) { return sum(tanh_op(x)); }, Shape{3, 5}, 4);
    check_grad([&](const V& x) { return sum(relu(add_scalar(x, 0.3))); }, Shape{3, 5}, 5, 0.95);
    check_grad([&](const V& x) { return sum(leaky_relu(x, 0.2)); }, Shape{3, 5}, 6, 0.95);
    check_grad([&](const V& x) { return sum_squares(mul_scalar(x, 1.7)); }, Shape{4}, 7);
    check_grad([&](const V& x) { return mean_sq_diff(x, bv); }, Shape{3, 5}, 8);
    check_grad([&](const V& x) { return mean_abs_diff(x, bv); }, Shape{3, 5}, 9, 0.95);

    T w = T::randn(Shape{5, 4}, aux);
    V wv = V::leaf(w);
    check_grad([&](const V& x) { return sum(matmul(x, wv)); }, Shape{3, 5}, 10);
    check_grad([&](const V& x) { return sum(matmul(V::leaf(b), reshape(x, Shape{5, 4}))); },
               Shape{20}, 11);
    T bias = T::randn(Shape{5}, aux);
    check_grad([&](const V& x) { return sum_squares(add_row_bias(x, V::leaf(bias, false))); },
               Shape{3, 5}, 12);
    check_grad([&](const V& x) { return sum(mul(concat_cols(x, bv), concat_cols(bv, x))); },
               Shape{3, 5}, 13);
    check_grad([&](const V& x) { return sum_squares(rows_dot(x, bv)); }, Shape{3, 5}, 14);
    check_grad([&](const V& x) { return sum(embedding_rows(x, {0, 2, 2, 1})); }, Shape{3, 4}, 15);
    check_grad([&](const V& x) { return sum(tile_rows(x, 5)); }, Shape{4}, 16);
    check_grad(
        [&](const V& x) {
            auto s1 = sum(x);
            auto s2 = sum_squares(x);
            return weighted_sum<double>({s1, s2}, {0.7, -0.3});
        },
        Shape{6}, 17);
}

TEST_CASE("autodiff: spatial op gradients") {
    Rng aux(123);
    check_grad([&](const V& x) { return sum_squares(upsample_nearest2(x)); }, Shape{2, 3, 4, 4}, 21);
    check_grad([&](const V& x) { return sum_squares(avg_pool2(x)); }, Shape{2, 3, 4, 4}, 22);
    check_grad([&](const V& x) { return sum_squares(global_sum_pool(x)); }, Shape{2, 3, 4, 4}, 23);
    check_grad([&](const V& x) { return sum(replicate_channels(x, 3)); }, Shape{2, 1, 4, 4}, 24);

    std::shared_ptr<const Tensor<double>> m;
    {
        auto mm = std::make_shared<Tensor<double>>(Shape{4, 4});
        for (int i = 0; i < 16; ++i) mm->data[i] = (i % 3 == 0) ? 0.0 : 1.0;
        m = mm;
    }
    check_grad([&](const V& x) { return sum_squares(mask_affine(x, m)); }, Shape{2, 3, 4, 4}, 25);

    std::shared_ptr<const Tensor<double>> kh = std::make_shared<Tensor<double>>(T::randn(Shape{2, 4}, aux));
    std::shared_ptr<const Tensor<double>> kw = std::make_shared<Tensor<double>>(T::randn(Shape{3, 4}, aux));
    check_grad([&](const V& x) { return sum_squares(resample_hw(x, kh, kw)); }, Shape{2, 2, 4, 4},
               26);

    T g2 = T::randn(Shape{2, 3}, aux);
    T b2 = T::randn(Shape{2, 3}, aux);
    check_grad(
        [&](const V& x) { return sum_squares(channel_affine(x, V::leaf(g2), V::leaf(b2))); },
        Shape{2, 3, 4, 4}, 27);
    // affine params as differentiation targets
    check_grad(
        [&](const V& g) {
            Rng r(5);
            return sum_squares(channel_affine(V::leaf(T::randn(Shape{2, 3, 4, 4}, r)), g,
                                              V::leaf(b2)));
        },
        Shape{2, 3}, 28);
}

TEST_CASE("autodiff: conv2d gradients (input, weight, bias)") {
    Rng aux(31);
    T w3 = T::randn(Shape{4, 3, 3, 3}, aux, 0.5);
    T w1 = T::randn(Shape{2, 3, 1, 1}, aux, 0.5);
    T bias = T::randn(Shape{4}, aux);
    check_grad(
        [&](const V& x) { return sum_squares(conv2d(x, V::leaf(w3), V::leaf(bias))); },
        Shape{2, 3, 5, 5}, 32);
    check_grad(
        [&](const V& w) {
            Rng r(6);
            return sum_squares(conv2d(V::leaf(T::randn(Shape{2, 3, 5, 5}, r)), w, V::leaf(bias)));
        },
        Shape{4, 3, 3, 3}, 33);
    check_grad(
        [&](const V& b) {
            Rng r(7);
            return sum_squares(conv2d(V::leaf(T::randn(Shape{2, 3, 5, 5}, r)), V::leaf(w3), b));
        },
        Shape{4}, 34);
    check_grad(
        [&](const V& x) {
            return sum_squares(conv2d(x, V::leaf(w1), V::leaf(T(Shape{2}))));
        },
        Shape{2, 3, 5, 5}, 35);
}

TEST_CASE("autodiff: normalization gradients") {
    Rng aux(41);
    T g2 = T::randn(Shape{2, 3}, aux, 0.3);
    g2.data += 1.0;
    T b2 = T::randn(Shape{2, 3}, aux);
    T rm(Shape{3}), rv = T::full(Shape{3}, 1.0);

    check_grad(
        [&](const V& x) {
            Tensor<double> rm2 = rm, rv2 = rv;
            return sum_squares(
                batch_norm_train(x, V::leaf(g2), V::leaf(b2), rm2, rv2, 0.1, 1e-4));
        },
        Shape{2, 3, 4, 4}, 42, 1.0, 1e-5);
    check_grad(
        [&](const V& g) {
            Rng r(8);
            Tensor<double> rm2 = rm, rv2 = rv;
            return sum_squares(batch_norm_train(V::leaf(T::randn(Shape{2, 3, 4, 4}, r)), g,
                                                V::leaf(b2), rm2, rv2, 0.1, 1e-4));
        },
        Shape{2, 3}, 43);
    check_grad(
        [&](const V& x) {
            return sum_squares(batch_norm_eval(x, V::leaf(g2), V::leaf(b2), rm, rv, 1e-4));
        },
        Shape{2, 3, 4, 4}, 44);
    T sc = T::randn(Shape{3}, aux, 0.3);
    sc.data += 1.0;
    T sh = T::randn(Shape{3}, aux);
    check_grad(
        [&](const V& x) {
            return sum_squares(instance_norm(x, V::leaf(sc), V::leaf(sh), 1e-4));
        },
        Shape{2, 3, 4, 4}, 45, 1.0, 1e-5);
    check_grad(
        [&](const V& s) {
            Rng r(9);
            return sum_squares(instance_norm(V::leaf(T::randn(Shape{2, 3, 4, 4}, r)), s,
                                             V::leaf(sh), 1e-4));
        },
        Shape{3}, 46);
}

TEST_CASE("autodiff: running statistics update in train mode") {
    Rng rng(77);
    T x = T::randn(Shape{4, 2, 3, 3}, rng);
    T g = T::full(Shape{4, 2}, 1.0), b(Shape{4, 2});
    T rm(Shape{2}), rv = T::full(Shape{2}, 1.0);
    batch_norm_train(V::leaf(x), V::leaf(g), V::leaf(b), rm, rv, 0.5, 1e-5);
    // channel means of x
    for (int c = 0; c < 2; ++c) {
        double s = 0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 9; ++i) s += x.data[(n * 2 + c) * 9 + i];
        CHECK(rm.data[c] == doctest::Approx(0.5 * s / 36.0).epsilon(1e-9));
    }
    CHECK(rv.data[0] != 1.0);
}

TEST_CASE("autodiff: parameter accumulation and reuse") {
    Rng rng(55);
    Parameter<double> p("p", T::randn(Shape{3}, rng));
    V a = V::from_param(p);
    V loss = add(sum_squares(a), sum(a));  // same leaf used twice
    backward(loss);
    for (int i = 0; i < 3; ++i)
        CHECK(p.grad.data[i] == doctest::Approx(2.0 * p.value.data[i] + 1.0));

    p.zero_grad();
    p.requires_grad = false;
    V a2 = V::from_param(p);
    V loss2 = sum_squares(a2);
    backward(loss2);
    CHECK(p.grad.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("adam: zero gradient is a fixed point") {
    Parameter<double> p("p", T::full(Shape{4}, 2.0));
    Adam<double> opt({&p}, 0.1);
    opt.zero_grad();
    opt.step();
    for (int i = 0; i < 4; ++i) CHECK(p.value.data[i] == 2.0);
}
