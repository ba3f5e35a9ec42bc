#include "doctest.h"

#include "dgp/degradations.hpp"
#include "test_util.hpp"

using namespace dgp;
using T = Tensor<double>;
using DT = DegradationTransform<double>;

namespace {

// Reference colorimetric pipeline, written out longhand as the oracle for
// the graying transform.
double oracle_lab_l01(double r, double g, double b) {
    auto lin = [](double u) {
        return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
    };
    const double y = 0.2126729 * lin(r) + 0.7151522 * lin(g) + 0.0721750 * lin(b);
    const double d = 6.0 / 29.0;
    const double fy = y > d * d * d ? std::cbrt(y) : y / (3 * d * d) + 4.0 / 29.0;
    return (116.0 * fy - 16.0) / 100.0;
}

T const_image(int c, int h, int w, double v) { return T::full(Shape{c, h, w}, v); }

}  // namespace

TEST_CASE("gray: endpoints and colorimetric oracle") {
    T black = const_image(3, 4, 4, 0.0);
    T white = const_image(3, 4, 4, 1.0);
    CHECK(gray(black).data.abs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((gray(white).data - 1.0).abs().maxCoeff() < 1e-6);

    T mid = const_image(3, 4, 4, 0.5);
    const double expect = oracle_lab_l01(0.5, 0.5, 0.5);
    CHECK(gray(mid).data[0] == doctest::Approx(expect).epsilon(1e-4));
    CHECK(expect == doctest::Approx(0.53389).epsilon(2e-3));

    Rng rng(3);
    T rnd = T::randn(Shape{3, 5, 5}, rng);
    rnd.data = rnd.data.abs().min(1.0);
    T g = gray(rnd);
    REQUIRE(g.shape == Shape{1, 5, 5});
    for (int i = 0; i < 25; ++i)
        CHECK(g.data[i] ==
              doctest::Approx(oracle_lab_l01(rnd.data[i], rnd.data[25 + i], rnd.data[50 + i]))
                  .epsilon(1e-6));

    CHECK_THROWS_AS(gray(const_image(1, 4, 4, 0.5)), DomainError);
}

TEST_CASE("mask_apply: contracts") {
    Rng rng(4);
    T x = T::randn(Shape{3, 32, 32}, rng);
    x.data = x.data.abs() + 0.01;  // strictly positive so zeros are countable

    T ones = T::full(Shape{32, 32}, 1.0);
    CHECK(max_abs_diff(mask_apply(x, ones), x) == 0.0);

    T zeros(Shape{32, 32});
    CHECK(mask_apply(x, zeros).data.abs().maxCoeff() == 0.0);

    T box = T::full(Shape{32, 32}, 1.0);
    for (int i = 12; i < 20; ++i)
        for (int j = 12; j < 20; ++j) box.data[i * 32 + j] = 0.0;
    T masked = mask_apply(x, box);
    int zero_count = 0;
    for (int64_t i = 0; i < masked.numel(); ++i)
        if (masked.data[i] == 0.0) ++zero_count;
    CHECK(zero_count == 64 * 3);

    T bad = T::full(Shape{32, 32}, 1.0);
    bad.data[5] = 0.5;
    CHECK_THROWS_AS(mask_apply(x, bad), DomainError);
    CHECK_THROWS_AS(mask_apply(x, T::full(Shape{16, 32}, 1.0)), DomainError);
}

TEST_CASE("lanczos_downsample: partition of unity and impulse oracle") {
    T c = const_image(3, 16, 16, 0.37);
    T down = lanczos_downsample(c, 2);
    REQUIRE(down.shape == Shape{3, 8, 8});
    CHECK((down.data - 0.37).abs().maxCoeff() < 1e-12);

    // Brute-force 2-D convolution oracle with reflect padding and joint
    // window normalization.
    const int h = 16, w = 16, f = 2;
    T impulse(Shape{1, h, w});
    impulse.data[5 * w + 9] = 1.0;
    T got = lanczos_downsample(impulse, f);
    auto lanc = [](double t) {
        if (t == 0) return 1.0;
        if (std::abs(t) >= 3.0) return 0.0;
        const double p = 3.14159265358979323846 * t;
        return 3.0 * std::sin(p) * std::sin(p / 3.0) / (p * p);
    };
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };
    for (int oy = 0; oy < h / f; ++oy)
        for (int ox = 0; ox < w / f; ++ox) {
            const double cy = (oy + 0.5) * f - 0.5, cx = (ox + 0.5) * f - 0.5;
            double acc = 0, wsum = 0;
            for (int iy = int(cy) - 3 * f; iy <= int(cy) + 3 * f; ++iy)
                for (int ix = int(cx) - 3 * f; ix <= int(cx) + 3 * f; ++ix) {
                    const double wt = lanc((iy - cy) / f) * lanc((ix - cx) / f);
                    if (wt == 0) continue;
                    acc += wt * impulse.data[reflect(iy, h) * w + reflect(ix, w)];
                    wsum += wt;
                }
            CHECK(got.data[oy * (w / f) + ox] == doctest::Approx(acc / wsum).epsilon(1e-6));
        }

    CHECK_THROWS_AS(lanczos_downsample(const_image(3, 32, 32, 0.1), 3), DomainError);
    CHECK_THROWS_AS(DT::downsampled(1), DomainError);
}

TEST_CASE("perturb_observed: clipping contract") {
    Rng rng(5);
    T x(Shape{3, 6, 6});
    for (int64_t i = 0; i < x.numel(); ++i) x.data[i] = rng.uniform();

    T zero(x.shape);
    CHECK(max_abs_diff(perturb_observed(x, zero, 0.1), x) == 0.0);

    T delta(x.shape);
    for (int64_t i = 0; i < delta.numel(); ++i) delta.data[i] = rng.uniform(-0.05, 0.05);
    T y = perturb_observed(x, delta, 0.05);
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(y.data[i] >= 0.0);
        CHECK(y.data[i] <= 1.0);
        CHECK(std::abs(y.data[i] - x.data[i]) <= 0.05 + 1e-12);
    }
    CHECK_THROWS_AS(perturb_observed(x, delta, -0.1), DomainError);
    T big = T::full(x.shape, 0.2);
    CHECK_THROWS_AS(perturb_observed(x, big, 0.05), DomainError);
}

TEST_CASE("compose: identity and associativity") {
    Rng rng(6);
    T x(Shape{3, 16, 16});
    for (int64_t i = 0; i < x.numel(); ++i) x.data[i] = rng.uniform();

    auto ident = DT::compose({DT::identity()});
    CHECK(max_abs_diff(ident.apply(x), x) == 0.0);

    T m = T::full(Shape{16, 16}, 1.0);
    for (int i = 0; i < 6; ++i) m.data[34 + i] = 0.0;
    auto a = DT::grayscale();
    auto b = DT::masked(m);
    auto c = DT::downsampled(2);
    auto nested = DT::compose({a, DT::compose({b, c})});
    auto flat = DT::compose({a, b, c});
    CHECK(max_abs_diff(nested.apply(x), flat.apply(x)) == 0.0);
    // right-to-left order: downsample runs first, so gray sees 8x8
    CHECK(flat.apply(x).shape == Shape{1, 8, 8});
}

TEST_CASE("degradations: gradient of every differentiable transform") {
    Rng rng(7);
    T x = T::randn(Shape{1, 3, 8, 8}, rng, 0.4);

    T m = T::full(Shape{8, 8}, 1.0);
    for (int i = 20; i < 28; ++i) m.data[i] = 0.0;

    std::vector<DT> phis = {DT::identity(), DT::grayscale(), DT::masked(m), DT::downsampled(2),
                            DT::compose({DT::downsampled(2), DT::masked(m), DT::grayscale()})};
    for (auto& phi : phis) {
        auto build = [&](const Var<double>& v) {
            auto obs = phi.apply_var(v);
            auto tgt = Var<double>::leaf(Tensor<double>(obs.value().shape));
            return mean_sq_diff(obs, tgt);
        };
        Var<double> xv = Var<double>::leaf(x, true);
        auto loss = build(xv);
        backward(loss);
        auto f = [&](const T& probe) { return build(Var<double>::leaf(probe)).scalar(); };
        const double frac = testutil::gradient_match_fraction(f, x, xv.grad(), 1e-3, 1e-3);
        CHECK(frac >= 0.95);
    }
    CHECK_THROWS_AS(DT::perturbed(T(Shape{1, 3, 8, 8}), 0.1).apply_var(Var<double>::leaf(x)),
                    ConfigError);
}
