#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dgp/checkpoint.hpp"
#include "test_util.hpp"

using namespace dgp;
namespace fs = std::filesystem;

namespace {

ArchConfig arch_b4() {
    ArchConfig a;
    a.resolution = 32;
    a.blocks = 4;
    a.classes = 10;
    a.latent_dim = 64;
    a.embed_dim = 16;
    a.base_channels = 4;
    a.channel_mult = {4, 4, 2, 1};
    a.d_base_channels = 4;
    a.d_channel_mult = {1, 2, 2};
    return a;
}

fs::path tmp_dir() {
    fs::path p = fs::temp_directory_path() / "dgp_gan_core_test";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("build_pair: resolution ladder and configuration errors") {
    auto pair = build_pair<float>(arch_b4(), 1);
    CHECK(pair.g.config().blocks == 4);
    Rng rng(2);
    Tensor<float> z = Tensor<float>::randn(Shape{64}, rng);
    Tensor<float> img = generate(pair.g, z, 0);
    CHECK(img.shape == Shape{3, 32, 32});

    ArchConfig bad = arch_b4();
    bad.blocks = 3;  // 4*2^2 = 16 != 32: ladder needs three ups plus the stem
    bad.channel_mult = {4, 2, 1};
    CHECK_THROWS_AS(build_pair<float>(bad, 1), ConfigError);
    bad.blocks = 2;
    bad.channel_mult = {2, 1};
    CHECK_THROWS_AS(build_pair<float>(bad, 1), ConfigError);

    ArchConfig bad2 = arch_b4();
    bad2.resolution = 48;  // not a power of two
    CHECK_THROWS_AS(build_pair<float>(bad2, 1), ConfigError);
    ArchConfig bad3 = arch_b4();
    bad3.latent_dim = 4;
    CHECK_THROWS_AS(build_pair<float>(bad3, 1), ConfigError);
    ArchConfig bad4 = arch_b4();
    bad4.classes = 1;
    CHECK_THROWS_AS(build_pair<float>(bad4, 1), ConfigError);

    // parameter count by independent enumeration
    int64_t expect = 0;
    for (auto* p : pair.g.all_params())
        if (p->trainable) expect += p->value.numel();
    CHECK(parameter_count(pair.g.all_params()) == expect);
    CHECK(expect > 10000);
}

TEST_CASE("generate: determinism, range, class conditioning, input validation") {
    auto pair = build_pair<float>(arch_b4(), 7);
    Rng rng(3);
    Tensor<float> z = Tensor<float>::randn(Shape{64}, rng);

    Tensor<float> a = generate(pair.g, z, 0);
    Tensor<float> b = generate(pair.g, z, 0);
    CHECK(max_abs_diff(a, b) == 0.0f);
    CHECK(a.data.maxCoeff() <= 1.0f);
    CHECK(a.data.minCoeff() >= -1.0f);

    Tensor<float> zero_z(Shape{64});
    Tensor<float> c1 = generate(pair.g, zero_z, 0);
    Tensor<float> c2 = generate(pair.g, zero_z, 0);
    CHECK(max_abs_diff(c1, c2) == 0.0f);

    Tensor<float> y0 = generate(pair.g, z, 0);
    Tensor<float> y1 = generate(pair.g, z, 1);
    CHECK(max_abs_diff(y0, y1) > 0.0f);

    CHECK_THROWS_AS(generate(pair.g, Tensor<float>(Shape{32}), 0), DomainError);
    CHECK_THROWS_AS(generate(pair.g, z, 10), DomainError);
    CHECK_THROWS_AS(generate(pair.g, z, -1), DomainError);
}

TEST_CASE("discriminator_features: taps contract and batch isolation") {
    auto pair = build_pair<float>(arch_b4(), 9);
    Rng rng(4);
    Tensor<float> x = Tensor<float>::randn(Shape{3, 32, 32}, rng, 0.3f);

    CHECK(discriminator_features(pair.d, x, {}).empty());

    const int k = pair.d.feature_blocks();
    auto feats = discriminator_features(pair.d, x, all_taps(k));
    REQUIRE(int(feats.size()) == k);
    for (int i = 1; i < k; ++i) CHECK(feats[size_t(i)].shape[2] < feats[size_t(i - 1)].shape[2]);

    CHECK_THROWS_AS(discriminator_features(pair.d, x, {k + 1}), DomainError);
    CHECK_THROWS_AS(discriminator_features(pair.d, x, {0}), DomainError);

    // evaluation-mode statistics only: features of x do not depend on what
    // else is in the batch
    Tensor<float> other = Tensor<float>::randn(Shape{3, 32, 32}, rng, 0.3f);
    Tensor<float> batch(Shape{2, 3, 32, 32});
    batch.data.segment(0, x.numel()) = x.data;
    batch.data.segment(x.numel(), other.numel()) = other.data;
    auto batched = pair.d.features(Var<float>::leaf(batch), all_taps(k));
    for (int i = 0; i < k; ++i) {
        const auto& fb = batched[size_t(i)].value();
        const int64_t per = fb.numel() / 2;
        Tensor<float> first(feats[size_t(i)].shape);
        first.data = fb.data.segment(0, per);
        CHECK(max_abs_diff(first, feats[size_t(i)]) == 0.0f);
    }

    Tensor<float> nan_img = x;
    nan_img.data[0] = std::nanf("");
    CHECK_THROWS_AS(discriminator_features(pair.d, nan_img, all_taps(k)), DomainError);
}

TEST_CASE("generator: eval-mode batch isolation") {
    auto pair = build_pair<float>(arch_b4(), 21);
    Rng rng(6);
    Tensor<float> z1 = Tensor<float>::randn(Shape{64}, rng);
    Tensor<float> z2 = Tensor<float>::randn(Shape{64}, rng);
    Tensor<float> solo = generate(pair.g, z1, 2);

    Tensor<float> zb(Shape{2, 64});
    zb.data.segment(0, 64) = z1.data;
    zb.data.segment(64, 64) = z2.data;
    Tensor<float> batch = pair.g.forward(Var<float>::leaf(zb), {2, 5}).value();
    Tensor<float> first(Shape{3, 32, 32});
    first.data = batch.data.segment(0, solo.numel());
    CHECK(max_abs_diff(first, solo) == 0.0f);
}

TEST_CASE("generate: gradient w.r.t. z matches finite differences") {
    Rng rng(8);
    auto pair = testutil::micro_pair<double>(12);
    Tensor<double> z = Tensor<double>::randn(Shape{8}, rng);
    Tensor<double> proj =
        Tensor<double>::randn(Shape{1, 3, 8, 8}, rng);  // random scalar projection

    auto build = [&](const Var<double>& zv) {
        auto img = pair.g.forward(reshape(zv, Shape{1, 8}), {1});
        return sum(mul(img, Var<double>::leaf(proj)));
    };
    Var<double> zv = Var<double>::leaf(z, true);
    auto s = build(zv);
    backward(s);
    auto f = [&](const Tensor<double>& probe) { return build(Var<double>::leaf(probe)).scalar(); };
    const double frac = testutil::gradient_match_fraction(f, z, zv.grad(), 1e-3, 1e-3);
    CHECK(frac >= 0.95);
}

TEST_CASE("checkpoint: round trip, descriptor mismatch, corruption") {
    fs::path dir = tmp_dir();
    const std::string path = (dir / "pair.ckpt").string();

    auto pair = build_pair<float>(arch_b4(), 33);
    Rng rng(5);
    Tensor<float> z = Tensor<float>::randn(Shape{64}, rng);
    Tensor<float> before = generate(pair.g, z, 3);
    save_checkpoint(path, pair.g, pair.d, {33, 123});

    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.meta.seed == 33);
    CHECK(loaded.meta.iterations == 123);
    CHECK(loaded.arch == arch_b4());
    // parameter maps equal element-wise
    auto lhs = pair.g.all_params();
    auto rhs = loaded.pair.g.all_params();
    REQUIRE(lhs.size() == rhs.size());
    for (size_t i = 0; i < lhs.size(); ++i) {
        CHECK(lhs[i]->name == rhs[i]->name);
        CHECK(max_abs_diff(lhs[i]->value, rhs[i]->value) == 0.0f);
    }
    Tensor<float> after = generate(loaded.pair.g, z, 3);
    CHECK(max_abs_diff(before, after) == 0.0f);

    // descriptor mismatch carries both descriptors in the message
    ArchConfig other = arch_b4();
    other.classes = 5;
    try {
        load_checkpoint<float>(path, &other);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("C=10") != std::string::npos);
        CHECK(msg.find("C=5") != std::string::npos);
    }

    // corrupted archive -> integrity error, not a crash
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char junk = 0x5a;
        f.write(&junk, 1);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
}

TEST_CASE("discriminator features: golden snapshot") {
    auto pair = build_pair<float>(testutil::small_arch(), 1234);
    Rng rng(4321);
    Tensor<float> x = Tensor<float>::randn(Shape{3, 32, 32}, rng, 0.5f);
    auto feats = discriminator_features(pair.d, x, all_taps(pair.d.feature_blocks()));

    const fs::path golden = fs::path(DGP_TEST_DATA_DIR) / "golden_d_features.txt";
    if (!fs::exists(golden)) {
        std::ofstream out(golden);
        out.precision(9);
        for (const auto& f : feats) {
            for (int i = 0; i < 8; ++i) out << f.data[i] << " ";
            out << f.data.abs().mean() << "\n";
        }
        MESSAGE("golden snapshot created; rerun to verify");
        return;
    }
    std::ifstream in(golden);
    for (const auto& f : feats) {
        for (int i = 0; i < 8; ++i) {
            double expect;
            in >> expect;
            CHECK(f.data[i] == doctest::Approx(expect).epsilon(1e-5));
        }
        double mean_abs;
        in >> mean_abs;
        CHECK(double(f.data.abs().mean()) == doctest::Approx(mean_abs).epsilon(1e-5));
    }
}
