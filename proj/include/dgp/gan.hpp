#pragma once

#include <set>
#include <string>
#include <vector>

#include "dgp/nn.hpp"

namespace dgp {

// Architecture descriptor. The generator is a ladder of B resolution blocks:
// block 1 is the latent projection producing a 4x4 map, blocks 2..B each
// double the resolution, so resolution == 4 * 2^(B-1). The deepest block also
// owns the output head (BN -> ReLU -> 3x3 conv -> tanh).
struct ArchConfig {
    int resolution = 64;
    int blocks = 5;
    int classes = 10;
    int latent_dim = 64;
    int embed_dim = 32;
    int base_channels = 8;
    std::vector<int> channel_mult = {8, 8, 4, 2, 1};
    int d_base_channels = 12;
    std::vector<int> d_channel_mult = {2, 3, 4, 4};

    int width(int block) const { return base_channels * channel_mult[size_t(block)]; }
    int d_blocks() const {
        int k = 0, r = resolution;
        while (r > 4) {
            r /= 2;
            ++k;
        }
        return k;
    }

    void validate() const {
        if (latent_dim < 8) throw ConfigError("arch: latent_dim must be >= 8");
        if (blocks < 3) throw ConfigError("arch: blocks must be >= 3");
        if (classes < 2) throw ConfigError("arch: classes must be >= 2");
        if (resolution < 32 || (resolution & (resolution - 1)) != 0)
            throw ConfigError("arch: resolution must be a power of two >= 32");
        const int need = 4 << (blocks - 1);
        if (need != resolution)
            throw ConfigError("arch: ladder mismatch, " + std::to_string(blocks) +
                              " blocks (stem plus " + std::to_string(blocks - 1) +
                              " upsamplings) produce " + std::to_string(need) + "x" +
                              std::to_string(need) + " but resolution is " +
                              std::to_string(resolution));
        if (int(channel_mult.size()) != blocks)
            throw ConfigError("arch: channel_mult must list one multiplier per block");
        if (int(d_channel_mult.size()) != d_blocks())
            throw ConfigError("arch: d_channel_mult must list one multiplier per D block");
        if (embed_dim < 1 || base_channels < 1 || d_base_channels < 1)
            throw ConfigError("arch: channel/embedding sizes must be positive");
    }

    bool operator==(const ArchConfig& o) const {
        return resolution == o.resolution && blocks == o.blocks && classes == o.classes &&
               latent_dim == o.latent_dim && embed_dim == o.embed_dim &&
               base_channels == o.base_channels && channel_mult == o.channel_mult &&
               d_base_channels == o.d_base_channels && d_channel_mult == o.d_channel_mult;
    }
    bool operator!=(const ArchConfig& o) const { return !(*this == o); }

    std::string str() const {
        return "{res=" + std::to_string(resolution) + ", B=" + std::to_string(blocks) +
               ", C=" + std::to_string(classes) + ", d=" + std::to_string(latent_dim) +
               ", e=" + std::to_string(embed_dim) + ", ch=" + std::to_string(base_channels) + "}";
    }
};

template <class S>
struct GeneratorForwardOpts {
    bool train_norm = false;
    std::vector<SwapInit<S>>* capture = nullptr;
};

// Residual up-block: BN -> ReLU -> up2 -> conv3 -> BN -> ReLU -> conv3, with
// an up2 -> conv1 shortcut.
template <class S>
struct GenBlock {
    CondBN<S> bn1;
    Conv<S> c1;
    CondBN<S> bn2;
    Conv<S> c2;
    Conv<S> sc;

    GenBlock() = default;
    GenBlock(const std::string& name, int embed_dim, int cin, int cout, Rng& rng)
        : bn1(name + ".bn1", embed_dim, cin, rng),
          c1(name + ".c1", cin, cout, 3, rng),
          bn2(name + ".bn2", embed_dim, cout, rng),
          c2(name + ".c2", cout, cout, 3, rng),
          sc(name + ".sc", cin, cout, 1, rng) {}

    Var<S> forward(const Var<S>& x, const Var<S>& e, NormMode mode, const NormOpts<S>& opts) {
        Var<S> h = bn1.forward(x, e, mode, opts);
        h = relu(h);
        h = upsample_nearest2(h);
        h = c1.forward(h);
        h = bn2.forward(h, e, mode, opts);
        h = relu(h);
        h = c2.forward(h);
        Var<S> skip = sc.forward(upsample_nearest2(x));
        return add(h, skip);
    }

    void collect(std::vector<Parameter<S>*>& out) {
        bn1.collect(out);
        c1.collect(out);
        bn2.collect(out);
        c2.collect(out);
        sc.collect(out);
    }
    void apply_swap(const SwapInit<S>& a, const SwapInit<S>& b) {
        bn1.apply_swap(a);
        bn2.apply_swap(b);
    }
};

template <class S>
class Generator {
public:
    Generator() = default;

    Generator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
        embed_ = Parameter<S>("g.embed",
                              Tensor<S>::randn(Shape{cfg.classes, cfg.embed_dim}, rng, S(0.25)));
        const int w0 = cfg.width(0);
        stem_ = Linear<S>("g.stem", cfg.latent_dim + cfg.embed_dim, w0 * 16, rng,
                          S(std::sqrt(1.0 / (cfg.latent_dim + cfg.embed_dim))));
        for (int b = 1; b < cfg.blocks; ++b)
            blocks_.emplace_back("g.b" + std::to_string(b + 1), cfg.embed_dim, cfg.width(b - 1),
                                 cfg.width(b), rng);
        head_bn_ = PlainBN<S>("g.head.bn", cfg.width(cfg.blocks - 1));
        head_conv_ = Conv<S>("g.head.conv", cfg.width(cfg.blocks - 1), 3, 3, rng);
    }

    const ArchConfig& config() const { return cfg_; }
    NormMode norm_mode() const { return norm_mode_; }
    void set_norm_mode(NormMode m) { norm_mode_ = m; }

    // z (N, latent_dim), labels length N -> (N, 3, H, W) in [-1, 1].
    Var<S> forward(const Var<S>& z, const std::vector<int>& labels,
                   const GeneratorForwardOpts<S>& opts = {}) {
        const int n = z.value().shape[0];
        if (z.value().shape != Shape{n, cfg_.latent_dim})
            throw DomainError("generator: latent must be (N," + std::to_string(cfg_.latent_dim) +
                              "), got " + z.value().shape.str());
        if (int(labels.size()) != n) throw DomainError("generator: label count mismatch");
        for (int y : labels)
            if (y < 0 || y >= cfg_.classes)
                throw DomainError("generator: class index " + std::to_string(y) +
                                  " out of range [0," + std::to_string(cfg_.classes) + ")");
        NormOpts<S> nopts{opts.train_norm, opts.capture};
        Var<S> e = embedding_rows(Var<S>::from_param(embed_), labels);
        Var<S> h = stem_.forward(concat_cols(z, e));
        h = reshape(h, Shape{n, cfg_.width(0), 4, 4});
        for (auto& blk : blocks_) h = blk.forward(h, e, norm_mode_, nopts);
        h = head_bn_.forward(h, norm_mode_, nopts);
        h = relu(h);
        h = head_conv_.forward(h);
        return tanh_op(h);
    }

    // Parameters of one resolution block, 1-based; the head belongs to the
    // deepest block. The class embedding is a separate group (see
    // embedding_param).
    std::vector<Parameter<S>*> block_params(int block) {
        if (block < 1 || block > cfg_.blocks) throw DomainError("block index out of range");
        std::vector<Parameter<S>*> out;
        if (block == 1) {
            stem_.collect(out);
        } else {
            blocks_[size_t(block - 2)].collect(out);
            if (block == cfg_.blocks) {
                head_bn_.collect(out);
                head_conv_.collect(out);
            }
        }
        return out;
    }

    Parameter<S>& embedding_param() { return embed_; }

    std::vector<Parameter<S>*> all_params() {
        std::vector<Parameter<S>*> out;
        out.push_back(&embed_);
        for (int b = 1; b <= cfg_.blocks; ++b)
            for (auto* p : block_params(b)) out.push_back(p);
        return out;
    }

    // Swap every BN layer for IN initialized from the BN output statistics on
    // (z, y); the network output on that input is unchanged.
    void swap_to_instance_norm(const Tensor<S>& z, int y) {
        if (norm_mode_ != NormMode::batch_running_stats)
            throw StateError("swap_to_instance_norm: generator already swapped");
        std::vector<SwapInit<S>> captured;
        GeneratorForwardOpts<S> opts;
        opts.capture = &captured;
        Var<S> zv = Var<S>::leaf(z.reshaped(Shape{1, cfg_.latent_dim}));
        forward(zv, {y}, opts);
        size_t i = 0;
        for (auto& blk : blocks_) {
            const SwapInit<S>& a = captured.at(i++);
            const SwapInit<S>& b = captured.at(i++);
            blk.apply_swap(a, b);
        }
        head_bn_.apply_swap(captured.at(i++));
        norm_mode_ = NormMode::instance_swapped;
    }

private:
    ArchConfig cfg_;
    Parameter<S> embed_;
    Linear<S> stem_;
    std::vector<GenBlock<S>> blocks_;
    PlainBN<S> head_bn_;
    Conv<S> head_conv_;
    NormMode norm_mode_ = NormMode::batch_running_stats;
};

template <class S>
class Discriminator {
public:
    Discriminator() = default;

    Discriminator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
        const int k = cfg.d_blocks();
        stem_ = Conv<S>("d.stem", 3, cfg.d_base_channels, 3, rng);
        int cin = cfg.d_base_channels;
        for (int b = 0; b < k; ++b) {
            const int cout = cfg.d_base_channels * cfg.d_channel_mult[size_t(b)];
            blocks_.emplace_back("d.b" + std::to_string(b + 1), cin, cout, 3, rng);
            cin = cout;
        }
        head_ = Linear<S>("d.head", cin, 1, rng, S(std::sqrt(1.0 / cin)));
        proj_ = Parameter<S>("d.proj", Tensor<S>::randn(Shape{cfg.classes, cin}, rng, S(0.1)));
    }

    const ArchConfig& config() const { return cfg_; }
    int feature_blocks() const { return int(blocks_.size()); }

    // Per-block feature taps, ordered by block index (1-based taps).
    std::vector<Var<S>> features(const Var<S>& x, const std::set<int>& taps) {
        for (int t : taps)
            if (t < 1 || t > feature_blocks())
                throw DomainError("discriminator: tap index " + std::to_string(t) +
                                  " out of range [1," + std::to_string(feature_blocks()) + "]");
        std::vector<Var<S>> out;
        Var<S> h = run_blocks(x, &out, taps);
        return out;
    }

    // Projection logits, one per sample.
    Var<S> logits(const Var<S>& x, const std::vector<int>& labels) {
        Var<S> h = run_blocks(x, nullptr, {});
        Var<S> p = global_sum_pool(h);
        Var<S> lin = reshape(head_.forward(p), Shape{int(labels.size())});
        Var<S> e = embedding_rows(Var<S>::from_param(proj_), labels);
        return add(lin, rows_dot(p, e));
    }

    std::vector<Parameter<S>*> all_params() {
        std::vector<Parameter<S>*> out;
        stem_.collect(out);
        for (auto& b : blocks_) b.collect(out);
        head_.collect(out);
        out.push_back(&proj_);
        return out;
    }

private:
    Var<S> run_blocks(const Var<S>& x, std::vector<Var<S>>* taps_out, const std::set<int>& taps) {
        const int h = x.value().shape[2], w = x.value().shape[3];
        if (x.value().shape[1] != 3 || h != cfg_.resolution || w != cfg_.resolution)
            throw DomainError("discriminator: input must be (N,3," +
                              std::to_string(cfg_.resolution) + "," +
                              std::to_string(cfg_.resolution) + "), got " + x.value().shape.str());
        Var<S> hvar = stem_.forward(x);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            hvar = avg_pool2(leaky_relu(blocks_[b].forward(hvar), S(0.2)));
            if (taps_out && taps.count(int(b) + 1)) taps_out->push_back(hvar);
        }
        return hvar;
    }

    ArchConfig cfg_;
    Conv<S> stem_;
    std::vector<Conv<S>> blocks_;
    Linear<S> head_;
    Parameter<S> proj_;
};

template <class S>
struct GanPair {
    Generator<S> g;
    Discriminator<S> d;
};

// Randomly initialized generator/discriminator pair.
template <class S>
inline GanPair<S> build_pair(const ArchConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "build_pair"));
    GanPair<S> pair;
    pair.g = Generator<S>(cfg, rng);
    pair.d = Discriminator<S>(cfg, rng);
    return pair;
}

inline std::set<int> all_taps(int k) {
    std::set<int> s;
    for (int i = 1; i <= k; ++i) s.insert(i);
    return s;
}

// Deterministic sample: z (latent_dim), class y -> (3,H,W) in [-1,1].
template <class S>
inline Tensor<S> generate(Generator<S>& g, const Tensor<S>& z, int y) {
    if (z.numel() != g.config().latent_dim)
        throw DomainError("generate: latent length " + std::to_string(z.numel()) + " != " +
                          std::to_string(g.config().latent_dim));
    Var<S> zv = Var<S>::leaf(z.reshaped(Shape{1, g.config().latent_dim}));
    Tensor<S> img = g.forward(zv, {y}).value();
    return img.reshaped(Shape{3, g.config().resolution, g.config().resolution});
}

// Evaluation-mode feature taps on a single image (3,H,W).
template <class S>
inline std::vector<Tensor<S>> discriminator_features(Discriminator<S>& d, const Tensor<S>& x,
                                                     const std::set<int>& taps) {
    if (!x.data.isFinite().all()) throw DomainError("discriminator_features: non-finite input");
    Var<S> xv = Var<S>::leaf(x.reshaped(Shape{1, 3, x.shape[1], x.shape[2]}));
    std::vector<Tensor<S>> out;
    for (auto& f : d.features(xv, taps)) out.push_back(f.value());
    return out;
}

// Number of learnable parameters (buffers excluded).
template <class S>
inline int64_t parameter_count(std::vector<Parameter<S>*> params) {
    int64_t n = 0;
    for (auto* p : params)
        if (p->trainable) n += p->value.numel();
    return n;
}

}  // namespace dgp
