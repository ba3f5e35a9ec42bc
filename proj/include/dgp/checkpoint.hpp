#pragma once

#include <zlib.h>

#include <cstdio>
#include <map>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgp/gan.hpp"

namespace dgp {

using json = nlohmann::ordered_json;

inline void to_json_arch(json& j, const ArchConfig& a) {
    j = json{{"resolution", a.resolution},
             {"blocks", a.blocks},
             {"classes", a.classes},
             {"latent_dim", a.latent_dim},
             {"embed_dim", a.embed_dim},
             {"base_channels", a.base_channels},
             {"channel_mult", a.channel_mult},
             {"d_base_channels", a.d_base_channels},
             {"d_channel_mult", a.d_channel_mult}};
}

inline ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    a.resolution = j.value("resolution", a.resolution);
    a.blocks = j.value("blocks", a.blocks);
    a.classes = j.value("classes", a.classes);
    a.latent_dim = j.value("latent_dim", a.latent_dim);
    a.embed_dim = j.value("embed_dim", a.embed_dim);
    a.base_channels = j.value("base_channels", a.base_channels);
    if (j.contains("channel_mult")) a.channel_mult = j["channel_mult"].get<std::vector<int>>();
    a.d_base_channels = j.value("d_base_channels", a.d_base_channels);
    if (j.contains("d_channel_mult"))
        a.d_channel_mult = j["d_channel_mult"].get<std::vector<int>>();
    return a;
}

// Named float32 tensor archive: 8-byte magic, JSON manifest, tensor records,
// crc32 trailer. Everything little-endian.
struct Archive {
    json manifest;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

constexpr char kArchiveMagic[8] = {'D', 'G', 'P', 'C', 'K', 'P', 'T', '1'};

struct CrcWriter {
    std::FILE* f;
    uLong crc = crc32(0L, Z_NULL, 0);
    void write(const void* p, size_t n) {
        if (std::fwrite(p, 1, n, f) != n) throw IoError("archive: short write");
        crc = crc32(crc, static_cast<const Bytef*>(p), uInt(n));
    }
    template <class T>
    void write_pod(T v) {
        write(&v, sizeof(T));
    }
};

struct CrcReader {
    std::FILE* f;
    uLong crc = crc32(0L, Z_NULL, 0);
    void read(void* p, size_t n) {
        if (std::fread(p, 1, n, f) != n) throw IoError("archive: truncated file");
        crc = crc32(crc, static_cast<const Bytef*>(p), uInt(n));
    }
    template <class T>
    T read_pod() {
        T v;
        read(&v, sizeof(T));
        return v;
    }
};

}  // namespace detail

inline void save_archive(const std::string& path, const Archive& ar) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                                       &std::fclose);
    if (!fp) throw IoError("archive: cannot open for write: " + path);
    detail::CrcWriter w{fp.get()};
    if (std::fwrite(detail::kArchiveMagic, 1, 8, fp.get()) != 8)
        throw IoError("archive: short write");
    const std::string m = ar.manifest.dump();
    w.write_pod<uint32_t>(uint32_t(m.size()));
    w.write(m.data(), m.size());
    w.write_pod<uint64_t>(uint64_t(ar.tensors.size()));
    for (const auto& [name, t] : ar.tensors) {
        w.write_pod<uint32_t>(uint32_t(name.size()));
        w.write(name.data(), name.size());
        w.write_pod<uint8_t>(uint8_t(t.shape.rank));
        for (int i = 0; i < t.shape.rank; ++i) w.write_pod<uint32_t>(uint32_t(t.shape[i]));
        w.write(t.ptr(), size_t(t.numel()) * sizeof(float));
    }
    const uint32_t crc = uint32_t(w.crc);
    if (std::fwrite(&crc, 1, 4, fp.get()) != 4) throw IoError("archive: short write");
}

inline Archive load_archive(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                                       &std::fclose);
    if (!fp) throw IoError("archive: cannot open: " + path);
    char magic[8];
    if (std::fread(magic, 1, 8, fp.get()) != 8 ||
        std::memcmp(magic, detail::kArchiveMagic, 8) != 0)
        throw IoError("archive: bad magic in " + path);
    detail::CrcReader r{fp.get()};
    Archive ar;
    const uint32_t mlen = r.read_pod<uint32_t>();
    if (mlen > (1u << 24)) throw IoError("archive: implausible manifest size");
    std::string m(mlen, '\0');
    r.read(m.data(), mlen);
    try {
        ar.manifest = json::parse(m);
    } catch (const json::exception& e) {
        throw IoError("archive: manifest parse error: " + std::string(e.what()));
    }
    const uint64_t count = r.read_pod<uint64_t>();
    if (count > (1u << 20)) throw IoError("archive: implausible tensor count");
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t nlen = r.read_pod<uint32_t>();
        if (nlen > (1u << 16)) throw IoError("archive: implausible name length");
        std::string name(nlen, '\0');
        r.read(name.data(), nlen);
        const uint8_t rank = r.read_pod<uint8_t>();
        if (rank > 4) throw IoError("archive: bad tensor rank");
        Shape sh;
        sh.rank = rank;
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            sh.d[size_t(d)] = int(r.read_pod<uint32_t>());
            numel *= sh.d[size_t(d)];
        }
        if (numel < 0 || numel > (int64_t(1) << 30)) throw IoError("archive: implausible tensor");
        Tensor<float> t(sh);
        r.read(t.ptr(), size_t(numel) * sizeof(float));
        ar.tensors.emplace_back(std::move(name), std::move(t));
    }
    const uLong computed = r.crc;
    uint32_t stored;
    if (std::fread(&stored, 1, 4, fp.get()) != 4) throw IoError("archive: missing checksum");
    if (uint32_t(computed) != stored)
        throw IoError("archive: checksum mismatch, file is corrupted: " + path);
    return ar;
}

// ---------------------------------------------------------------------------
// GAN checkpoints ("dgp-ckpt/1").

struct CheckpointMeta {
    uint64_t seed = 0;
    int64_t iterations = 0;
};

template <class S>
inline Archive checkpoint_archive(Generator<S>& g, Discriminator<S>& d,
                                  const CheckpointMeta& meta) {
    Archive ar;
    json arch;
    to_json_arch(arch, g.config());
    ar.manifest = json{{"format", "dgp-ckpt/1"},
                       {"arch", arch},
                       {"seed", meta.seed},
                       {"iterations", meta.iterations},
                       {"norm_mode", g.norm_mode() == NormMode::instance_swapped
                                         ? "instance_swapped"
                                         : "batch_running_stats"}};
    for (auto* p : g.all_params()) ar.tensors.emplace_back(p->name, p->value.template cast<float>());
    for (auto* p : d.all_params()) ar.tensors.emplace_back(p->name, p->value.template cast<float>());
    return ar;
}

template <class S>
inline void save_checkpoint(const std::string& path, Generator<S>& g, Discriminator<S>& d,
                            const CheckpointMeta& meta) {
    save_archive(path, checkpoint_archive(g, d, meta));
}

template <class S>
struct LoadedCheckpoint {
    GanPair<S> pair;
    ArchConfig arch;
    CheckpointMeta meta;
};

template <class S>
inline void fill_params_from(const Archive& ar, std::vector<Parameter<S>*> params) {
    for (auto* p : params) {
        const Tensor<float>* t = ar.find(p->name);
        if (!t) throw IoError("checkpoint: missing tensor " + p->name);
        if (t->shape != p->value.shape)
            throw IoError("checkpoint: tensor " + p->name + " has shape " + t->shape.str() +
                          ", model expects " + p->value.shape.str());
        p->value = t->template cast<S>();
    }
}

template <class S>
inline LoadedCheckpoint<S> load_checkpoint(const std::string& path,
                                           const ArchConfig* expected = nullptr) {
    Archive ar = load_archive(path);
    if (ar.manifest.value("format", "") != "dgp-ckpt/1")
        throw IoError("checkpoint: unexpected format '" + ar.manifest.value("format", "") + "'");
    LoadedCheckpoint<S> out;
    out.arch = arch_from_json(ar.manifest.at("arch"));
    if (expected && *expected != out.arch)
        throw IoError("checkpoint: architecture mismatch, file has " + out.arch.str() +
                      " but run expects " + expected->str());
    out.meta.seed = ar.manifest.value("seed", uint64_t(0));
    out.meta.iterations = ar.manifest.value("iterations", int64_t(0));
    out.pair = build_pair<S>(out.arch, out.meta.seed);
    fill_params_from<S>(ar, out.pair.g.all_params());
    fill_params_from<S>(ar, out.pair.d.all_params());
    if (ar.manifest.value("norm_mode", "batch_running_stats") == std::string("instance_swapped")) {
        out.pair.g.set_norm_mode(NormMode::instance_swapped);
        // IN affine parameters are the live ones after a swap.
        for (int b = 1; b <= out.arch.blocks; ++b)
            for (auto* p : out.pair.g.block_params(b)) {
                const bool is_in = p->name.ends_with(".ins") || p->name.ends_with(".int");
                const bool is_bn_affine = p->name.ends_with(".wg") || p->name.ends_with(".wb") ||
                                          p->name.ends_with(".bn.g") || p->name.ends_with(".bn.b");
                if (is_in) p->trainable = true;
                if (is_bn_affine) p->trainable = false;
            }
    }
    return out;
}

// CRC of the serialized archive, used as a cheap content hash in tests.
inline uint32_t archive_crc(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                                       &std::fclose);
    if (!fp) throw IoError("archive: cannot open: " + path);
    uLong crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), fp.get())) > 0)
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), uInt(n));
    return uint32_t(crc);
}

}  // namespace dgp
