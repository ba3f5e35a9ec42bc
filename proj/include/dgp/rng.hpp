#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace dgp {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// stable across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) si = splitmix64(x);
        have_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller; the spare is kept so draws stay paired.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Serialized state, used by resumable training checkpoints.
    std::string state_string() const {
        char buf[4 * 17 + 4];
        std::snprintf(buf, sizeof(buf), "%016llx:%016llx:%016llx:%016llx:%d",
                      (unsigned long long)s_[0], (unsigned long long)s_[1],
                      (unsigned long long)s_[2], (unsigned long long)s_[3],
                      have_spare_ ? 1 : 0);
        std::string out(buf);
        if (have_spare_) {
            char sp[64];
            std::snprintf(sp, sizeof(sp), ":%a", spare_);
            out += sp;
        }
        return out;
    }

    bool restore_state(const std::string& text) {
        unsigned long long a, b, c, d;
        int sp = 0;
        double spare = 0.0;
        int n = std::sscanf(text.c_str(), "%llx:%llx:%llx:%llx:%d:%la", &a, &b, &c, &d, &sp, &spare);
        if (n < 5) return false;
        s_[0] = a; s_[1] = b; s_[2] = c; s_[3] = d;
        have_spare_ = sp != 0;
        spare_ = spare;
        return true;
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4] = {};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used to derive independent per-job seeds from a master seed.
inline uint64_t fnv1a(const std::string& text, uint64_t basis = 0xcbf29ce484222325ull) {
    uint64_t h = basis;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t master, const std::string& key) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx/", (unsigned long long)master);
    return fnv1a(buf + key);
}

}  // namespace dgp
