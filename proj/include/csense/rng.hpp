#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace csense {

// SplitMix64 is the one generator used everywhere randomness is needed
// (fixtures, masks, shuffles, weight init). The update constants are the
// SplittableRandom finalizer, so any reimplementation can reproduce every
// artifact bit-exactly from the seed.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53-bit resolution
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // integer in [0, n); modulo bias is irrelevant at our n
    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller, two uniforms per pair of draws
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.28318530717958647692528676655900577 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a 64-bit over bytes; used for purpose-string seed derivation and for
// artifact hashes in run.json.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Sub-seed for an independent stream: splitmix(seed XOR fnv1a64(purpose)).
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose) {
    SplitMix64 g(seed ^ fnv1a64(purpose));
    return g.next_u64();
}

// Indexed variant for per-item streams (per epoch, per window, ...).
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose, uint64_t index) {
    SplitMix64 g(seed ^ fnv1a64(purpose) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    return g.next_u64();
}

}  // namespace csense
