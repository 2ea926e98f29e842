#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace regerr {

// Splittable counter-style generator built on splitmix64. Output sequences
// depend only on the seed, not on platform or standard-library internals,
// so artifacts are bit-reproducible across runs of the same build.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive. Modulo bias is negligible for
    // the small ranges used here (control-point counts, shuffles).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Box-Muller; one value per call, the pair's second half is discarded to
    // keep the stream position a simple function of the call count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Derive an independent child stream.
    Rng split() { return Rng(next_u64()); }

  private:
    std::uint64_t state_;
};

// FNV-1a over bytes, used both for seed derivation and manifest hashing.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash64(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(tag.data(), tag.size(), h);
    h = fnv1a64(&index, sizeof(index), h);
    // final avalanche so nearby indices land far apart
    Rng r(h);
    return r.next_u64();
}

} // namespace regerr
