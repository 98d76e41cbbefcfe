#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace tempolm {

// splitmix64 step (Vigna). Used both as a stream generator and as a
// stateless mixer; all randomness in the library flows through it so that
// results are reproducible across platforms and independent of the C++
// standard library's distribution implementations.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

/// Derive an independent stream seed from a root seed, a purpose tag and an
/// index. Streams for shuffling, masking, dropout and initialization are kept
/// separate so that changing one setting does not shift the others.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = root;
    for (unsigned char c : tag) h = mix64(h, c);
    return mix64(h, index);
}

/// Stateless hash of (seed, site, element) onto a uniform double in [0,1).
/// Dropout masks are generated through this so the backward pass can
/// regenerate them instead of storing them.
inline double hash_uniform(std::uint64_t seed, std::uint64_t site, std::uint64_t element) {
    std::uint64_t s = mix64(mix64(seed, site), element);
    std::uint64_t bits = splitmix64(s);
    return double(bits >> 11) * 0x1.0p-53;
}

/// Small deterministic RNG stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform double in [0,1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0,n). n must be > 0.
    std::size_t below(std::size_t n) {
        // 128-bit multiply rejection-free bound; bias is < 2^-64, irrelevant here
        return std::size_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Normal deviate via Box-Muller (cached spare).
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace tempolm
