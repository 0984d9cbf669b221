#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tdmix::rng {

/// splitmix64 mixing step; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for sub-stream `stream_id` of a global seed. Distinct ids give
/// decorrelated mt19937_64 states.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t stream_id) {
    return mix64(seed ^ mix64(stream_id));
}

/// Deterministic random stream. mt19937_64 output is fixed by the standard;
/// the double/int mappings below are hand-rolled so results are identical on
/// every platform (std::uniform_*_distribution is implementation-defined).
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0,1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    /// Uniform integer in [0, n). Rejection sampling, exact.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t lim = UINT64_MAX - (UINT64_MAX % n + 1) % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x > lim);
        return x % n;
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Uniform random permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace tdmix::rng
