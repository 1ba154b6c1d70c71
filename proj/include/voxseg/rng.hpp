#pragma once

#include <cmath>
#include <cstdint>

namespace voxseg {

// xoshiro256** seeded through splitmix64. All distributions are implemented
// here rather than taken from <random> so that identical seeds produce
// identical streams on every platform and standard library.
class rng {
public:
    explicit rng(uint64_t seed = 0) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53 random bits
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo,hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0,n), n > 0
    uint64_t uniform_index(uint64_t n) {
        return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller; consumes exactly two draws per call, no cached spare,
    // so the stream position is a pure function of the call count.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
        return mean + stddev * z;
    }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    uint64_t s_[4];
};

// Independent per-sample stream: seed xor sample index, diffused by splitmix.
inline rng stream_rng(uint64_t seed, uint64_t sample_index) {
    return rng(seed ^ (sample_index * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
}

} // namespace voxseg
