#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace lidargen {

// Counter-based deterministic RNG. Every random draw in the project is a
// function of (seed, stream tags), so replays and checkpoint resumes are
// bit-exact without serializing generator state.
inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelate trivially-related seeds
        splitmix64(state_);
    }

    uint64_t next() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint32_t uniform_int(uint32_t n) { return uint32_t(next() % n); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // standard logistic, used for Gumbel-Sigmoid sampling
    double logistic() {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        if (u >= 1.0) u = 1.0 - 0x1.0p-53;
        return std::log(u) - std::log1p(-u);
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derive an independent stream from a base seed and a list of integer tags.
inline Rng substream(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t s = seed;
    splitmix64(s);
    for (uint64_t t : tags) {
        s ^= t + 0x9E3779B97F4A7C15ull + (s << 6) + (s >> 2);
        splitmix64(s);
    }
    return Rng(s);
}

}  // namespace lidargen
