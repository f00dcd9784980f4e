#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sasq {

// Seeded RNG with hand-written conversions so streams are bit-identical
// across platforms and standard library implementations.  mt19937_64 itself
// is fully specified by the standard; std::uniform_real_distribution and
// friends are not, which is why they are avoided here.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).  n must be positive; bias from the modulo
    // is irrelevant for the small n used here but avoided anyway.
    int64_t uniform_int(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<int64_t>(v % un);
    }

    // Box-Muller with a cached spare.
    float normal(float mean, float stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(theta));
        have_spare_ = true;
        return mean + stddev * static_cast<float>(r * std::cos(theta));
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace sasq
