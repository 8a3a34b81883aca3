#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dpnas {

// splitmix64 finalizer; used to derive independent sub-seeds from
// (global seed, index) so runs are resumable at any index.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Gaussian sampler with an explicit algorithm (polar Box-Muller) so that
// identical seeds give identical weights independent of the standard
// library's normal_distribution implementation.
class GaussianRng {
  public:
    explicit GaussianRng(uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform_pm1();
            v = uniform_pm1();
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    float next_f(float stddev) { return static_cast<float>(next()) * stddev; }

    std::mt19937_64& engine() { return rng_; }

  private:
    double uniform_pm1() {
        // 53-bit mantissa draw in [-1, 1)
        const uint64_t r = rng_() >> 11;
        return static_cast<double>(r) * (2.0 / 9007199254740992.0) - 1.0;
    }

    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a, used for prior fingerprints and embedding-cache validation.
inline uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dpnas
