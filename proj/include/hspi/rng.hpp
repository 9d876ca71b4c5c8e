#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hspi/common.hpp"

namespace hspi {

// Deterministic RNG. Distributions are implemented by hand because the
// std:: distribution objects are not pinned by the standard and would break
// byte-identical reruns across library versions.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Named substream: all of an experiment's randomness flows from one seed.
    static Rng substream(uint64_t seed, const std::string& label) {
        return Rng(fnv1a64(label, seed ^ 0x9e3779b97f4a7c15ull));
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return double(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        uint64_t limit = ~uint64_t(0) - ~uint64_t(0) % n;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller; caches the unused half.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hspi
