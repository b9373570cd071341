#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "p2sc/common.hpp"

namespace p2sc {

// splitmix64 step, used to derive independent stream seeds from a master seed.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded random stream with explicit, implementation-independent draw rules so
// that every consumer sees a reproducible sequence. State round-trips through
// serialize()/deserialize() for checkpoint resume.
class RngStream {
public:
    explicit RngStream(uint64_t seed = 0) : eng_(seed) {}

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; draws exactly two engine values per call.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
    uint64_t uniform_int(uint64_t n) {
        P2SC_CHECK(n > 0, "uniform_int: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return v % n;
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream oss;
        oss << eng_;
        return oss.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream iss(s);
        iss >> eng_;
        P2SC_CHECK(!iss.fail(), "RngStream: malformed serialized state");
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace p2sc
