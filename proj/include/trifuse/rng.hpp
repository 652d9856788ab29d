#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace trifuse {

// Deterministic splitmix64-based generator. Every consumer derives its own
// named substream from the run seed, so adding a draw in one consumer cannot
// shift any other consumer's sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed), base_(seed) {}

    // Named substream: independent generator keyed on (seed, name).
    Rng stream(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return Rng(mix(base_ ^ h));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n > 0.
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    // Standard normal via Box-Muller (pairwise, cached).
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    std::uint64_t base_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace trifuse
