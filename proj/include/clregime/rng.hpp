// Pinned deterministic PRNG. Every piece of randomness in the library
// (weight init, shuffles, task orders, synthetic data, fuzzing) flows
// through these generators so that results reproduce bit-for-bit across
// runs and implementations.
//
// Algorithms and constants, fixed for all time:
//   splitmix64   state += 0x9E3779B97F4A7C15; z = state;
//                z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//                z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//   xorshift64*  x ^= x>>12; x ^= x<<25; x ^= x>>27; return x * 0x2545F4914F6CDD1D
//   fnv1a64      h = 14695981039346656037; per byte: h = (h ^ byte) * 1099511628211
//
// Sub-seed derivation: derive(seed, part...) folds each part (integer or
// fnv1a64 of a string) into the state with the splitmix64 finalizer.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace clregime {

inline std::uint64_t splitmix64_scramble(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ULL;
        return splitmix64_scramble(state);
    }
};

// Main stream generator. State is seeded through splitmix64 so that
// nearby seeds give unrelated streams; a zero state is remapped (the
// xorshift recurrence has 0 as a fixed point).
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        state = sm.next();
        if (state == 0) state = 0x9E3779B97F4A7C15ULL;
        have_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() {
        std::uint64_t x = state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [-a, a].
    double next_symmetric(double a) { return (2.0 * next_double() - 1.0) * a; }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_bounded(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller, caching the spare draw.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates, descending index.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t part) {
    return splitmix64_scramble(seed ^ (part + 0x9E3779B97F4A7C15ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view part) {
    return derive_seed(seed, fnv1a64(part));
}

template <typename First, typename Second, typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, First first, Second second, Rest... rest) {
    return derive_seed(derive_seed(seed, first), second, rest...);
}

}  // namespace clregime
