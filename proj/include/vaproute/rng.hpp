#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace vaproute {

// splitmix64 step; used to derive child seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mixes a master seed with stream identifiers into an independent child seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = master;
    std::uint64_t out = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    out ^= splitmix64(s);
    s ^= b * 0xc2b2ae3d27d4eb4fULL;
    out ^= splitmix64(s);
    s ^= c * 0x165667b19e3779f9ULL;
    out ^= splitmix64(s);
    return out;
}

// mt19937_64 with hand-rolled distributions. The standard engine is
// bit-portable; the standard distributions are not, so we avoid them.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        // Rejection sampling keeps the draw unbiased and portable.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(items[i - 1], items[j]);
        }
    }

    // Samples an index from unnormalized nonnegative weights.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("categorical: zero total weight");
        double u = uniform() * total;
        int last_positive = -1;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            last_positive = static_cast<int>(i);
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return last_positive;  // guard against accumulated rounding
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace vaproute
