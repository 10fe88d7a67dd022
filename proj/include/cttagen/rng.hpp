#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cttagen {

namespace detail {

inline std::uint64_t splitmix_scramble(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Counter-based SplitMix64 stream. Every stochastic component takes an Rng
// (or a split of one) so runs are bit-reproducible given the master seed,
// independent of platform or standard-library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        return detail::splitmix_scramble(z);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the sine branch is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [lo, hi] inclusive (Lemire reduction).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        const unsigned __int128 wide =
            static_cast<unsigned __int128>(next_u64()) * range;
        return lo + static_cast<std::int64_t>(wide >> 64);
    }

    std::vector<double> normal_vec(std::size_t n, double stddev = 1.0) {
        std::vector<double> out(n);
        for (auto& v : out) v = stddev * normal();
        return out;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(
                uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent deterministic stream. Splitting does not advance
    // this stream, so split order and draw order are decoupled.
    Rng split(std::uint64_t tag) const {
        std::uint64_t s = state_ ^ (0xd1342543de82ef95ULL * (tag + 1));
        s = detail::splitmix_scramble(s + 0x9e3779b97f4a7c15ULL);
        return Rng(s);
    }

    Rng split(std::string_view tag) const { return split(detail::fnv1a64(tag)); }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cttagen
