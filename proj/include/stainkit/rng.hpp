#ifndef STAINKIT_RNG_HPP
#define STAINKIT_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace stainkit {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// A random stream addressed by (seed, counters...). Two streams with the
/// same address produce the same sequence regardless of which thread or in
/// which order they are created.
class Stream {
public:
    explicit Stream(std::uint64_t key) : engine_(key) {}

    Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> counters)
        : engine_(mix(seed, counters)) {}

    /// Uniform in [lo, hi]; lo == hi returns lo exactly.
    double uniform(double lo, double hi) {
        if (lo == hi) {
            return lo;
        }
        const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> dist(lo, hi);
        return dist(engine_);
    }

    bool coin() { return (engine_() >> 63) != 0; }

    double normal(double mean, double stddev) {
        std::normal_distribution<double> dist(mean, stddev);
        return dist(engine_);
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    static std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
        std::uint64_t h = splitmix64(seed);
        for (std::uint64_t c : counters) {
            h = splitmix64(h ^ splitmix64(c));
        }
        return h;
    }

    std::mt19937_64 engine_;
};

} // namespace stainkit

#endif
