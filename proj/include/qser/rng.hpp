#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qser {

/// Seeded generator with build-independent conversions; std::*_distribution
/// results vary between standard libraries, these do not.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal();

    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    template <typename It>
    void shuffle(It first, It last)
    {
        for (auto n = last - first; n > 1; --n) {
            auto j = static_cast<decltype(n)>(below(static_cast<std::uint64_t>(n)));
            std::swap(first[n - 1], first[j]);
        }
    }
    template <typename Container>
    void shuffle(Container& c)
    {
        shuffle(c.begin(), c.end());
    }

    /// Derive an independent stream, e.g. one per epoch or per sample.
    Rng fork(std::uint64_t salt) { return Rng(engine_() ^ (salt * 0x9E3779B97F4A7C15ull)); }

private:
    std::mt19937_64 engine_;
};

inline double Rng::normal()
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::uint64_t Rng::below(std::uint64_t n)
{
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit)
        x = engine_();
    return x % n;
}

}  // namespace qser
