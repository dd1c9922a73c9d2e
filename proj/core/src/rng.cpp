#include "dsu/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dsu {

double Rng::normal() {
    // u1 in (0, 1] so log() never sees zero; u2 in [0, 1).
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int n) {
    if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % un;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

double Rng::beta(double a, double b) {
    if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("beta: shape parameters must be > 0");
    for (;;) {
        const double u = uniform();
        const double v = uniform();
        const double x = std::pow(u, 1.0 / a);
        const double y = std::pow(v, 1.0 / b);
        if (x + y <= 1.0 && x + y > 0.0) return x / (x + y);
    }
}

std::vector<int> Rng::permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = uniform_int(i + 1);
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
}

std::uint64_t Rng::mix_seed(std::uint64_t a, std::uint64_t b) {
    // SplitMix64 finalizer over the combined words.
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace dsu
