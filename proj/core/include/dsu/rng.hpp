#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dsu {

/// Deterministic random stream: std::mt19937_64 (bit-exact sequence fixed
/// by the C++ standard) with explicit output transforms, so the same seed
/// reproduces the same draw sequence run after run.
///
/// Transforms:
///   uniform():  (next_u64() >> 11) * 2^-53, in [0, 1)
///   normal():   Box-Muller on two raw draws, u1 shifted into (0, 1]
///   uniform_int(n): rejection sampling on the high bits, unbiased
///
/// A Rng is single-owner; concurrent use from multiple threads is not
/// supported. Derive independent streams with fork().
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes exactly two raw draws.
    double normal();

    /// Uniform integer in [0, n), n >= 1.
    int uniform_int(int n);

    /// Beta(a, b) via Johnk's rejection method (valid for all a, b > 0,
    /// efficient for the small shape parameters used here).
    double beta(double a, double b);

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n);

    /// Independent child stream keyed by `stream`.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    /// SplitMix64 combiner for deriving sub-seeds.
    static std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
};

} // namespace dsu
