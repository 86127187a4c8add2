#pragma once

// Counter-based random stream with a documented bit layout, so datasets and
// Monte Carlo runs are reproducible across compilers and standard libraries.
//
//   key      = mix64(seed ^ 0x6A09E667F3BCC909)
//   draw n   = mix64(key + n * 0x9E3779B97F4A7C15),   n = 1, 2, 3, ...
//   split(s) = stream with key mix64(key ^ mix64(s + 0xBB67AE8584CAA73B))
//
// mix64 is the SplitMix64 finalizer. uniform() takes the top 53 bits of a draw.
// The std:: distributions are not used anywhere: their output is
// implementation-defined.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "infodiff/errors.hpp"

namespace infodiff {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed = 0) : key_(mix64(seed ^ kSeedSalt)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    result_type operator()() noexcept { return next(); }

    std::uint64_t next() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * kGolden);
    }

    // Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        require(n > 0, ErrorCode::kArgument, "below(0)");
        std::uint64_t x = next();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    // Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Index drawn from an (unnormalized, nonnegative) weight vector by inverse CDF.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        require(total > 0.0, ErrorCode::kArgument, "categorical weights sum to zero");
        const double target = uniform() * total;
        double acc = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            acc += weights[k];
            if (target < acc) return k;
        }
        for (std::size_t k = weights.size(); k-- > 0;) {
            if (weights[k] > 0.0) return k;
        }
        return weights.size() - 1;
    }

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    CounterRng split(std::uint64_t stream) const noexcept {
        CounterRng child;
        child.key_ = mix64(key_ ^ mix64(stream + kStreamSalt));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kSeedSalt = 0x6A09E667F3BCC909ULL;
    static constexpr std::uint64_t kStreamSalt = 0xBB67AE8584CAA73BULL;

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// Uniformly random k-subset of {0..n-1}, sorted. Partial Fisher-Yates.
inline std::vector<std::size_t> sample_k_subset(std::size_t n, std::size_t k, CounterRng& rng) {
    require(k <= n, ErrorCode::kArgument, "subset size exceeds universe");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace infodiff
