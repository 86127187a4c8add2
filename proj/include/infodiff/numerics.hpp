#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace infodiff {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Streaming log-sum-exp. Rescales when a larger term arrives; the scaled
// terms are accumulated with compensation.
class LogSumExp {
public:
    void add(double log_term) noexcept {
        if (log_term == kNegInf) return;
        if (log_term > max_) {
            if (max_ != kNegInf) {
                const double scale = std::exp(max_ - log_term);
                sum_ = sum_ * scale;
                comp_ = comp_ * scale;
            }
            max_ = log_term;
        }
        const double x = std::exp(log_term - max_);
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const noexcept {
        if (max_ == kNegInf) return kNegInf;
        return max_ + std::log(sum_ + comp_);
    }

private:
    double max_ = kNegInf;
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double log_sum_exp(std::span<const double> terms) noexcept {
    LogSumExp acc;
    for (double t : terms) acc.add(t);
    return acc.value();
}

// log(1 - exp(-a)) for a >= 0.
inline double log1mexp(double a) noexcept {
    if (a <= 0.0) return kNegInf;
    return a < 0.6931471805599453 ? std::log(-std::expm1(-a)) : std::log1p(-std::exp(-a));
}

inline double harmonic_number(std::size_t n) noexcept {
    CompensatedSum s;
    for (std::size_t j = n; j >= 1; --j) s.add(1.0 / static_cast<double>(j));
    return s.value();
}

// log B(a, b) for positive integers.
inline double log_beta(double a, double b) noexcept {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Per-element mean and unbiased variance, two-pass.
struct SampleMoments {
    double mean = 0.0;
    double variance = 0.0;
};

inline SampleMoments sample_moments(std::span<const double> xs) noexcept {
    SampleMoments m;
    if (xs.empty()) return m;
    CompensatedSum s;
    for (double x : xs) s.add(x);
    m.mean = s.value() / static_cast<double>(xs.size());
    if (xs.size() < 2) return m;
    CompensatedSum ss;
    for (double x : xs) ss.add((x - m.mean) * (x - m.mean));
    m.variance = ss.value() / static_cast<double>(xs.size() - 1);
    return m;
}

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) noexcept {
    const auto ma = sample_moments(a);
    const auto mb = sample_moments(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        sab += (a[k] - ma.mean) * (b[k] - mb.mean);
        saa += (a[k] - ma.mean) * (a[k] - ma.mean);
        sbb += (b[k] - mb.mean) * (b[k] - mb.mean);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace infodiff
