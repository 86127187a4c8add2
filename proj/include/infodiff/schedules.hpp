#pragma once

// Noise schedules sigma(t), sigma_bar(t) = int_0^t sigma, the mask level
// lambda(t) = 1 - exp(-sigma_bar(t)), and token-level forward kernels for the
// absorbing and uniform rate matrices.
//
// Rate matrices act on columns: Q(to, from) is the jump rate from `from` to
// `to`, and every column sums to zero.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/numerics.hpp"
#include "infodiff/rng.hpp"

namespace infodiff {

enum class ScheduleKind { kConstant, kLogLinear };

class NoiseSchedule {
public:
    // sigma(t) = rate, sigma_bar(t) = rate * t, defined for all t >= 0.
    static NoiseSchedule constant(double rate = 1.0) {
        require(rate > 0.0 && std::isfinite(rate), ErrorCode::kDomain, "constant sigma must be > 0");
        return NoiseSchedule(ScheduleKind::kConstant, rate);
    }

    // sigma_bar(t) = -log(1 - (1 - eps) t) on t in [0, 1], so lambda(t) = (1 - eps) t
    // is linear in t and tops out at 1 - eps.
    static NoiseSchedule log_linear(double eps = 1e-3) {
        require(eps > 0.0 && eps < 1.0, ErrorCode::kDomain, "log-linear eps must be in (0, 1)");
        return NoiseSchedule(ScheduleKind::kLogLinear, eps);
    }

    ScheduleKind kind() const noexcept { return kind_; }
    double parameter() const noexcept { return param_; }

    double t_max() const noexcept {
        return kind_ == ScheduleKind::kConstant ? kPosInf : 1.0;
    }

    double sigma(double t) const {
        check_time(t);
        if (kind_ == ScheduleKind::kConstant) return param_;
        const double slope = 1.0 - param_;
        return slope / (1.0 - slope * t);
    }

    double sigma_bar(double t) const {
        check_time(t);
        if (kind_ == ScheduleKind::kConstant) return param_ * t;
        return -std::log1p(-(1.0 - param_) * t);
    }

    double lambda(double t) const {
        check_time(t);
        if (kind_ == ScheduleKind::kConstant) return -std::expm1(-param_ * t);
        return (1.0 - param_) * t;
    }

    // Inverse of lambda(t).
    double time_of(double lambda) const {
        if (kind_ == ScheduleKind::kConstant) {
            require(lambda >= 0.0 && lambda < 1.0, ErrorCode::kDomain, "lambda must be in [0, 1)");
            return -std::log1p(-lambda) / param_;
        }
        require(lambda >= 0.0 && lambda <= 1.0 - param_, ErrorCode::kDomain,
                "lambda outside the log-linear schedule range [0, 1 - eps]");
        return lambda / (1.0 - param_);
    }

    // d lambda / dt = sigma(t) (1 - lambda(t)).
    double lambda_rate(double t) const { return sigma(t) * (1.0 - lambda(t)); }

    std::string describe() const {
        return kind_ == ScheduleKind::kConstant ? "constant(sigma=" + std::to_string(param_) + ")"
                                                : "log-linear(eps=" + std::to_string(param_) + ")";
    }

private:
    NoiseSchedule(ScheduleKind kind, double param) : kind_(kind), param_(param) {}

    void check_time(double t) const {
        if (!(t >= 0.0)) fail(ErrorCode::kDomain, "time must be >= 0");
        if (t > t_max()) fail(ErrorCode::kDomain, "time beyond schedule horizon");
    }

    ScheduleKind kind_;
    double param_;
};

enum class RateKind { kAbsorbing, kUniform };

// Token-level rate matrix. Absorbing: every symbol jumps to MASK (index N) at
// rate 1. Uniform: (1/N)(11^T - N Id), spectral gap 1, stationary distribution
// uniform.
class TokenRateMatrix {
public:
    TokenRateMatrix(RateKind kind, std::size_t alphabet_size) : kind_(kind), n_(alphabet_size) {
        require(n_ >= 2 && n_ < kMaxAlphabetSize, ErrorCode::kArgument, "alphabet size out of range");
    }

    static TokenRateMatrix absorbing(std::size_t n) { return {RateKind::kAbsorbing, n}; }
    static TokenRateMatrix uniform(std::size_t n) { return {RateKind::kUniform, n}; }

    RateKind kind() const noexcept { return kind_; }
    std::size_t alphabet_size() const noexcept { return n_; }
    std::size_t states() const noexcept { return kind_ == RateKind::kAbsorbing ? n_ + 1 : n_; }

    double rate(std::size_t to, std::size_t from) const {
        require(to < states() && from < states(), ErrorCode::kBounds, "rate index out of range");
        if (kind_ == RateKind::kAbsorbing) {
            if (from == n_) return 0.0;          // MASK is absorbing
            if (to == from) return -1.0;
            return to == n_ ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(n_);
        return to == from ? (1.0 - n) / n : 1.0 / n;
    }

    // Row-major (to, from) dense copy.
    std::vector<double> dense() const {
        const std::size_t s = states();
        std::vector<double> q(s * s);
        for (std::size_t to = 0; to < s; ++to) {
            for (std::size_t from = 0; from < s; ++from) q[to * s + from] = rate(to, from);
        }
        return q;
    }

private:
    RateKind kind_;
    std::size_t n_;
};

// log p(to | from) after cumulative noise sigma_bar, closed form.
inline double log_token_kernel(const TokenRateMatrix& q, double sigma_bar, std::size_t to,
                               std::size_t from) {
    require(sigma_bar >= 0.0, ErrorCode::kDomain, "sigma_bar must be >= 0");
    const std::size_t n = q.alphabet_size();
    if (q.kind() == RateKind::kAbsorbing) {
        if (from == n) return to == n ? 0.0 : kNegInf;
        if (to == from) return -sigma_bar;
        if (to == n) return log1mexp(sigma_bar);
        return kNegInf;
    }
    const double nd = static_cast<double>(n);
    if (to == from) return std::log1p((nd - 1.0) * std::exp(-sigma_bar)) - std::log(nd);
    return log1mexp(sigma_bar) - std::log(nd);
}

// Distribution over token states after time t starting from clean token x0.
inline std::vector<double> token_transition(const TokenRateMatrix& q, const NoiseSchedule& schedule,
                                            double t, Token x0) {
    require(t >= 0.0, ErrorCode::kDomain, "time must be >= 0");
    require(x0 < q.alphabet_size(), ErrorCode::kBounds, "x0 must be a clean token");
    const double sb = schedule.sigma_bar(t);
    std::vector<double> out(q.states());
    for (std::size_t y = 0; y < out.size(); ++y) out[y] = std::exp(log_token_kernel(q, sb, y, x0));
    return out;
}

// Absorbing corruption at mask level lambda: every token independently becomes MASK
// with probability lambda.
inline MaskedSequence sample_forward(const Sequence& x0, double lambda, CounterRng& rng) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in [0, 1]");
    MaskedSequence out(x0);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        if (rng.uniform() < lambda) out.mask(i);
    }
    return out;
}

struct PatternProbability {
    double probability = 0.0;
    double log_probability = kNegInf;
    bool consistent = false;
};

inline double log_mask_pattern_weight(std::size_t masked, std::size_t unmasked, double lambda) {
    double lp = 0.0;
    if (masked > 0) lp += static_cast<double>(masked) * std::log(lambda);
    if (unmasked > 0) lp += static_cast<double>(unmasked) * std::log1p(-lambda);
    return lp;
}

// p_{lambda|0}(x | x0) = lambda^{#masked} (1 - lambda)^{#unmasked} when x agrees with x0.
inline PatternProbability mask_pattern_probability(const MaskedSequence& x, const Sequence& x0,
                                                   double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in [0, 1]");
    require(x.size() == x0.size(), ErrorCode::kArgument, "length mismatch");
    PatternProbability out;
    out.consistent = consistent_with(x, x0);
    if (!out.consistent) return out;
    const std::size_t masked = x.masked_count();
    out.log_probability = log_mask_pattern_weight(masked, x.size() - masked, lambda);
    out.probability = std::exp(out.log_probability);
    return out;
}

}  // namespace infodiff
