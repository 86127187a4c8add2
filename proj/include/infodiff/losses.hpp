#pragma once

// Pointwise denoising score entropy (DSE) and denoising cross-entropy (DCE)
// losses and their minimum values mdse / mdce.
//
// In the DSE sum, Q_t(x, y) is the forward rate of a jump from y into x. For
// absorbing diffusion the neighbors y of x with positive rate are the
// single-position unmaskings of x, each with rate sigma(t).

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/numerics.hpp"
#include "infodiff/oracle.hpp"
#include "infodiff/predictor.hpp"
#include "infodiff/prob_table.hpp"
#include "infodiff/schedules.hpp"

namespace infodiff {

inline constexpr double kProbabilityFloor = 1e-12;

inline double k_fn(double a) {
    require(a >= 0.0, ErrorCode::kDomain, "K(a) needs a >= 0");
    if (a == 0.0) return 0.0;
    return a * (std::log(a) - 1.0);
}

// s(x)_y for the neighbor y = x with position i set to token v.
using ScoreFn = std::function<double(std::size_t i, Token v)>;

struct DseTerm {
    std::size_t position = 0;
    Token token = 0;
    double rate = 0.0;
    double ratio = 0.0;  // p_{t|0}(y | x0) / p_{t|0}(x | x0)
    double score = 0.0;
    double contribution = 0.0;
};

struct DseLossTerms {
    std::vector<DseTerm> terms;
    double total = 0.0;
};

// Neighbors y != x differing in one position with Q_t(x, y) > 0.
template <typename Visit>
void for_each_dse_neighbor(const MaskedSequence& x, const TokenRateMatrix& q, Visit&& visit) {
    const std::size_t n = q.alphabet_size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (q.kind() == RateKind::kAbsorbing) {
            if (!x.is_masked(i)) continue;
            for (std::size_t v = 0; v < n; ++v) visit(i, static_cast<Token>(v), q.rate(n, v));
        } else {
            for (std::size_t v = 0; v < n; ++v) {
                if (v != x[i]) visit(i, static_cast<Token>(v), q.rate(x[i], v));
            }
        }
    }
}

inline DseLossTerms dse_terms(const Sequence& x0, const MaskedSequence& x, double t, const ScoreFn& score,
                              const TokenRateMatrix& q, const NoiseSchedule& schedule) {
    require(x0.size() == x.size(), ErrorCode::kArgument, "length mismatch");
    require(q.kind() == RateKind::kAbsorbing || x.masked_count() == 0, ErrorCode::kArgument,
            "uniform-kernel states cannot contain masks");
    const double sigma = schedule.sigma(t);
    const double sb = schedule.sigma_bar(t);
    const double log_px = log_forward_kernel(q, sb, x.tokens(), x0.tokens());
    require(log_px > kNegInf, ErrorCode::kArgument, "x is unreachable from x0");

    DseLossTerms out;
    CompensatedSum total;
    std::vector<Token> y(x.tokens().begin(), x.tokens().end());
    for_each_dse_neighbor(x, q, [&](std::size_t i, Token v, double base_rate) {
        const Token old = y[i];
        y[i] = v;
        const double log_py = log_forward_kernel(q, sb, y, x0.tokens());
        y[i] = old;
        DseTerm term;
        term.position = i;
        term.token = v;
        term.rate = sigma * base_rate;
        term.ratio = log_py == kNegInf ? 0.0 : std::exp(log_py - log_px);
        term.score = score(i, v);
        if (term.ratio > 0.0 && !(term.score > 0.0)) {
            fail(ErrorCode::kInvalidScore, "score must be positive where the ratio is positive");
        }
        const double log_term = term.ratio > 0.0 ? term.ratio * std::log(term.score) : 0.0;
        term.contribution = term.rate * (term.score - log_term + k_fn(term.ratio));
        total.add(term.contribution);
        out.terms.push_back(term);
    });
    out.total = total.value();
    return out;
}

inline double dse_pointwise(const Sequence& x0, const MaskedSequence& x, double t, const ScoreFn& score,
                            const TokenRateMatrix& q, const NoiseSchedule& schedule) {
    return dse_terms(x0, x, t, score, q, schedule).total;
}

struct DceLossValue {
    std::vector<double> per_position;  // -log c at masked positions, 0 elsewhere
    double total = 0.0;
    std::size_t clamp_count = 0;
};

inline DceLossValue dce_from_table(const Sequence& x0, const MaskedSequence& x, const ProbTable& c) {
    require(x0.size() == x.size(), ErrorCode::kArgument, "length mismatch");
    DceLossValue out;
    out.per_position.assign(x.size(), 0.0);
    CompensatedSum total;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_masked(i)) continue;
        double p = c(i, x0[i]);
        if (!(p >= kProbabilityFloor)) {
            p = kProbabilityFloor;
            ++out.clamp_count;
        }
        out.per_position[i] = -std::log(p);
        total.add(out.per_position[i]);
    }
    out.total = total.value();
    return out;
}

inline DceLossValue dce_pointwise(const Sequence& x0, const MaskedSequence& x, const ConditionalPredictor& c) {
    require(consistent_with(x, x0), ErrorCode::kArgument, "x must agree with x0 on unmasked positions");
    if (x.masked_count() == 0) return {std::vector<double>(x.size(), 0.0), 0.0, 0};
    return dce_from_table(x0, x, c.predict(x));
}

// Visits every mask pattern of x0 with its log probability at level lambda.
template <typename Visit>
void for_each_mask_pattern(const Sequence& x0, double lambda, Visit&& visit,
                           std::size_t cap = kDefaultEnumerationCap) {
    check_enumeration_cap(x0.size(), cap);
    const std::size_t length = x0.size();
    for (std::size_t bits = 0; bits < (std::size_t{1} << length); ++bits) {
        MaskedSequence x(x0);
        std::size_t masked = 0;
        for (std::size_t i = 0; i < length; ++i) {
            if (bits & (std::size_t{1} << i)) {
                x.mask(i);
                ++masked;
            }
        }
        const double log_w = log_mask_pattern_weight(masked, length - masked, lambda);
        if (log_w == kNegInf) continue;
        visit(x, log_w);
    }
}

// E_{p_{lambda|0}}[l_DCE(x0, x_lambda, c)] by exact pattern enumeration.
inline double expected_dce(const Sequence& x0, double lambda, const ConditionalPredictor& c,
                           std::size_t cap = kDefaultEnumerationCap) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in [0, 1]");
    CompensatedSum acc;
    for_each_mask_pattern(x0, lambda, [&](const MaskedSequence& x, double log_w) {
        if (x.masked_count() == 0) return;
        acc.add(std::exp(log_w) * dce_pointwise(x0, x, c).total);
    }, cap);
    return acc.value();
}

inline double mdce_exact(const OracleDistribution& d, const Sequence& x0, double lambda,
                         std::size_t cap = kDefaultEnumerationCap) {
    return expected_dce(x0, lambda, OraclePredictor(d), cap);
}

// E_{p_{t|0}}[l_DSE(x0, x_t, t, s)] for an arbitrary score. `score_at(x)` returns the
// score function at state x.
inline double expected_dse(const Sequence& x0, double t, const TokenRateMatrix& q, const NoiseSchedule& schedule,
                           const std::function<ScoreFn(const MaskedSequence&)>& score_at,
                           std::size_t cap = kDefaultEnumerationCap) {
    CompensatedSum acc;
    if (q.kind() == RateKind::kAbsorbing) {
        for_each_mask_pattern(x0, schedule.lambda(t), [&](const MaskedSequence& x, double log_w) {
            if (x.masked_count() == 0) return;
            acc.add(std::exp(log_w) * dse_pointwise(x0, x, t, score_at(x), q, schedule));
        }, cap);
        return acc.value();
    }
    const std::size_t n = q.alphabet_size();
    const std::size_t count = state_space_size(n, x0.size(), kDefaultStateCap);
    const double sb = schedule.sigma_bar(t);
    for (std::size_t idx = 0; idx < count; ++idx) {
        const MaskedSequence x(decode_state(idx, n, x0.size()));
        const double log_w = log_forward_kernel(q, sb, x.tokens(), x0.tokens());
        if (log_w == kNegInf) continue;
        acc.add(std::exp(log_w) * dse_pointwise(x0, x, t, score_at(x), q, schedule));
    }
    return acc.value();
}

// mdse(x0, t) with the true score p_t(y) / p_t(x) computed from diffused marginals.
inline double mdse_exact(const OracleDistribution& d, const Sequence& x0, double t, const TokenRateMatrix& q,
                         const NoiseSchedule& schedule, std::size_t cap = kDefaultEnumerationCap) {
    require(q.alphabet_size() == d.alphabet_size(), ErrorCode::kArgument, "alphabet mismatch");
    require(t > 0.0, ErrorCode::kDomain, "mdse needs t > 0");
    if (q.kind() == RateKind::kAbsorbing) {
        const double lambda = schedule.lambda(t);
        const double log_w_step = std::log1p(-lambda) - std::log(lambda);  // unmasking one position
        return expected_dse(x0, t, q, schedule, [&](const MaskedSequence& x) -> ScoreFn {
            auto nj = std::make_shared<NeighborJoint>(d.neighbor_joint(x));
            if (nj->log_marginal == kNegInf) fail(ErrorCode::kZeroDenominator, "p_t(x) = 0");
            return [nj, log_w_step](std::size_t i, Token v) {
                return std::exp(log_w_step + nj->log_joint(i, v) - nj->log_marginal);
            };
        }, cap);
    }
    const auto log_pt = std::make_shared<std::vector<double>>(log_diffused_all_states(d, q, schedule.sigma_bar(t)));
    const std::size_t n = q.alphabet_size();
    return expected_dse(x0, t, q, schedule, [&](const MaskedSequence& x) -> ScoreFn {
        std::vector<Token> tokens(x.tokens().begin(), x.tokens().end());
        const double lx = (*log_pt)[encode_state(tokens, n)];
        return [log_pt, tokens, lx, n](std::size_t i, Token v) mutable {
            const Token old = tokens[i];
            tokens[i] = v;
            const double ly = (*log_pt)[encode_state(tokens, n)];
            tokens[i] = old;
            return std::exp(ly - lx);
        };
    });
}

// Multiplier that turns a DCE value into the matching DSE value at time t:
// sigma(t) (1 - lambda) / lambda.
inline double dse_dce_prefactor(double t, const NoiseSchedule& schedule) {
    const double lambda = schedule.lambda(t);
    if (!(lambda > 0.0)) fail(ErrorCode::kDomain, "prefactor is singular at lambda = 0");
    return schedule.sigma(t) * (1.0 - lambda) / lambda;
}

inline double dse_from_dce(double dce, double t, const NoiseSchedule& schedule) {
    return dse_dce_prefactor(t, schedule) * dce;
}

// Absorbing score induced by a conditional predictor: ((1 - lambda) / lambda) c(x)_{i,v}.
inline ScoreFn score_from_predictor(const ProbTable& c, double lambda) {
    const double f = (1.0 - lambda) / lambda;
    return [c, f](std::size_t i, Token v) { return f * c(i, v); };
}

}  // namespace infodiff
