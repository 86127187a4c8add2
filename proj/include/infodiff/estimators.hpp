#pragma once

// Negative log-likelihood and log-ratio estimators built on a conditional
// predictor c: time-free (random unmasked subsets with harmonic weights),
// time-integral (over the mask level lambda), coupled and decoupled ratios,
// and the any-order autoregressive baseline.
//
// Every Monte Carlo sample k draws from CounterRng(seed).split(k), so results
// do not depend on the worker count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/losses.hpp"
#include "infodiff/numerics.hpp"
#include "infodiff/parallel.hpp"
#include "infodiff/predictor.hpp"
#include "infodiff/quadrature.hpp"
#include "infodiff/rng.hpp"

namespace infodiff {

inline constexpr std::size_t kSubsetSumCap = 12;
inline constexpr std::size_t kPermutationCap = 8;

// Draws I from {0..m-1}, I != full set, with P(I) = B(m - |I|, |I| + 1) / H_m:
// size k with probability 1 / ((m - k) H_m), then a uniform k-subset.
class SubsetSampler {
public:
    explicit SubsetSampler(std::size_t m) : m_(m) {
        require(m >= 1, ErrorCode::kArgument, "subset sampler needs m >= 1");
        harmonic_ = harmonic_number(m);
        size_probs_.resize(m);
        for (std::size_t k = 0; k < m; ++k) size_probs_[k] = 1.0 / (static_cast<double>(m - k) * harmonic_);
    }

    std::size_t universe() const noexcept { return m_; }
    double harmonic() const noexcept { return harmonic_; }
    const std::vector<double>& size_probabilities() const noexcept { return size_probs_; }

    double subset_probability(std::size_t size) const {
        require(size < m_, ErrorCode::kArgument, "subset must be proper");
        return std::exp(log_beta(static_cast<double>(m_ - size), static_cast<double>(size + 1))) / harmonic_;
    }

    std::vector<std::size_t> sample(CounterRng& rng) const {
        const std::size_t k = rng.categorical(size_probs_);
        return sample_k_subset(m_, k, rng);
    }

    IndexSet sample_index_set(CounterRng& rng) const { return IndexSet(sample(rng), m_); }

    std::string describe() const { return "harmonic-subset(m=" + std::to_string(m_) + ")"; }

private:
    std::size_t m_;
    double harmonic_ = 0.0;
    std::vector<double> size_probs_;
};

struct EstimateResult {
    std::string estimator;
    std::string target;
    std::string sampler;
    std::size_t n_samples = 0;
    double mean = 0.0;
    double variance = 0.0;  // per-sample
    double standard_error = 0.0;
    std::uint64_t seed = 0;
    std::size_t clamp_count = 0;
    std::size_t predictor_calls = 0;
    bool off_support = false;
    double truncation_bias = 0.0;  // time-integral estimators only
    std::vector<double> samples;
};

namespace detail {

struct SampleValue {
    double value = 0.0;
    std::size_t clamps = 0;
    std::size_t calls = 0;
    bool off_support = false;
};

inline EstimateResult summarize(std::vector<SampleValue>&& per_sample, std::string estimator, std::uint64_t seed,
                                std::string sampler, bool keep_samples) {
    EstimateResult r;
    r.estimator = std::move(estimator);
    r.sampler = std::move(sampler);
    r.seed = seed;
    r.n_samples = per_sample.size();
    std::vector<double> values(per_sample.size());
    for (std::size_t k = 0; k < per_sample.size(); ++k) {
        values[k] = per_sample[k].value;
        r.clamp_count += per_sample[k].clamps;
        r.predictor_calls += per_sample[k].calls;
        r.off_support = r.off_support || per_sample[k].off_support;
    }
    if (r.off_support) {
        r.mean = kPosInf;
        r.variance = kPosInf;
        r.standard_error = kPosInf;
    } else {
        const SampleMoments m = sample_moments(values);
        r.mean = m.mean;
        r.variance = m.variance;
        r.standard_error = std::sqrt(m.variance / static_cast<double>(r.n_samples));
    }
    if (keep_samples) r.samples = std::move(values);
    return r;
}

template <typename Draw>
EstimateResult run_samples(std::size_t n_samples, std::uint64_t seed, std::string estimator, std::string sampler,
                           Draw&& draw, bool keep_samples = false) {
    require(n_samples >= 1, ErrorCode::kArgument, "n_samples must be >= 1");
    std::vector<SampleValue> out(n_samples);
    const CounterRng base(seed);
    parallel_for(n_samples, [&](std::size_t k) {
        CounterRng rng = base.split(k);
        try {
            out[k] = draw(rng);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::kZeroConditioningEvent) throw;
            out[k] = SampleValue{kPosInf, 0, 1, true};
        }
    });
    return summarize(std::move(out), std::move(estimator), seed, std::move(sampler), keep_samples);
}

// Sum over `scored` positions of -log c(x)_{i, x0_i}, with the probability floor.
inline double scored_nll(const ProbTable& c, const Sequence& x0, std::span<const std::size_t> scored,
                         std::size_t& clamps) {
    CompensatedSum s;
    for (std::size_t i : scored) {
        double p = c(i, x0[i]);
        if (!(p >= kProbabilityFloor)) {
            p = kProbabilityFloor;
            ++clamps;
        }
        s.add(-std::log(p));
    }
    return s.value();
}

}  // namespace detail

// Target positions (diffused) and context positions (kept clean). Positions in
// neither set stay masked; only a marginalizing predictor may see them.
struct TargetSplit {
    IndexSet targets;
    IndexSet context;

    static TargetSplit unconditional(std::size_t length) {
        return {IndexSet::full(length), IndexSet({}, length)};
    }

    std::size_t length() const noexcept { return targets.universe(); }
    bool has_free_positions() const noexcept { return targets.size() + context.size() < targets.universe(); }

    void validate(const ConditionalPredictor& c, std::size_t length) const {
        require(targets.universe() == length && context.universe() == length, ErrorCode::kArgument,
                "index sets must live on the sequence length");
        require(!targets.empty(), ErrorCode::kArgument, "target set must be nonempty");
        require(targets.disjoint_with(context), ErrorCode::kArgument, "target and context sets overlap");
        require(c.length() == length, ErrorCode::kArgument, "predictor length mismatch");
        if (has_free_positions() && !c.marginalizes()) {
            fail(ErrorCode::kArgument, "positions outside targets and context need a marginalizing predictor");
        }
    }

    // x with context and the chosen target positions clean, everything else masked.
    MaskedSequence reveal(const Sequence& x, std::span<const std::size_t> kept_targets) const {
        MaskedSequence out = MaskedSequence::all_masked(x.size(), x.alphabet_size());
        for (std::size_t i : context) out.set(i, x[i]);
        for (std::size_t i : kept_targets) out.set(i, x[i]);
        return out;
    }
};

// Time-free draw: J ~ harmonic subset of the targets; returns H_m * sum_{targets \ J} -log c.
namespace detail {
inline SampleValue time_free_draw(const Sequence& x, const TargetSplit& split, const ConditionalPredictor& c,
                                  const SubsetSampler& sampler, CounterRng& rng) {
    const auto picks = sampler.sample(rng);
    std::vector<std::size_t> kept, scored;
    std::size_t p = 0;
    for (std::size_t k = 0; k < split.targets.size(); ++k) {
        if (p < picks.size() && picks[p] == k) {
            kept.push_back(split.targets[k]);
            ++p;
        } else {
            scored.push_back(split.targets[k]);
        }
    }
    SampleValue sv;
    const ProbTable table = c.predict(split.reveal(x, kept));
    sv.calls = 1;
    sv.value = sampler.harmonic() * scored_nll(table, x, scored, sv.clamps);
    return sv;
}
}  // namespace detail

inline EstimateResult conditional_nll_time_free(const Sequence& x, const TargetSplit& split,
                                                const ConditionalPredictor& c, std::size_t n_samples,
                                                std::uint64_t seed, bool keep_samples = false) {
    split.validate(c, x.size());
    const SubsetSampler sampler(split.targets.size());
    auto r = detail::run_samples(n_samples, seed, "time-free", sampler.describe(), [&](CounterRng& rng) {
        return detail::time_free_draw(x, split, c, sampler, rng);
    }, keep_samples);
    r.target = "-log p(x[" + split.targets.to_one_based_string() + "] | x[" + split.context.to_one_based_string() + "])";
    return r;
}

inline EstimateResult nll_time_free(const Sequence& x0, const ConditionalPredictor& c, std::size_t n_samples,
                                    std::uint64_t seed, bool keep_samples = false) {
    auto r = conditional_nll_time_free(x0, TargetSplit::unconditional(x0.size()), c, n_samples, seed, keep_samples);
    r.target = "-log p(x0)";
    return r;
}

struct ExactValue {
    double value = 0.0;
    std::size_t predictor_calls = 0;
    std::size_t clamp_count = 0;
};

// sum_{J proper subset of targets} B(m - |J|, |J| + 1) sum_{targets \ J} -log c.
inline ExactValue exact_conditional_subset_sum(const Sequence& x, const TargetSplit& split,
                                               const ConditionalPredictor& c, std::size_t cap = kSubsetSumCap) {
    split.validate(c, x.size());
    const std::size_t m = split.targets.size();
    if (m > cap) fail(ErrorCode::kCapExceeded, "subset enumeration beyond cap (m=" + std::to_string(m) + ")");
    const std::size_t subsets = (std::size_t{1} << m) - 1;  // skip the full set
    std::vector<double> terms(subsets);
    std::vector<std::size_t> clamps(subsets, 0);
    parallel_for(subsets, [&](std::size_t bits) {
        std::vector<std::size_t> kept, scored;
        for (std::size_t k = 0; k < m; ++k) {
            ((bits >> k) & 1U ? kept : scored).push_back(split.targets[k]);
        }
        const ProbTable table = c.predict(split.reveal(x, kept));
        const double w = std::exp(log_beta(static_cast<double>(m - kept.size()), static_cast<double>(kept.size() + 1)));
        terms[bits] = w * detail::scored_nll(table, x, scored, clamps[bits]);
    });
    ExactValue out;
    CompensatedSum s;
    for (std::size_t b = 0; b < subsets; ++b) {
        s.add(terms[b]);
        out.clamp_count += clamps[b];
    }
    out.value = s.value();
    out.predictor_calls = subsets;
    return out;
}

inline double exact_subset_sum_nll(const Sequence& x0, const ConditionalPredictor& c, std::size_t cap = kSubsetSumCap) {
    return exact_conditional_subset_sum(x0, TargetSplit::unconditional(x0.size()), c, cap).value;
}

// Limit of (1/lambda) E[l_DCE] as lambda -> 0: each target masked alone.
inline double time_integrand_at_zero(const Sequence& x, const TargetSplit& split, const ConditionalPredictor& c) {
    CompensatedSum s;
    std::vector<std::size_t> kept(split.targets.begin(), split.targets.end());
    std::size_t clamps = 0;
    for (std::size_t k = 0; k < split.targets.size(); ++k) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < kept.size(); ++j) {
            if (j != k) others.push_back(kept[j]);
        }
        const std::size_t i = split.targets[k];
        const ProbTable table = c.predict(split.reveal(x, others));
        s.add(detail::scored_nll(table, x, std::span<const std::size_t>(&i, 1), clamps));
    }
    return s.value();
}

// Monte Carlo time-integral estimator: lambda ~ U(eps, 1), targets masked
// independently with probability lambda, weight (1 - eps) / lambda.
inline EstimateResult conditional_nll_time_integral_mc(const Sequence& x, const TargetSplit& split,
                                                       const ConditionalPredictor& c, std::size_t n_samples,
                                                       std::uint64_t seed, double epsilon = 1e-4,
                                                       bool keep_samples = false) {
    split.validate(c, x.size());
    require(epsilon > 0.0 && epsilon <= 0.01, ErrorCode::kArgument, "epsilon must be in (0, 0.01]");
    auto r = detail::run_samples(n_samples, seed, "time-integral-mc", "lambda~U(eps,1)", [&](CounterRng& rng) {
        const double lambda = rng.uniform(epsilon, 1.0);
        std::vector<std::size_t> kept, scored;
        for (std::size_t i : split.targets) (rng.uniform() < lambda ? scored : kept).push_back(i);
        detail::SampleValue sv;
        if (scored.empty()) return sv;
        const ProbTable table = c.predict(split.reveal(x, kept));
        sv.calls = 1;
        sv.value = (1.0 - epsilon) / lambda * detail::scored_nll(table, x, scored, sv.clamps);
        return sv;
    }, keep_samples);
    r.truncation_bias = epsilon * time_integrand_at_zero(x, split, c);
    r.target = "-log p(x[" + split.targets.to_one_based_string() + "] | x[" + split.context.to_one_based_string() + "])";
    return r;
}

inline EstimateResult nll_time_integral_mc(const Sequence& x0, const ConditionalPredictor& c, std::size_t n_samples,
                                           std::uint64_t seed, double epsilon = 1e-4, bool keep_samples = false) {
    auto r = conditional_nll_time_integral_mc(x0, TargetSplit::unconditional(x0.size()), c, n_samples, seed, epsilon,
                                              keep_samples);
    r.target = "-log p(x0)";
    return r;
}

// E_{p_{lambda|0}}[sum over masked targets of -log c] by enumerating target mask patterns.
inline ExactValue exact_expected_dce(const Sequence& x, const TargetSplit& split, const ConditionalPredictor& c,
                                     double lambda, std::size_t cap = kDefaultEnumerationCap) {
    const std::size_t m = split.targets.size();
    if (m > cap) fail(ErrorCode::kCapExceeded, "pattern enumeration beyond cap");
    ExactValue out;
    CompensatedSum s;
    for (std::size_t bits = 1; bits < (std::size_t{1} << m); ++bits) {  // bit set = masked
        std::vector<std::size_t> kept, scored;
        for (std::size_t k = 0; k < m; ++k) ((bits >> k) & 1U ? scored : kept).push_back(split.targets[k]);
        const double w = std::exp(log_mask_pattern_weight(scored.size(), kept.size(), lambda));
        if (w == 0.0) continue;
        const ProbTable table = c.predict(split.reveal(x, kept));
        ++out.predictor_calls;
        s.add(w * detail::scored_nll(table, x, scored, out.clamp_count));
    }
    out.value = s.value();
    return out;
}

// Quadrature over lambda of (1/lambda) E[l_DCE]. With n_mc_per_node == 0 the
// inner expectation is exact (pattern enumeration); otherwise each node uses
// n_mc_per_node mask draws. The reported variance is n_samples times the
// variance of the estimate, so standard_error is the estimate's spread.
inline EstimateResult conditional_nll_time_integral(const Sequence& x, const TargetSplit& split,
                                                    const ConditionalPredictor& c, const QuadratureSpec& quad,
                                                    std::size_t n_mc_per_node, std::uint64_t seed) {
    split.validate(c, x.size());
    quad.validate();
    EstimateResult r;
    r.estimator = n_mc_per_node == 0 ? "time-integral-exact" : "time-integral-quadrature";
    r.sampler = quad.describe();
    r.seed = seed;
    r.target = "-log p(x[" + split.targets.to_one_based_string() + "] | x[" + split.context.to_one_based_string() + "])";
    if (n_mc_per_node == 0) {
        std::size_t calls = 0, clamps = 0;
        auto f = [&](double lambda) {
            const ExactValue e = exact_expected_dce(x, split, c, lambda);
            calls += e.predictor_calls;
            clamps += e.clamp_count;
            return e.value / lambda;
        };
        r.mean = integrate(f, quad);
        r.n_samples = 1;
        r.predictor_calls = calls;
        r.clamp_count = clamps;
    } else {
        require(quad.kind == QuadratureKind::kGaussLegendre, ErrorCode::kArgument,
                "Monte Carlo nodes need a fixed Gauss-Legendre rule");
        const QuadratureRule rule = mapped_rule(quad);
        const std::size_t nodes = rule.nodes.size();
        std::vector<detail::SampleValue> per(nodes * n_mc_per_node);
        const CounterRng base(seed);
        parallel_for(per.size(), [&](std::size_t k) {
            CounterRng rng = base.split(k);
            const double lambda = rule.nodes[k / n_mc_per_node];
            std::vector<std::size_t> kept, scored;
            for (std::size_t i : split.targets) (rng.uniform() < lambda ? scored : kept).push_back(i);
            if (scored.empty()) return;
            const ProbTable table = c.predict(split.reveal(x, kept));
            per[k].calls = 1;
            per[k].value = detail::scored_nll(table, x, scored, per[k].clamps);
        });
        CompensatedSum mean;
        double var = 0.0;
        for (std::size_t node = 0; node < nodes; ++node) {
            std::vector<double> v(n_mc_per_node);
            for (std::size_t s = 0; s < n_mc_per_node; ++s) {
                const auto& sv = per[node * n_mc_per_node + s];
                v[s] = sv.value;
                r.clamp_count += sv.clamps;
                r.predictor_calls += sv.calls;
            }
            const SampleMoments m = sample_moments(v);
            const double coef = rule.weights[node] / rule.nodes[node];
            mean.add(coef * m.mean);
            var += coef * coef * m.variance / static_cast<double>(n_mc_per_node);
        }
        r.mean = mean.value();
        r.n_samples = per.size();
        r.variance = var * static_cast<double>(r.n_samples);
        r.standard_error = std::sqrt(var);
    }
    r.truncation_bias = quad.epsilon * time_integrand_at_zero(x, split, c);
    return r;
}

inline EstimateResult nll_time_integral(const Sequence& x0, const ConditionalPredictor& c, const QuadratureSpec& quad,
                                        std::size_t n_mc_per_node, std::uint64_t seed) {
    auto r = conditional_nll_time_integral(x0, TargetSplit::unconditional(x0.size()), c, quad, n_mc_per_node, seed);
    r.target = "-log p(x0)";
    return r;
}

// Log-ratio log p(y | context) - log p(x | context) over the target positions.
// Coupled: one subset J per sample shared by both sequences. Decoupled:
// independent subsets from separate streams.
inline EstimateResult ratio_conditional(const Sequence& x, const Sequence& y, const TargetSplit& split,
                                        const ConditionalPredictor& c, std::size_t n_samples, std::uint64_t seed,
                                        bool coupled, bool keep_samples = false) {
    require(x.size() == y.size(), ErrorCode::kArgument, "ratio estimators need equal lengths");
    require(x.alphabet_size() == y.alphabet_size(), ErrorCode::kArgument, "alphabet mismatch");
    split.validate(c, x.size());
    for (std::size_t i : split.context) {
        require(x[i] == y[i], ErrorCode::kArgument, "sequences must share the context tokens");
    }
    const SubsetSampler sampler(split.targets.size());
    auto r = detail::run_samples(n_samples, seed, coupled ? "ratio-coupled" : "ratio-decoupled", sampler.describe(),
                                 [&](CounterRng& rng) {
        CounterRng rx = coupled ? rng : rng.split(0);
        CounterRng ry = coupled ? rng : rng.split(1);
        const detail::SampleValue a = detail::time_free_draw(x, split, c, sampler, rx);
        const detail::SampleValue b = detail::time_free_draw(y, split, c, sampler, ry);
        detail::SampleValue sv;
        sv.value = a.value - b.value;
        sv.calls = a.calls + b.calls;
        sv.clamps = a.clamps + b.clamps;
        return sv;
    }, keep_samples);
    r.target = "log p(y) - log p(x)";
    return r;
}

inline EstimateResult ratio_coupled(const Sequence& x, const Sequence& y, const ConditionalPredictor& c,
                                    std::size_t n_samples, std::uint64_t seed) {
    return ratio_conditional(x, y, TargetSplit::unconditional(x.size()), c, n_samples, seed, true);
}

inline EstimateResult ratio_decoupled(const Sequence& x, const Sequence& y, const ConditionalPredictor& c,
                                      std::size_t n_samples, std::uint64_t seed) {
    return ratio_conditional(x, y, TargetSplit::unconditional(x.size()), c, n_samples, seed, false);
}

// Prompt-sharing variant: x and y agree on the prompt positions, and the
// log-ratio is over the response positions.
inline EstimateResult ratio_coupled_conditional(const Sequence& x, const Sequence& y, const IndexSet& response,
                                                const IndexSet& prompt, const ConditionalPredictor& c,
                                                std::size_t n_samples, std::uint64_t seed) {
    return ratio_conditional(x, y, TargetSplit{response, prompt}, c, n_samples, seed, true);
}

// Any-order autoregressive estimator: a uniform permutation of the targets is
// revealed one position at a time, L predictor calls per sample.
inline EstimateResult conditional_nll_ao_autoregressive(const Sequence& x, const TargetSplit& split,
                                                        const ConditionalPredictor& c, std::size_t n_samples,
                                                        std::uint64_t seed, bool keep_samples = false) {
    split.validate(c, x.size());
    auto r = detail::run_samples(n_samples, seed, "ao-autoregressive", "uniform-permutation", [&](CounterRng& rng) {
        std::vector<std::size_t> order(split.targets.begin(), split.targets.end());
        rng.shuffle(std::span<std::size_t>(order));
        detail::SampleValue sv;
        CompensatedSum s;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const ProbTable table = c.predict(split.reveal(x, std::span<const std::size_t>(order).first(step)));
            ++sv.calls;
            s.add(detail::scored_nll(table, x, std::span<const std::size_t>(&order[step], 1), sv.clamps));
        }
        sv.value = s.value();
        return sv;
    }, keep_samples);
    r.target = "-log p(x[" + split.targets.to_one_based_string() + "] | x[" + split.context.to_one_based_string() + "])";
    return r;
}

inline EstimateResult nll_ao_autoregressive(const Sequence& x0, const ConditionalPredictor& c, std::size_t n_samples,
                                            std::uint64_t seed, bool keep_samples = false) {
    auto r = conditional_nll_ao_autoregressive(x0, TargetSplit::unconditional(x0.size()), c, n_samples, seed,
                                               keep_samples);
    r.target = "-log p(x0)";
    return r;
}

// Average of the AO-AR sum over all L! orders.
inline double ao_autoregressive_exact(const Sequence& x0, const ConditionalPredictor& c,
                                      std::size_t cap = kPermutationCap) {
    const std::size_t length = x0.size();
    if (length > cap) fail(ErrorCode::kCapExceeded, "permutation enumeration beyond cap");
    std::vector<std::size_t> order(length);
    std::iota(order.begin(), order.end(), 0);
    const TargetSplit split = TargetSplit::unconditional(length);
    CompensatedSum total;
    std::size_t count = 0, clamps = 0;
    do {
        for (std::size_t step = 0; step < length; ++step) {
            const ProbTable table = c.predict(split.reveal(x0, std::span<const std::size_t>(order).first(step)));
            total.add(detail::scored_nll(table, x0, std::span<const std::size_t>(&order[step], 1), clamps));
        }
        ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    return total.value() / static_cast<double>(count);
}

}  // namespace infodiff
