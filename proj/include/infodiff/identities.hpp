#pragma once

// Executable identity checks on enumerable instances. Each check reports its
// largest deviation against a tolerance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "infodiff/datagen.hpp"
#include "infodiff/estimators.hpp"
#include "infodiff/losses.hpp"
#include "infodiff/oracle.hpp"
#include "infodiff/predictor.hpp"
#include "infodiff/quadrature.hpp"
#include "infodiff/schedules.hpp"

namespace infodiff {

struct IdentityCheck {
    std::string name;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::size_t evaluations = 0;
    std::string detail;
    double seconds = 0.0;  // wall time; kept out of deterministic reports
};

struct IdentitySuiteConfig {
    std::vector<double> lambda_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> time_grid = {0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
    std::vector<double> horizons = {0.5, 1.0, 2.0, 4.0};
    double fd_step = 1e-4;
    double sigma = 1.0;                      // constant schedule rate
    std::size_t quadrature_nodes = 32;
    std::size_t decomposition_atoms = 16;    // atoms used by the decomposition check
    std::size_t equivalence_atoms = 4;       // atoms used by the loss-equivalence check
    std::size_t perturbations = 100;
    double perturbation_min = 1e-3;
    double perturbation_max = 1.0;
    double optimality_lambda = 0.5;
    double uniform_time = 0.5;
    std::uint64_t seed = 0;
    bool corrupt_predictor = false;          // negative control for the optimality checks

    double tol_time_free = 1e-9;
    double tol_derivative = 1e-5;
    double tol_decomposition = 1e-4;
    double tol_equivalence = 1e-6;
};

namespace detail {

inline std::vector<std::size_t> spread_indices(std::size_t total, std::size_t wanted) {
    const std::size_t k = std::min(total, wanted);
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = j * total / k;
    return out;
}

inline IdentityCheck finish(IdentityCheck c, std::chrono::steady_clock::time_point start) {
    c.passed = c.max_deviation <= c.tolerance;
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return c;
}

inline std::vector<double> perturbation_magnitudes(const IdentitySuiteConfig& cfg) {
    std::vector<double> out(cfg.perturbations);
    const double lo = std::log(cfg.perturbation_min), hi = std::log(cfg.perturbation_max);
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double u = out.size() == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(out.size() - 1);
        out[k] = std::exp(lo + (hi - lo) * u);
    }
    return out;
}

}  // namespace detail

// exact subset sum with c* reproduces -log p0 for every atom.
inline IdentityCheck check_time_free_exactness(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = "time_free_exactness";
    c.tolerance = cfg.tol_time_free;
    const OraclePredictor oracle(d);
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        const Sequence& x0 = d.atoms()[a];
        const double err = std::abs(exact_subset_sum_nll(x0, oracle) + std::log(d.probabilities()[a]));
        c.max_deviation = std::max(c.max_deviation, err);
        ++c.evaluations;
    }
    c.detail = std::to_string(c.evaluations) + " atoms";
    return detail::finish(c, start);
}

// Central difference of D_KL(p_{lambda|0} || p_lambda) against -(1/lambda) mdce.
inline IdentityCheck check_i_mdce(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = "i_mdce_derivative";
    c.tolerance = cfg.tol_derivative;
    const double h = cfg.fd_step;
    std::vector<double> worst(d.atom_count(), 0.0);
    parallel_for(d.atom_count(), [&](std::size_t a) {
        const Sequence& x0 = d.atoms()[a];
        for (double lambda : cfg.lambda_grid) {
            const double slope =
                (kl_conditional_vs_marginal(d, x0, lambda + h) - kl_conditional_vs_marginal(d, x0, lambda - h)) / (2 * h);
            const double rhs = -mdce_exact(d, x0, lambda) / lambda;
            worst[a] = std::max(worst[a], std::abs(slope - rhs));
        }
    });
    c.max_deviation = *std::max_element(worst.begin(), worst.end());
    c.evaluations = d.atom_count() * cfg.lambda_grid.size();
    c.detail = std::to_string(d.atom_count()) + " atoms x " + std::to_string(cfg.lambda_grid.size()) + " lambdas";
    return detail::finish(c, start);
}

// Central difference in t of the uniform-kernel KL against -mdse.
inline IdentityCheck check_i_mdse(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = "i_mdse_derivative";
    c.tolerance = cfg.tol_derivative;
    const auto q = TokenRateMatrix::uniform(d.alphabet_size());
    const auto schedule = NoiseSchedule::constant(cfg.sigma);
    const double h = cfg.fd_step;
    for (const Sequence& x0 : d.atoms()) {
        for (double t : cfg.time_grid) {
            const double slope = (kl_conditional_vs_marginal_uniform(d, x0, t + h, q, schedule) -
                                  kl_conditional_vs_marginal_uniform(d, x0, t - h, q, schedule)) /
                                 (2 * h);
            const double rhs = -mdse_exact(d, x0, t, q, schedule);
            c.max_deviation = std::max(c.max_deviation, std::abs(slope - rhs));
            ++c.evaluations;
        }
    }
    c.detail = std::to_string(d.atom_count()) + " atoms x " + std::to_string(cfg.time_grid.size()) + " times, N=" +
               std::to_string(d.alphabet_size()) + " L=" + std::to_string(d.length());
    return detail::finish(c, start);
}

// int_0^T mdse dt + D_KL(p_{T|0} || p_T) = -log p0(x0) under absorbing diffusion.
inline IdentityCheck check_decomposition(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = "nll_decomposition";
    c.tolerance = cfg.tol_decomposition;
    const auto q = TokenRateMatrix::absorbing(d.alphabet_size());
    const auto schedule = NoiseSchedule::constant(cfg.sigma);
    const auto picks = detail::spread_indices(d.atom_count(), cfg.decomposition_atoms);
    std::vector<double> worst(picks.size(), 0.0);
    parallel_for(picks.size(), [&](std::size_t k) {
        const Sequence& x0 = d.atoms()[picks[k]];
        const double truth = -std::log(d.probabilities()[picks[k]]);
        for (double horizon : cfg.horizons) {
            const double integral = integrate_gl([&](double t) { return mdse_exact(d, x0, t, q, schedule); }, 0.0,
                                                 horizon, cfg.quadrature_nodes);
            const double tail = kl_conditional_vs_marginal(d, x0, schedule.lambda(horizon));
            worst[k] = std::max(worst[k], std::abs(integral + tail - truth));
        }
    });
    c.max_deviation = worst.empty() ? 0.0 : *std::max_element(worst.begin(), worst.end());
    c.evaluations = picks.size() * cfg.horizons.size();
    c.detail = std::to_string(picks.size()) + " atoms x " + std::to_string(cfg.horizons.size()) + " horizons";
    return detail::finish(c, start);
}

// int_0^T E[l_DSE(s*)] dt with s* from diffused marginals, against
// int_0^Lambda (1/lambda) mdce dlambda with Lambda = 1 - exp(-sigma_bar(T)).
inline IdentityCheck check_loss_equivalence(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = "loss_equivalence";
    c.tolerance = cfg.tol_equivalence;
    const auto q = TokenRateMatrix::absorbing(d.alphabet_size());
    const auto schedule = NoiseSchedule::constant(cfg.sigma);
    const auto picks = detail::spread_indices(d.atom_count(), cfg.equivalence_atoms);
    std::vector<double> worst(picks.size(), 0.0);
    parallel_for(picks.size(), [&](std::size_t k) {
        const Sequence& x0 = d.atoms()[picks[k]];
        for (double horizon : cfg.horizons) {
            const double dse = integrate_gl(
                [&](double t) {
                    const double lambda = schedule.lambda(t);
                    return expected_dse(x0, t, q, schedule, [&](const MaskedSequence& x) -> ScoreFn {
                        const double lx = log_diffused_marginal(d, x, lambda);
                        return [&d, x, lx, lambda](std::size_t i, Token v) {
                            return std::exp(log_diffused_marginal(d, x.with_token(i, v), lambda) - lx);
                        };
                    });
                },
                0.0, horizon, cfg.quadrature_nodes);
            const double cap = schedule.lambda(horizon);
            const double dce = integrate_gl([&](double lambda) { return mdce_exact(d, x0, lambda) / lambda; }, 0.0,
                                            cap, cfg.quadrature_nodes);
            worst[k] = std::max(worst[k], std::abs(dse - dce));
        }
    });
    c.max_deviation = worst.empty() ? 0.0 : *std::max_element(worst.begin(), worst.end());
    c.evaluations = picks.size() * cfg.horizons.size();
    c.detail = std::to_string(picks.size()) + " atoms x " + std::to_string(cfg.horizons.size()) + " horizons";
    return detail::finish(c, start);
}

namespace detail {

// One noisy state x reached from x0 with probability weight.
struct WeightedState {
    std::size_t atom = 0;
    double weight = 0.0;  // p0(x0) * p(x | x0)
    MaskedSequence x;
    ProbTable oracle;     // c*(x)
};

inline std::vector<WeightedState> absorbing_states(const ExplicitCategorical& d, double lambda,
                                                   const ConditionalPredictor& reference) {
    std::vector<WeightedState> out;
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        for_each_mask_pattern(d.atoms()[a], lambda, [&](const MaskedSequence& x, double log_w) {
            if (x.masked_count() == 0) return;
            out.push_back({a, d.probabilities()[a] * std::exp(log_w), x, ProbTable()});
        });
    }
    parallel_for(out.size(), [&](std::size_t k) { out[k].oracle = reference.predict(out[k].x); });
    return out;
}

// Optimal value versus perturbed values. `value(eps, seed)` returns the
// expected loss at a perturbation of magnitude eps (eps = 0: unperturbed).
inline IdentityCheck optimality(std::string name, const IdentitySuiteConfig& cfg,
                                const std::function<double(double, std::uint64_t)>& value) {
    const auto start = std::chrono::steady_clock::now();
    IdentityCheck c;
    c.name = std::move(name);
    c.tolerance = 0.0;
    const double best = value(0.0, 0);
    const auto mags = perturbation_magnitudes(cfg);
    std::vector<double> gaps(mags.size());
    parallel_for(mags.size(), [&](std::size_t k) { gaps[k] = value(mags[k], mix64(cfg.seed + 1000 + k)) - best; });
    std::size_t violations = 0;
    double min_gap = kPosInf;
    for (double gap : gaps) {
        min_gap = std::min(min_gap, gap);
        // strict, except on degenerate instances where the optimum is 0 and
        // one-hot predictions are left unchanged by multiplicative noise
        if (gap < 0.0 || (gap == 0.0 && best != 0.0)) ++violations;
    }
    c.max_deviation = std::max(0.0, -min_gap);
    c.evaluations = mags.size();
    c.detail = "optimal=" + format_double(best) + " min_gap=" + format_double(min_gap) + " violations=" +
               std::to_string(violations);
    c = finish(c, start);
    c.passed = violations == 0;
    return c;
}

}  // namespace detail

// E_{p0} E_{x_lambda}[l_DCE(c)] is minimized at c*.
inline IdentityCheck check_dce_optimality(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const OraclePredictor oracle(d);
    const PerturbedPredictor corrupted(oracle, 0.5, mix64(cfg.seed ^ 0xC0FFEE));
    const ConditionalPredictor& reference = cfg.corrupt_predictor ? static_cast<const ConditionalPredictor&>(corrupted)
                                                                  : oracle;
    const auto states = detail::absorbing_states(d, cfg.optimality_lambda, reference);
    return detail::optimality("dce_optimality", cfg, [&](double eps, std::uint64_t seed) {
        CompensatedSum acc;
        for (const auto& s : states) {
            ProbTable table = s.oracle;
            if (eps > 0.0) perturb_table(table, s.x, eps, seed);
            acc.add(s.weight * dce_from_table(d.atoms()[s.atom], s.x, table).total);
        }
        return acc.value();
    });
}

// E_{p0} E_{x_t}[l_DSE(s)] is minimized at s* for the absorbing kernel
// (s* from c*) and for the uniform kernel (s* from diffused marginals).
inline IdentityCheck check_dse_optimality_absorbing(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const OraclePredictor oracle(d);
    const PerturbedPredictor corrupted(oracle, 0.5, mix64(cfg.seed ^ 0xC0FFEE));
    const ConditionalPredictor& reference = cfg.corrupt_predictor ? static_cast<const ConditionalPredictor&>(corrupted)
                                                                  : oracle;
    const auto q = TokenRateMatrix::absorbing(d.alphabet_size());
    const auto schedule = NoiseSchedule::constant(cfg.sigma);
    const double lambda = cfg.optimality_lambda;
    const double t = schedule.time_of(lambda);
    const auto states = detail::absorbing_states(d, lambda, reference);
    return detail::optimality("dse_optimality_absorbing", cfg, [&](double eps, std::uint64_t seed) {
        CompensatedSum acc;
        for (const auto& s : states) {
            ScoreFn base = score_from_predictor(s.oracle, lambda);
            ScoreFn score = base;
            if (eps > 0.0) {
                const std::uint64_t h = hash_state(s.x.tokens(), seed);
                score = [base, eps, h, n = d.alphabet_size()](std::size_t i, Token v) {
                    CounterRng rng = CounterRng(h).split(i * n + v);
                    return base(i, v) * std::exp(eps * rng.normal());
                };
            }
            acc.add(s.weight * dse_pointwise(d.atoms()[s.atom], s.x, t, score, q, schedule));
        }
        return acc.value();
    });
}

inline IdentityCheck check_dse_optimality_uniform(const ExplicitCategorical& d, const IdentitySuiteConfig& cfg) {
    const auto q = TokenRateMatrix::uniform(d.alphabet_size());
    const auto schedule = NoiseSchedule::constant(cfg.sigma);
    const double t = cfg.uniform_time;
    const std::size_t n = d.alphabet_size();
    auto log_pt = log_diffused_all_states(d, q, schedule.sigma_bar(t));
    if (cfg.corrupt_predictor) {
        CounterRng rng(mix64(cfg.seed ^ 0xC0FFEE));
        for (double& v : log_pt) v += 0.5 * rng.normal();
    }
    return detail::optimality("dse_optimality_uniform", cfg, [&](double eps, std::uint64_t seed) {
        CompensatedSum acc;
        for (std::size_t a = 0; a < d.atom_count(); ++a) {
            acc.add(d.probabilities()[a] *
                    expected_dse(d.atoms()[a], t, q, schedule, [&](const MaskedSequence& x) -> ScoreFn {
                        std::vector<Token> tokens(x.tokens().begin(), x.tokens().end());
                        const double lx = log_pt[encode_state(tokens, n)];
                        const std::uint64_t h = hash_state(x.tokens(), seed);
                        return [&log_pt, tokens, lx, n, eps, h](std::size_t i, Token v) mutable {
                            const Token old = tokens[i];
                            tokens[i] = v;
                            const double ly = log_pt[encode_state(tokens, n)];
                            tokens[i] = old;
                            double s = std::exp(ly - lx);
                            if (eps > 0.0) s *= std::exp(eps * CounterRng(h).split(i * n + v).normal());
                            return s;
                        };
                    }));
        }
        return acc.value();
    });
}

struct IdentitySuiteResult {
    std::vector<IdentityCheck> checks;
    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const IdentityCheck& c) { return c.passed; });
    }
};

// `absorbing` is the masked-diffusion instance; `uniform` is the small
// clean-state instance for the uniform kernel.
inline IdentitySuiteResult run_identity_suite(const ExplicitCategorical& absorbing, const ExplicitCategorical& uniform,
                                              const IdentitySuiteConfig& cfg) {
    IdentitySuiteResult r;
    r.checks.push_back(check_time_free_exactness(absorbing, cfg));
    r.checks.push_back(check_i_mdce(absorbing, cfg));
    r.checks.push_back(check_i_mdse(uniform, cfg));
    r.checks.push_back(check_decomposition(absorbing, cfg));
    r.checks.push_back(check_loss_equivalence(absorbing, cfg));
    r.checks.push_back(check_dce_optimality(absorbing, cfg));
    r.checks.push_back(check_dse_optimality_absorbing(absorbing, cfg));
    r.checks.push_back(check_dse_optimality_uniform(uniform, cfg));
    return r;
}

}  // namespace infodiff
