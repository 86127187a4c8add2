#include <gtest/gtest.h>

#include <chrono>
#include <map>

#include "fixtures.hpp"
#include "infodiff/estimators.hpp"
#include "infodiff/parallel.hpp"

using namespace infodiff;
using infodiff::testing::seq;

namespace {

double binomial(std::size_t n, std::size_t k) {
    return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
}

MarkovWindowOracle markov_window(std::size_t window = 32) {
    MarkovCorpusSpec spec;
    spec.order = 2;
    spec.window = window;
    spec.alphabet = "ACG";
    spec.seed = 19;
    return MarkovWindowOracle(build_markov_model(spec), window);
}

TEST(SubsetSampler, SizeProbabilitiesMatchSubsetProbabilities) {
    for (std::size_t m : {1u, 2u, 5u, 12u}) {
        const SubsetSampler s(m);
        double total = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            EXPECT_NEAR(s.size_probabilities()[k], binomial(m, k) * s.subset_probability(k), 1e-14);
            total += s.size_probabilities()[k];
        }
        EXPECT_NEAR(total, 1.0, 1e-14);
    }
}

TEST(SubsetSampler, TwoPositionProbabilities) {
    const SubsetSampler s(2);
    EXPECT_NEAR(s.subset_probability(0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.subset_probability(1), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.size_probabilities()[1], 2.0 / 3.0, 1e-15);
    EXPECT_THROW((void)s.subset_probability(2), Error);
}

TEST(SubsetSampler, DrawsFollowTheSubsetDistribution) {
    const std::size_t m = 4;
    const SubsetSampler s(m);
    CounterRng rng(77);
    std::map<std::size_t, std::size_t> counts;
    const std::size_t draws = 60000;
    for (std::size_t k = 0; k < draws; ++k) {
        std::size_t bits = 0;
        for (std::size_t i : s.sample(rng)) bits |= std::size_t{1} << i;
        ASSERT_NE(bits, 15u) << "full set must never be drawn";
        ++counts[bits];
    }
    double chi2 = 0.0;
    for (std::size_t bits = 0; bits < 15; ++bits) {
        const double expected = draws * s.subset_probability(static_cast<std::size_t>(__builtin_popcountll(bits)));
        const double diff = static_cast<double>(counts[bits]) - expected;
        chi2 += diff * diff / expected;
    }
    EXPECT_LT(chi2, 36.12);  // chi-square, 14 dof, p = 0.001
}

TEST(ExactSubsetSum, ToyReproducesNllForEveryAtom) {
    const auto toy = infodiff::testing::toy();
    const auto& d = toy.distribution;
    const OraclePredictor oracle(d);
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        worst = std::max(worst, std::abs(exact_subset_sum_nll(d.atoms()[a], oracle) + std::log(d.probabilities()[a])));
    }
    EXPECT_LE(worst, 1e-9);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
}

TEST(ExactSubsetSum, IndependentTokensGiveSumOfMarginals) {
    const std::vector<std::vector<double>> marginals = {{0.6, 0.4}, {0.1, 0.9}, {0.5, 0.5}, {0.3, 0.7}};
    const auto d = infodiff::testing::product_distribution(marginals);
    const OraclePredictor oracle(d);
    const Sequence x = seq({1, 0, 1, 0}, 2);
    const double expected = -std::log(0.4) - std::log(0.1) - std::log(0.5) - std::log(0.3);
    EXPECT_NEAR(exact_subset_sum_nll(x, oracle), expected, 1e-12);
}

TEST(ExactSubsetSum, CapIsEnforced) {
    const MarkovWindowOracle d = markov_window(16);
    const OraclePredictor oracle(d);
    const Sequence x(std::vector<Token>(16, 0), 3);
    try {
        (void)exact_subset_sum_nll(x, oracle);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCapExceeded);
    }
}

TEST(TimeFree, SinglePositionIsDeterministic) {
    const ExplicitCategorical d({seq({0}, 3), seq({1}, 3), seq({2}, 3)}, {0.2, 0.3, 0.5});
    const OraclePredictor oracle(d);
    const EstimateResult r = nll_time_free(seq({1}, 3), oracle, 64, 1);
    EXPECT_NEAR(r.mean, -std::log(0.3), 1e-14);
    EXPECT_EQ(r.variance, 0.0);
    EXPECT_EQ(r.predictor_calls, 64u);
}

TEST(TimeFree, UnbiasedOnToyAtoms) {
    const auto toy = infodiff::testing::toy();
    const auto& d = toy.distribution;
    const OraclePredictor oracle(d);
    for (std::size_t a : {0u, 17u, 64u, 127u}) {
        const double truth = -std::log(d.probabilities()[a]);
        const EstimateResult r = nll_time_free(d.atoms()[a], oracle, 20000, 1000 + a);
        EXPECT_LT(std::abs(r.mean - truth), 4.0 * r.standard_error) << "atom " << a;
        EXPECT_NEAR(r.standard_error, std::sqrt(r.variance / 20000.0), 1e-15);
    }
}

TEST(TimeFree, ZeroProbabilityTokenIsClamped) {
    const auto d = infodiff::testing::small_categorical();
    const OraclePredictor oracle(d);
    const EstimateResult r = nll_time_free(seq({1, 0}, 2), oracle, 32, 3);
    EXPECT_FALSE(r.off_support);
    EXPECT_GT(r.clamp_count, 0u);
    EXPECT_GT(r.mean, 10.0);
}

TEST(TimeFree, ZeroProbabilityContextIsFlaggedOffSupport) {
    const ExplicitCategorical d({seq({0, 0, 0}, 2), seq({1, 1, 1}, 2)}, {0.5, 0.5});
    const OraclePredictor oracle(d);
    const EstimateResult r = nll_time_free(seq({0, 1, 1}, 2), oracle, 64, 3);
    EXPECT_TRUE(r.off_support);
    EXPECT_EQ(r.mean, kPosInf);
}

TEST(TimeFree, ResultIndependentOfThreadCount) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    const std::size_t saved = worker_threads();
    set_worker_threads(1);
    const EstimateResult a = nll_time_free(d.atoms()[3], oracle, 3000, 5);
    set_worker_threads(7);
    const EstimateResult b = nll_time_free(d.atoms()[3], oracle, 3000, 5);
    set_worker_threads(saved);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.variance, b.variance);
}

TEST(TimeIntegral, QuadratureWithExactIntegrandMatchesNll) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    QuadratureSpec q;
    q.kind = QuadratureKind::kGaussLegendre;
    q.nodes = 64;
    q.epsilon = 1e-4;
    for (std::size_t a = 0; a < 16; ++a) {
        const EstimateResult r = nll_time_integral(d.atoms()[a], oracle, q, 0, 0);
        EXPECT_NEAR(r.mean, -std::log(d.probabilities()[a]), 1e-4) << "atom " << a;
        // Seven tokens pin down each atom, so the integrand vanishes at zero.
        EXPECT_GE(r.truncation_bias, 0.0);
        EXPECT_LT(r.truncation_bias, 1e-2);
    }
}

TEST(TimeIntegral, MonteCarloIsUnbiased) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    for (std::size_t a : {2u, 90u}) {
        const EstimateResult r = nll_time_integral_mc(d.atoms()[a], oracle, 40000, 50 + a);
        EXPECT_LT(std::abs(r.mean - (-std::log(d.probabilities()[a]))), 4.0 * r.standard_error + r.truncation_bias);
    }
}

TEST(TimeIntegral, EpsilonOutsideRangeIsRejected) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    EXPECT_THROW((void)nll_time_integral_mc(d.atoms()[0], oracle, 10, 1, 0.5), Error);
}

TEST(AnyOrderAutoregressive, ExactEqualsSubsetSumForAnyPredictor) {
    const auto d = infodiff::testing::toy(24, 4, 13).distribution;
    const OraclePredictor oracle(d);
    const PerturbedPredictor noisy(oracle, 0.4, 99);
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        const Sequence& x = d.atoms()[a];
        EXPECT_NEAR(ao_autoregressive_exact(x, oracle), exact_subset_sum_nll(x, oracle), 1e-9);
        EXPECT_NEAR(ao_autoregressive_exact(x, noisy), exact_subset_sum_nll(x, noisy), 1e-9);
    }
}

TEST(AnyOrderAutoregressive, MonteCarloAgreesWithTimeFree) {
    const auto d = infodiff::testing::toy(24, 4, 13).distribution;
    const OraclePredictor oracle(d);
    const PerturbedPredictor noisy(oracle, 0.4, 99);
    for (std::size_t a : {0u, 5u, 11u}) {
        const Sequence& x = d.atoms()[a];
        const EstimateResult ao = nll_ao_autoregressive(x, noisy, 8000, 1 + a);
        const EstimateResult tf = nll_time_free(x, noisy, 8000, 101 + a);
        EXPECT_EQ(ao.predictor_calls, 8000u * 4u);
        const double se = std::hypot(ao.standard_error, tf.standard_error);
        EXPECT_LT(std::abs(ao.mean - tf.mean), 4.0 * se);
    }
}

TEST(Conditional, EmptyContextReducesToUnconditional) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    const Sequence& x = d.atoms()[9];
    const EstimateResult a = conditional_nll_time_free(x, TargetSplit::unconditional(8), oracle, 500, 4);
    const EstimateResult b = nll_time_free(x, oracle, 500, 4);
    EXPECT_EQ(a.mean, b.mean);
}

TEST(Conditional, SingleTargetIsDeterministic) {
    const MarkovWindowOracle d = markov_window(12);
    const OraclePredictor oracle(d);
    const Sequence x(std::vector<Token>{0, 1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0}, 3);
    const TargetSplit split{IndexSet({11}, 12), IndexSet::range(0, 11, 12)};
    const EstimateResult r = conditional_nll_time_free(x, split, oracle, 16, 1);
    EXPECT_EQ(r.variance, 0.0);
    EXPECT_NEAR(r.mean, d.model().chain_rule_nll(x, 11), 1e-10);
}

TEST(Conditional, MarkovResponseGivenPromptWithinStandardErrors) {
    const MarkovWindowOracle d = markov_window(32);
    const OraclePredictor oracle(d);
    CounterRng rng(44);
    const TargetSplit split{IndexSet::range(16, 32, 32), IndexSet::range(0, 16, 32)};
    for (int trial = 0; trial < 3; ++trial) {
        CounterRng wrng = rng.split(static_cast<std::uint64_t>(trial));
        std::vector<Token> t(32);
        t[0] = 0;
        t[1] = 1;
        std::size_t ctx = d.model().encode_context(std::span<const Token>(t).first(2));
        for (std::size_t i = 2; i < 32; ++i) {
            std::vector<double> row(3);
            for (std::size_t v = 0; v < 3; ++v) row[v] = d.model().transition(ctx, v);
            t[i] = static_cast<Token>(wrng.categorical(row));
            ctx = d.model().next_context(ctx, t[i]);
        }
        const Sequence x(t, 3);
        const double truth = d.model().chain_rule_nll(x, 16);
        const EstimateResult tf = conditional_nll_time_free(x, split, oracle, 1 << 13, 7 + trial);
        EXPECT_LT(std::abs(tf.mean - truth), 4.0 * tf.standard_error);
        const EstimateResult ti = conditional_nll_time_integral_mc(x, split, oracle, 1 << 13, 70 + trial);
        EXPECT_LT(std::abs(ti.mean - tf.mean), 4.0 * std::hypot(ti.standard_error, tf.standard_error));
    }
}

TEST(Conditional, InvalidSplitsAreRejected) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    const Sequence& x = d.atoms()[0];
    const TargetSplit overlap{IndexSet::range(0, 4, 8), IndexSet::range(3, 8, 8)};
    EXPECT_THROW((void)conditional_nll_time_free(x, overlap, oracle, 4, 1), Error);
    const TargetSplit empty{IndexSet({}, 8), IndexSet::range(0, 8, 8)};
    EXPECT_THROW((void)conditional_nll_time_free(x, empty, oracle, 4, 1), Error);
    const FactorizedPredictor factorized(ProbTable(8, 4, 0.25));
    const TargetSplit free_positions{IndexSet::range(0, 2, 8), IndexSet::range(4, 8, 8)};
    EXPECT_NO_THROW((void)conditional_nll_time_free(x, free_positions, oracle, 4, 1));
    EXPECT_THROW((void)conditional_nll_time_free(x, free_positions, factorized, 4, 1), Error);
}

TEST(Ratio, IdenticalSequencesGiveExactZero) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    const Sequence& x = d.atoms()[5];
    const EstimateResult r = ratio_coupled(x, x, oracle, 200, 3);
    EXPECT_EQ(r.mean, 0.0);
    EXPECT_EQ(r.variance, 0.0);
    EXPECT_EQ(r.predictor_calls, 400u);
}

TEST(Ratio, CoupledAndDecoupledAreUnbiased) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    const Sequence& x = d.atoms()[1];
    const Sequence& y = d.atoms()[40];
    const double truth = std::log(d.probabilities()[40]) - std::log(d.probabilities()[1]);
    const EstimateResult c = ratio_coupled(x, y, oracle, 20000, 8);
    const EstimateResult u = ratio_decoupled(x, y, oracle, 20000, 9);
    EXPECT_LT(std::abs(c.mean - truth), 4.0 * c.standard_error);
    EXPECT_LT(std::abs(u.mean - truth), 4.0 * u.standard_error);
    EXPECT_LT(c.variance, u.variance);
}

TEST(Ratio, RequiresMatchingShapes) {
    const auto d = infodiff::testing::toy().distribution;
    const OraclePredictor oracle(d);
    EXPECT_THROW((void)ratio_coupled(d.atoms()[0], Sequence(std::vector<Token>(7, 0), 4), oracle, 4, 1), Error);
    const TargetSplit split{IndexSet::range(4, 8, 8), IndexSet::range(0, 4, 8)};
    Sequence y = d.atoms()[0];
    std::vector<Token> t(y.tokens().begin(), y.tokens().end());
    t[0] = static_cast<Token>((t[0] + 1) % 4);
    EXPECT_THROW((void)ratio_conditional(d.atoms()[0], Sequence(t, 4), split, oracle, 4, 1, true), Error);
}

}  // namespace
