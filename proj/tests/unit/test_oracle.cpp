#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "infodiff/losses.hpp"
#include "infodiff/oracle.hpp"

using namespace infodiff;
using infodiff::testing::masked;
using infodiff::testing::seq;

namespace {

MarkovChainModel small_chain(std::size_t order = 2, std::size_t n = 3, std::uint64_t seed = 4) {
    MarkovCorpusSpec spec;
    spec.order = order;
    spec.alphabet = std::string("ACGT").substr(0, n);
    spec.window = 8;
    spec.temperature = 0.7;
    spec.seed = seed;
    return build_markov_model(spec);
}

// Sum of p0 over all completions of the masked positions.
double brute_marginal(const OracleDistribution& d, const MaskedSequence& x) {
    const std::size_t n = d.alphabet_size();
    const auto holes = x.masked_positions();
    std::size_t count = 1;
    for (std::size_t k = 0; k < holes.size(); ++k) count *= n;
    double total = 0.0;
    for (std::size_t idx = 0; idx < count; ++idx) {
        std::vector<Token> t(x.tokens().begin(), x.tokens().end());
        std::size_t r = idx;
        for (std::size_t h : holes) {
            t[h] = static_cast<Token>(r % n);
            r /= n;
        }
        const LogProb lp = d.log_prob(Sequence(std::move(t), n));
        if (!lp.off_support) total += std::exp(lp.value);
    }
    return total;
}

TEST(ExplicitCategorical, HandEnumeratedMarginals) {
    const auto d = infodiff::testing::small_categorical();
    EXPECT_NEAR(std::exp(d.log_marginal(masked({0, -1}, 2))), 0.75, 1e-15);
    EXPECT_NEAR(std::exp(d.log_marginal(masked({-1, 1}, 2))), 0.5, 1e-15);
    EXPECT_NEAR(std::exp(d.log_marginal(masked({-1, -1}, 2))), 1.0, 1e-15);
    EXPECT_EQ(d.log_marginal(masked({1, 0}, 2)), kNegInf);
}

TEST(ExplicitCategorical, HandEnumeratedConditionals) {
    const auto d = infodiff::testing::small_categorical();
    const ProbTable all = conditionals(d, masked({-1, -1}, 2));
    EXPECT_NEAR(all(0, 0), 0.75, 1e-15);
    EXPECT_NEAR(all(1, 1), 0.5, 1e-15);
    const auto given_a = conditional(d, masked({0, -1}, 2), 1);
    EXPECT_NEAR(given_a[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(given_a[1], 1.0 / 3.0, 1e-15);
    const auto given_b = conditional(d, masked({-1, 1}, 2), 0);
    EXPECT_NEAR(given_b[0], 0.5, 1e-15);
}

TEST(ExplicitCategorical, ZeroProbabilityContextIsAnError) {
    const auto d = infodiff::testing::small_categorical();
    try {
        (void)conditional(d, masked({1, 0}, 2), 0);
        FAIL();
    } catch (const Error&) {
    }
    try {
        (void)conditionals(d, masked({1, 0}, 2));
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kZeroConditioningEvent);
    }
}

TEST(ExplicitCategorical, OffSupportSequenceIsFlagged) {
    const auto d = infodiff::testing::small_categorical();
    const LogProb lp = d.log_prob(seq({1, 0}, 2));
    EXPECT_TRUE(lp.off_support);
    EXPECT_EQ(lp.value, kNegInf);
    EXPECT_FALSE(d.log_prob(seq({0, 1}, 2)).off_support);
}

TEST(ExplicitCategorical, ToyMarginalsMatchBruteForce) {
    const auto toy = infodiff::testing::toy();
    const auto& d = toy.distribution;
    CounterRng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const Sequence& x0 = d.atoms()[rng.below(d.atom_count())];
        const MaskedSequence x = sample_forward(x0, 0.5, rng);
        EXPECT_NEAR(std::exp(d.log_marginal(x)), brute_marginal(d, x), 1e-12);
    }
}

TEST(MarkovChain, RowsAreDistributionsAndStationaryIsFixed) {
    const auto m = small_chain();
    EXPECT_EQ(m.contexts(), 9u);
    const auto& pi = m.initial();
    std::vector<double> next(m.contexts(), 0.0);
    for (std::size_t s = 0; s < m.contexts(); ++s) {
        for (std::size_t v = 0; v < m.alphabet_size(); ++v) next[m.next_context(s, v)] += pi[s] * m.transition(s, v);
    }
    for (std::size_t s = 0; s < m.contexts(); ++s) EXPECT_NEAR(next[s], pi[s], 1e-12);
}

TEST(MarkovChain, RejectsUnnormalizedRows) {
    EXPECT_THROW(MarkovChainModel(1, 2, {0.5, 0.5, 0.7, 0.2}), Error);
}

TEST(MarkovWindow, LogProbIsStationaryStartTimesTransitions) {
    const auto m = small_chain();
    const MarkovWindowOracle d(m, 6);
    const Sequence x = seq({0, 2, 1, 1, 0, 2}, 3);
    double lp = std::log(m.initial()[m.encode_context(x.tokens().first(2))]);
    for (std::size_t t = 2; t < 6; ++t) lp += std::log(m.transition(m.encode_context(x.tokens().subspan(t - 2, 2)), x[t]));
    EXPECT_NEAR(d.log_prob(x).value, lp, 1e-12);
}

TEST(MarkovWindow, WindowProbabilitiesSumToOne) {
    const MarkovWindowOracle d(small_chain(), 5);
    double total = 0.0;
    for (const auto& [x, p] : d.support(kDefaultStateCap)) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(MarkovWindow, MarginalsMatchEnumeration) {
    const MarkovWindowOracle d(small_chain(), 7);
    CounterRng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Token> t(7);
        for (auto& v : t) v = static_cast<Token>(rng.below(3));
        const MaskedSequence x = sample_forward(Sequence(t, 3), 0.6, rng);
        EXPECT_NEAR(std::exp(d.log_marginal(x)), brute_marginal(d, x), 1e-13);
    }
}

TEST(MarkovWindow, ConditionalsMatchEnumeration) {
    const MarkovWindowOracle d(small_chain(3, 2, 9), 7);
    CounterRng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Token> t(7);
        for (auto& v : t) v = static_cast<Token>(rng.below(2));
        MaskedSequence x = sample_forward(Sequence(t, 2), 0.5, rng);
        if (x.masked_count() == 0) x.mask(3);
        if (d.log_marginal(x) == kNegInf) continue;
        const ProbTable c = conditionals(d, x);
        const double denom = brute_marginal(d, x);
        for (std::size_t i : x.masked_positions()) {
            for (Token v = 0; v < 2; ++v) {
                MaskedSequence y = x;
                y.set(i, v);
                EXPECT_NEAR(c(i, v), brute_marginal(d, y) / denom, 1e-12);
            }
        }
    }
}

TEST(MarkovWindow, ResponseGivenPromptMatchesChainRule) {
    const auto m = small_chain(2, 3, 12);
    const MarkovWindowOracle d(m, 12);
    CounterRng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Token> t(12);
        for (auto& v : t) v = static_cast<Token>(rng.below(3));
        const Sequence x(t, 3);
        const double truth = conditional_nll(d, x, IndexSet::range(6, 12, 12), IndexSet::range(0, 6, 12));
        EXPECT_NEAR(truth, m.chain_rule_nll(x, 6), 1e-10);
    }
}

TEST(MarkovWindow, SupportBeyondCapIsCapExceeded) {
    const MarkovWindowOracle d(small_chain(), 32);
    try {
        (void)d.support(1024);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCapExceeded);
    }
}

TEST(Scores, AbsorbingRatioEqualsTimeFreeForm) {
    const auto toy = infodiff::testing::toy();
    const auto& d = toy.distribution;
    const auto schedule = NoiseSchedule::constant(1.0);
    const auto q = TokenRateMatrix::absorbing(4);
    CounterRng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const Sequence& x0 = d.atoms()[rng.below(d.atom_count())];
        const double t = 0.1 + 1.5 * rng.uniform();
        MaskedSequence x = sample_forward(x0, 0.6, rng);
        if (x.masked_count() == 0) x.mask(0);
        const std::size_t i = x.masked_positions().front();
        const auto c = conditional(d, x, i);
        for (Token v = 0; v < 4; ++v) {
            if (c[v] == 0.0) continue;
            MaskedSequence y = x;
            y.set(i, v);
            EXPECT_NEAR(true_score(d, x, y, t, q, schedule), true_score_time_free(d, x, i, v, schedule.lambda(t)),
                        1e-10 * (1.0 + true_score_time_free(d, x, i, v, schedule.lambda(t))));
        }
    }
}

TEST(Scores, UniformKernelScoreMatchesEnumeration) {
    const auto d = infodiff::testing::toy(6, 2, 7).distribution;
    ASSERT_EQ(d.alphabet_size(), 4u);
    const auto q = TokenRateMatrix::uniform(4);
    const auto schedule = NoiseSchedule::constant(1.0);
    const double t = 0.7;
    const auto log_pt = log_diffused_all_states(d, q, schedule.sigma_bar(t));
    const MaskedSequence x = masked({0, 1}, 4);
    const MaskedSequence y = masked({0, 3}, 4);
    const double expected = std::exp(log_pt[encode_state(y.tokens(), 4)] - log_pt[encode_state(x.tokens(), 4)]);
    EXPECT_NEAR(true_score(d, x, y, t, q, schedule), expected, 1e-12);
}

TEST(MutualInformation, EndpointsAndMonotoneDecrease) {
    const auto d = infodiff::testing::toy(16, 6, 3).distribution;
    EXPECT_NEAR(mutual_information(d, 0.0), entropy(d), 1e-12);
    EXPECT_NEAR(mutual_information(d, 1.0), 0.0, 1e-12);
    double prev = mutual_information(d, 0.0);
    for (double lambda = 0.1; lambda < 1.0; lambda += 0.1) {
        const double mi = mutual_information(d, lambda);
        EXPECT_LE(mi, prev + 1e-12);
        EXPECT_GE(mi, -1e-12);
        prev = mi;
    }
}

TEST(MutualInformation, SlopeIsMinusMeanOptimalDceOverLambda) {
    const auto d = infodiff::testing::toy(16, 6, 3).distribution;
    const double h = 1e-5;
    for (double lambda : {0.2, 0.5, 0.8}) {
        const double fd = (mutual_information(d, lambda + h) - mutual_information(d, lambda - h)) / (2 * h);
        double mdce = 0.0;
        for (std::size_t a = 0; a < d.atom_count(); ++a) {
            mdce += d.probabilities()[a] * mdce_exact(d, d.atoms()[a], lambda);
        }
        EXPECT_NEAR(fd, -mdce / lambda, 1e-6);
    }
}

TEST(KlEnumeration, CapIsEnforced) {
    const auto d = infodiff::testing::toy(4, 8, 1).distribution;
    try {
        (void)kl_conditional_vs_marginal(d, d.atoms()[0], 0.5, 4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCapExceeded);
    }
}

}  // namespace
