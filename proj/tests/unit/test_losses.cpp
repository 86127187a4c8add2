#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "infodiff/losses.hpp"
#include "infodiff/predictor.hpp"

using namespace infodiff;
using infodiff::testing::masked;
using infodiff::testing::seq;

namespace {

TEST(KFunction, KnownValues) {
    EXPECT_EQ(k_fn(0.0), 0.0);
    EXPECT_DOUBLE_EQ(k_fn(1.0), -1.0);
    EXPECT_NEAR(k_fn(std::exp(1.0)), 0.0, 1e-15);
    EXPECT_THROW((void)k_fn(-1.0), Error);
}

TEST(KFunction, ScoreEntropyTermMinimizedAtRatio) {
    // s - r log s + K(r) >= 0 with equality at s = r.
    for (double r : {0.1, 1.0, 3.0}) {
        EXPECT_NEAR(r - r * std::log(r) + k_fn(r), 0.0, 1e-14);
        for (double s : {0.05, 0.5, 2.0, 10.0}) EXPECT_GT(s - r * std::log(s) + k_fn(r), 0.0);
    }
}

TEST(DcePointwise, SumsNegativeLogAtMaskedPositions) {
    const Sequence x0 = seq({0, 1, 1}, 2);
    const MaskedSequence x = masked({-1, 1, -1}, 2);
    ProbTable c(3, 2, 0.0);
    c(0, 0) = 0.8;
    c(0, 1) = 0.2;
    c(2, 0) = 0.4;
    c(2, 1) = 0.6;
    const DceLossValue v = dce_from_table(x0, x, c);
    EXPECT_NEAR(v.total, -std::log(0.8) - std::log(0.6), 1e-15);
    EXPECT_EQ(v.per_position[1], 0.0);
    EXPECT_EQ(v.clamp_count, 0u);
}

TEST(DcePointwise, ZeroProbabilityIsClampedAndCounted) {
    const Sequence x0 = seq({0, 1}, 2);
    const MaskedSequence x = masked({-1, -1}, 2);
    ProbTable c(2, 2, 0.0);
    c(0, 1) = 1.0;
    c(1, 1) = 1.0;
    const DceLossValue v = dce_from_table(x0, x, c);
    EXPECT_EQ(v.clamp_count, 1u);
    EXPECT_NEAR(v.total, -std::log(kProbabilityFloor), 1e-9);
}

TEST(DcePointwise, InconsistentStateIsRejected) {
    const auto d = infodiff::testing::small_categorical();
    const OraclePredictor c(d);
    EXPECT_THROW((void)dce_pointwise(seq({0, 0}, 2), masked({1, -1}, 2), c), Error);
}

TEST(DcePointwise, SingleTokenBernoulliClosedForm) {
    // One position, p(A) = 0.3: mdce(A, lambda) = -lambda log 0.3.
    const ExplicitCategorical d({seq({0}, 2), seq({1}, 2)}, {0.3, 0.7});
    for (double lambda : {0.1, 0.5, 0.9}) {
        EXPECT_NEAR(mdce_exact(d, seq({0}, 2), lambda), -lambda * std::log(0.3), 1e-15);
        EXPECT_NEAR(mdce_exact(d, seq({1}, 2), lambda), -lambda * std::log(0.7), 1e-15);
    }
}

TEST(DsePointwise, ZeroAtTrueConditionalRatio) {
    // Scores equal to the forward-kernel ratios make every term vanish.
    const Sequence x0 = seq({0, 1, 2}, 3);
    const auto schedule = NoiseSchedule::constant(1.0);
    const double t = 0.8;
    const auto q = TokenRateMatrix::absorbing(3);
    const MaskedSequence x = masked({-1, 1, -1}, 3);
    const double r = (1.0 - schedule.lambda(t)) / schedule.lambda(t);
    const ScoreFn exact = [&](std::size_t i, Token v) { return v == x0[i] ? r : 1e-300; };
    EXPECT_NEAR(dse_pointwise(x0, x, t, exact, q, schedule), 0.0, 1e-12);
}

TEST(DsePointwise, AbsorbingNeighborsAreUnmaskings) {
    const Sequence x0 = seq({0, 1, 2}, 3);
    const auto schedule = NoiseSchedule::constant(1.0);
    const auto terms = dse_terms(x0, masked({-1, 1, -1}, 3), 0.5, [](std::size_t, Token) { return 1.0; },
                                 TokenRateMatrix::absorbing(3), schedule);
    ASSERT_EQ(terms.terms.size(), 6u);
    for (const auto& term : terms.terms) {
        EXPECT_TRUE(term.position == 0 || term.position == 2);
        EXPECT_DOUBLE_EQ(term.rate, 1.0);
    }
}

TEST(DsePointwise, UniformNeighborsChangeOneToken) {
    const Sequence x0 = seq({0, 1}, 3);
    const auto terms = dse_terms(x0, MaskedSequence(seq({2, 1}, 3)), 0.5, [](std::size_t, Token) { return 1.0; },
                                 TokenRateMatrix::uniform(3), NoiseSchedule::constant(1.0));
    EXPECT_EQ(terms.terms.size(), 4u);
    for (const auto& term : terms.terms) EXPECT_NEAR(term.rate, 1.0 / 3.0, 1e-15);
}

TEST(DsePointwise, NonPositiveScoreWhereRatioPositiveIsError) {
    const Sequence x0 = seq({0, 1}, 2);
    try {
        (void)dse_pointwise(x0, masked({-1, 1}, 2), 0.5, [](std::size_t, Token) { return 0.0; },
                            TokenRateMatrix::absorbing(2), NoiseSchedule::constant(1.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kInvalidScore);
    }
}

TEST(DseDceRelation, PredictorScoreGivesScaledDce) {
    const auto toy = infodiff::testing::toy();
    const auto& d = toy.distribution;
    const OraclePredictor oracle(d);
    const PerturbedPredictor noisy(oracle, 0.7, 31);
    const auto q = TokenRateMatrix::absorbing(4);
    CounterRng rng(6);
    for (const auto& schedule : {NoiseSchedule::constant(1.0), NoiseSchedule::log_linear(1e-3)}) {
        for (int trial = 0; trial < 40; ++trial) {
            const Sequence& x0 = d.atoms()[rng.below(d.atom_count())];
            const double t = 0.05 + 0.9 * rng.uniform();
            const double lambda = schedule.lambda(t);
            MaskedSequence x = sample_forward(x0, lambda, rng);
            if (x.masked_count() == 0) x.mask(3);
            const ProbTable c = noisy.predict(x);
            const double dse = dse_pointwise(x0, x, t, score_from_predictor(c, lambda), q, schedule);
            const double dce = dce_from_table(x0, x, c).total;
            EXPECT_NEAR(dse, dse_from_dce(dce, t, schedule), 1e-11 * (1.0 + std::abs(dse)));
        }
    }
}

TEST(DseDceRelation, PrefactorUsesInstantaneousRate) {
    const auto s = NoiseSchedule::log_linear(1e-3);
    const double t = 0.4;
    const double lambda = s.lambda(t);
    EXPECT_NEAR(dse_dce_prefactor(t, s), s.sigma(t) * (1 - lambda) / lambda, 1e-15);
    EXPECT_THROW((void)dse_dce_prefactor(0.0, s), Error);
}

TEST(Optimality, OracleMinimizesExpectedDce) {
    const auto d = infodiff::testing::toy(32, 6, 5).distribution;
    const OraclePredictor oracle(d);
    for (double lambda : {0.3, 0.7}) {
        double best = 0.0;
        for (std::size_t a = 0; a < d.atom_count(); ++a) {
            best += d.probabilities()[a] * expected_dce(d.atoms()[a], lambda, oracle);
        }
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const PerturbedPredictor p(oracle, 0.05 * static_cast<double>(seed), seed);
            double value = 0.0;
            for (std::size_t a = 0; a < d.atom_count(); ++a) {
                value += d.probabilities()[a] * expected_dce(d.atoms()[a], lambda, p);
            }
            EXPECT_GT(value, best);
        }
    }
}

TEST(Optimality, TrueScoreMinimizesExpectedDse) {
    const auto d = infodiff::testing::toy(16, 5, 9).distribution;
    const auto q = TokenRateMatrix::absorbing(4);
    const auto schedule = NoiseSchedule::constant(1.0);
    const double t = 0.6;
    double best = 0.0;
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        best += d.probabilities()[a] * mdse_exact(d, d.atoms()[a], t, q, schedule);
    }
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        double value = 0.0;
        for (std::size_t a = 0; a < d.atom_count(); ++a) {
            value += d.probabilities()[a] *
                     expected_dse(d.atoms()[a], t, q, schedule, [&](const MaskedSequence& x) -> ScoreFn {
                         const double lambda = schedule.lambda(t);
                         const double f = (1.0 - lambda) / lambda;
                         const auto nj = std::make_shared<NeighborJoint>(d.neighbor_joint(x));
                         CounterRng r = CounterRng(seed).split(hash_state(x.tokens(), seed));
                         auto noise = std::make_shared<std::vector<double>>();
                         for (std::size_t k = 0; k < x.size() * 4; ++k) noise->push_back(0.1 * r.normal());
                         return [=](std::size_t i, Token v) {
                             return f * std::exp(nj->log_joint(i, v) - nj->log_marginal + (*noise)[i * 4 + v]);
                         };
                     });
        }
        EXPECT_GT(value, best);
    }
}

TEST(ExpectedDce, Endpoints) {
    const auto d = infodiff::testing::toy(16, 6, 3).distribution;
    const Sequence& x0 = d.atoms()[0];
    EXPECT_EQ(mdce_exact(d, x0, 0.0), 0.0);
    // Fully masked: sum of -log single-site marginals.
    const ProbTable c = conditionals(d, MaskedSequence::all_masked(6, 4));
    double all_masked = 0.0;
    for (std::size_t i = 0; i < 6; ++i) all_masked -= std::log(c(i, x0[i]));
    EXPECT_NEAR(mdce_exact(d, x0, 1.0), all_masked, 1e-12);
}

}  // namespace
