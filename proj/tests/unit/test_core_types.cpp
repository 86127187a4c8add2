#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "infodiff/core_types.hpp"
#include "infodiff/rng.hpp"

using namespace infodiff;
using infodiff::testing::seq;

namespace {

const Alphabet kDna("ATGC");

TEST(ApplyMask, KeepAllIsIdentity) {
    const Sequence x = kDna.parse("ATGC");
    EXPECT_EQ(kDna.render(apply_mask(x, IndexSet::full(4))), "ATGC");
}

TEST(ApplyMask, KeepNoneMasksEverything) {
    const Sequence x = kDna.parse("ATGC");
    const MaskedSequence m = apply_mask(x, IndexSet({}, 4));
    EXPECT_EQ(kDna.render(m), "????");
    EXPECT_EQ(m.masked_count(), 4u);
}

TEST(ApplyMask, KeepsSelectedPositions) {
    const Sequence x = kDna.parse("ATGC");
    EXPECT_EQ(kDna.render(apply_mask(x, IndexSet::from_one_based({2, 4}, 4))), "?T?C");
}

TEST(ApplyMask, OutOfRangeIndexIsBoundsError) {
    try {
        (void)IndexSet::from_one_based({5}, 4);
        FAIL() << "expected a bounds error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kBounds);
    }
    const Sequence x = kDna.parse("ATG");
    EXPECT_THROW((void)apply_mask(x, IndexSet::full(4)), Error);
}

TEST(UnmaskedSubsequence, ReportsPositionsAndTokens) {
    const auto [idx, tokens] = unmasked_subsequence(kDna.parse_masked("?T?C"));
    EXPECT_EQ(idx.to_one_based_string(), "{2,4}");
    EXPECT_EQ(kDna.render(tokens), "TC");

    const auto [all, all_tokens] = unmasked_subsequence(kDna.parse_masked("ATGC"));
    EXPECT_EQ(all.to_one_based_string(), "{1,2,3,4}");
    EXPECT_EQ(kDna.render(all_tokens), "ATGC");

    const auto [none, none_tokens] = unmasked_subsequence(kDna.parse_masked("??"));
    EXPECT_TRUE(none.empty());
    EXPECT_TRUE(none_tokens.empty());
}

TEST(UnmaskedSubsequence, RoundTripsRandomMasks) {
    CounterRng rng(42);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t length = 1 + rng.below(12);
        std::vector<Token> tokens(length);
        for (auto& t : tokens) t = static_cast<Token>(rng.below(4));
        const Sequence x(tokens, 4);
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < length; ++i) {
            if (rng.bernoulli(0.5)) keep.push_back(i);
        }
        const IndexSet kept(keep, length);
        const MaskedSequence m = apply_mask(x, kept);
        const auto [idx, sub] = unmasked_subsequence(m);
        ASSERT_EQ(idx.size(), kept.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            EXPECT_EQ(idx[k], kept[k]);
            EXPECT_EQ(sub[k], x[kept[k]]);
        }
        // re-masking the projection with the same keep set changes nothing
        MaskedSequence again = m;
        for (std::size_t i = 0; i < length; ++i) {
            if (!kept.contains(i)) again.mask(i);
        }
        EXPECT_EQ(again.tokens().size(), m.tokens().size());
        EXPECT_TRUE(std::equal(again.tokens().begin(), again.tokens().end(), m.tokens().begin()));
    }
}

TEST(IndexSet, SortsAndRejectsDuplicates) {
    const IndexSet s({3, 0, 2}, 5);
    EXPECT_EQ(s.to_one_based_string(), "{1,3,4}");
    EXPECT_THROW(IndexSet({1, 1}, 5), Error);
    EXPECT_EQ(s.complement().to_one_based_string(), "{2,5}");
    EXPECT_TRUE(s.disjoint_with(s.complement()));
}

TEST(Sequence, RejectsMaskTokenAndOutOfAlphabet) {
    EXPECT_THROW(Sequence(std::vector<Token>{0, 4}, 4), Error);
    EXPECT_THROW(Sequence(std::vector<Token>{}, 4), Error);
    EXPECT_NO_THROW(MaskedSequence(std::vector<Token>{0, 4}, 4));
}

TEST(Alphabet, MaskCharacterOnlyInDebugParsing) {
    EXPECT_THROW((void)kDna.parse("A?"), Error);
    EXPECT_EQ(kDna.parse_masked("A?").masked_count(), 1u);
    EXPECT_THROW(Alphabet("AA"), Error);
    EXPECT_THROW(Alphabet("A?"), Error);
}

TEST(CounterRng, StreamIsStableAcrossBuilds) {
    CounterRng rng(0);
    // mix64(mix64(0 ^ salt) + 1 * golden)
    const std::uint64_t key = mix64(0x6A09E667F3BCC909ULL);
    EXPECT_EQ(rng.next(), mix64(key + 0x9E3779B97F4A7C15ULL));
    CounterRng a(5), b(5);
    for (int k = 0; k < 10; ++k) EXPECT_EQ(a.uniform(), b.uniform());
    EXPECT_NE(CounterRng(5).split(1).next(), CounterRng(5).split(2).next());
}

TEST(CounterRng, BelowIsUniform) {
    CounterRng rng(3);
    std::vector<int> counts(7, 0);
    const int draws = 70000;
    for (int k = 0; k < draws; ++k) ++counts[rng.below(7)];
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - draws / 7.0) * (c - draws / 7.0) / (draws / 7.0);
    EXPECT_LT(chi2, 16.81);  // 99% quantile, 6 dof
}

}  // namespace
