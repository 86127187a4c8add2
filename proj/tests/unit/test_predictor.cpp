#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "infodiff/learned_predictor.hpp"
#include "infodiff/losses.hpp"
#include "infodiff/parallel.hpp"

using namespace infodiff;
using infodiff::testing::seq;

namespace {

ModelShape small_shape(HeadKind head, std::size_t n = 3, std::size_t length = 6) {
    ModelShape s;
    s.head = head;
    s.alphabet_size = n;
    s.length = length;
    s.d_emb = 5;
    s.hidden = 7;
    s.window = 2;
    return s;
}

std::vector<Sequence> random_sequences(std::size_t count, std::size_t n, std::size_t length, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<Sequence> out;
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<Token> t(length);
        for (auto& v : t) v = static_cast<Token>(rng.below(n));
        out.emplace_back(std::move(t), n);
    }
    return out;
}

TrainConfig quick_config(Optimizer opt) {
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch_size = 16;
    cfg.learning_rate = opt == Optimizer::kAdam ? 0.01 : 0.05;
    cfg.optimizer = opt;
    cfg.seed = 5;
    return cfg;
}

TEST(LearnedPredictor, RowsAreDistributionsAtMaskedPositionsOnly) {
    for (HeadKind head : {HeadKind::kTanh, HeadKind::kMixture}) {
        const TrainState st = init_train_state(small_shape(head), 3);
        const MaskedSequence x = infodiff::testing::masked({0, -1, 2, -1, -1, 1}, 3);
        const ProbTable c = st.model.predict(x);
        for (std::size_t i = 0; i < 6; ++i) {
            double total = 0.0;
            for (std::size_t v = 0; v < 3; ++v) {
                EXPECT_GE(c(i, v), 0.0);
                total += c(i, v);
            }
            EXPECT_NEAR(total, x.is_masked(i) ? 1.0 : 0.0, 1e-12);
        }
    }
}

TEST(LearnedPredictor, ShapeMismatchIsRejected) {
    const TrainState st = init_train_state(small_shape(HeadKind::kTanh), 3);
    EXPECT_THROW((void)st.model.predict(MaskedSequence::all_masked(5, 3)), Error);
    EXPECT_THROW((void)st.model.predict(MaskedSequence::all_masked(6, 4)), Error);
}

// Central differences on 20 random parameter points per head, 25 random
// coordinates each; relative error against max(|analytic|, |numeric|, 1e-3).
TEST(LearnedPredictor, AnalyticGradientMatchesFiniteDifferences) {
    const double h = 1e-5;
    for (HeadKind head : {HeadKind::kTanh, HeadKind::kMixture}) {
        const ModelShape shape = small_shape(head);
        double worst = 0.0;
        for (std::uint64_t point = 0; point < 20; ++point) {
            TrainState st = init_train_state(shape, 100 + point);
            CounterRng rng(point);
            // Random nonzero biases so every block is exercised away from init.
            for (double& v : st.model.params().data()) v += 0.1 * rng.normal();
            const Sequence x0 = random_sequences(1, 3, 6, 900 + point).front();
            std::vector<Token> masked(x0.tokens().begin(), x0.tokens().end());
            for (auto& t : masked) {
                if (rng.uniform() < 0.6) t = 3;
            }
            masked[point % 6] = 3;
            ModelParams grad(shape);
            (void)st.model.loss_and_gradient(x0, masked, 1.3, &grad);
            for (int k = 0; k < 25; ++k) {
                const std::size_t idx = rng.below(grad.size());
                double& p = st.model.params().data()[idx];
                const double saved = p;
                p = saved + h;
                const double up = st.model.loss_and_gradient(x0, masked, 1.3, nullptr);
                p = saved - h;
                const double down = st.model.loss_and_gradient(x0, masked, 1.3, nullptr);
                p = saved;
                const double numeric = (up - down) / (2 * h);
                const double analytic = grad.data()[idx];
                const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-3});
                worst = std::max(worst, rel);
            }
        }
        EXPECT_LE(worst, 1e-5) << (head == HeadKind::kTanh ? "tanh" : "mixture");
    }
}

TEST(LearnedPredictor, LossMatchesDceOfPrediction) {
    const TrainState st = init_train_state(small_shape(HeadKind::kMixture), 8);
    const Sequence x0 = seq({0, 1, 2, 2, 1, 0}, 3);
    const MaskedSequence x = infodiff::testing::masked({-1, 1, -1, 2, -1, 0}, 3);
    const double loss = st.model.loss_and_gradient(x0, x.tokens(), 1.0, nullptr);
    EXPECT_NEAR(loss, dce_pointwise(x0, x, st.model).total, 1e-12);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    for (Optimizer opt : {Optimizer::kSgdMomentum, Optimizer::kAdam}) {
        TrainState st = init_train_state(small_shape(HeadKind::kTanh), 4);
        const auto data = random_sequences(50, 3, 6, 1);
        TrainConfig cfg = quick_config(opt);
        cfg.steps = 5;
        (void)train_dce(st, data, cfg);
        const std::string bytes = serialize_checkpoint(st);
        const TrainState back = deserialize_checkpoint(bytes);
        EXPECT_EQ(serialize_checkpoint(back), bytes);
        EXPECT_EQ(back.step, 5u);
        const MaskedSequence x = MaskedSequence::all_masked(6, 3);
        const ProbTable pa = back.model.predict(x);
        const ProbTable pb = st.model.predict(x);
        const auto a = pa.data();
        const auto b = pb.data();
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
    const std::string bytes = serialize_checkpoint(init_train_state(small_shape(HeadKind::kTanh), 4));
    for (const std::string& bad : {bytes.substr(0, bytes.size() - 3), std::string("NOTACKPT") + bytes.substr(8),
                                   bytes + "x"}) {
        try {
            (void)deserialize_checkpoint(bad);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::kFormat);
        }
    }
}

TEST(Training, ResumeFromCheckpointMatchesStraightRun) {
    const auto data = random_sequences(200, 3, 6, 2);
    for (Optimizer opt : {Optimizer::kSgdMomentum, Optimizer::kAdam}) {
        const TrainConfig cfg = quick_config(opt);
        TrainState straight = init_train_state(small_shape(HeadKind::kTanh), 7);
        const TrainLog full = train_dce(straight, data, cfg);

        TrainState first = init_train_state(small_shape(HeadKind::kTanh), 7);
        TrainConfig half = cfg;
        std::string saved;
        half.checkpoint_interval = 30;
        (void)train_dce(first, data, half, [&](const TrainState& s) {
            if (s.step == 30) saved = serialize_checkpoint(s);
        });
        ASSERT_FALSE(saved.empty());
        TrainState resumed = deserialize_checkpoint(saved);
        const TrainLog tail = train_dce(resumed, data, cfg);
        ASSERT_EQ(tail.losses.size(), 30u);
        for (std::size_t k = 0; k < 30; ++k) {
            EXPECT_EQ(tail.losses[k].first, full.losses[30 + k].first);
            EXPECT_EQ(tail.losses[k].second, full.losses[30 + k].second);
        }
        EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(straight));
    }
}

TEST(Training, ResultDoesNotDependOnThreadCount) {
    const auto data = random_sequences(100, 3, 6, 3);
    const TrainConfig cfg = quick_config(Optimizer::kSgdMomentum);
    const std::size_t saved = worker_threads();
    set_worker_threads(1);
    TrainState a = init_train_state(small_shape(HeadKind::kMixture), 9);
    (void)train_dce(a, data, cfg);
    set_worker_threads(4);
    TrainState b = init_train_state(small_shape(HeadKind::kMixture), 9);
    (void)train_dce(b, data, cfg);
    set_worker_threads(saved);
    EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Training, SingleAtomIsLearned) {
    const Sequence atom = seq({2, 0, 1, 1, 0, 2}, 3);
    const std::vector<Sequence> data(1, atom);
    TrainState st = init_train_state(small_shape(HeadKind::kTanh), 11);
    TrainConfig cfg = quick_config(Optimizer::kAdam);
    cfg.steps = 300;
    cfg.learning_rate = 0.03;
    (void)train_dce(st, data, cfg);
    const ProbTable c = st.model.predict(MaskedSequence::all_masked(6, 3));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_GT(c(i, atom[i]), 0.95);
}

TEST(Training, IndependentTokensRecoverMarginals) {
    const std::vector<std::vector<double>> marginals = {{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}, {0.3, 0.3, 0.4}, {0.5, 0.25, 0.25}};
    const auto d = infodiff::testing::product_distribution(marginals);
    CounterRng rng(21);
    const auto data = draw_from_categorical(d, 20000, rng);
    ModelShape shape = small_shape(HeadKind::kTanh, 3, 4);
    TrainState st = init_train_state(shape, 12);
    TrainConfig cfg = quick_config(Optimizer::kAdam);
    cfg.steps = 1500;
    cfg.batch_size = 64;
    cfg.learning_rate = 0.01;
    (void)train_dce(st, data, cfg);
    CounterRng probe(22);
    double worst_tv = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        MaskedSequence x = sample_forward(data[probe.below(data.size())], 0.5, probe);
        if (x.masked_count() == 0) x.mask(0);
        const ProbTable c = st.model.predict(x);
        for (std::size_t i : x.masked_positions()) {
            double tv = 0.0;
            for (std::size_t v = 0; v < 3; ++v) tv += 0.5 * std::abs(c(i, v) - marginals[i][v]);
            worst_tv = std::max(worst_tv, tv);
        }
    }
    EXPECT_LT(worst_tv, 0.05);
}

TEST(Training, EmptyDataAndBadConfigAreRejected) {
    TrainState st = init_train_state(small_shape(HeadKind::kTanh), 1);
    EXPECT_THROW((void)train_dce(st, {}, quick_config(Optimizer::kAdam)), Error);
    TrainConfig bad = quick_config(Optimizer::kAdam);
    bad.learning_rate = -1.0;
    try {
        bad.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kConfig);
    }
}

}  // namespace
