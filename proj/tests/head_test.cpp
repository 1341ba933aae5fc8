#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "less/gradcheck.hpp"
#include "less/head.hpp"
#include "test_util.hpp"

using namespace less;
using less::testing::GenericLoss;
using less::testing::random_tensor;

TEST(MaskPredict, ZeroQueriesSeeEverything) {
    Rng rng(1);
    auto [m, a] = mask_predict(Tensor({3, 4}, 0.0), random_tensor({9, 4}, rng));
    for (double x : m.data()) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(a, std::vector<std::uint8_t>(27, 1));
}

TEST(MaskPredict, FeatureRowQueryGivesSimilarities) {
    Rng rng(2);
    auto f = random_tensor({6, 3}, rng);
    auto q = gather_rows(f, std::vector<std::size_t>{4});
    auto [m, a] = mask_predict(q, f);
    for (std::size_t n = 0; n < 6; ++n) {
        double dot = 0.0;
        for (std::size_t c = 0; c < 3; ++c) dot += f.at(n, c) * f.at(4, c);
        EXPECT_NEAR(m.at(0, n), dot, 1e-15);
    }
    EXPECT_EQ(a[4], 1);
}

TEST(MaskPredict, MatchesNestedLoopDotProducts) {
    Rng rng(3);
    auto q = random_tensor({5, 7}, rng);
    auto f = random_tensor({11, 7}, rng);
    auto [m, a] = mask_predict(q, f);
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t n = 0; n < 11; ++n) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 7; ++c) dot += q.at(k, c) * f.at(n, c);
            EXPECT_EQ(m.at(k, n), dot);
            EXPECT_EQ(a[k * 11 + n], 1.0 / (1.0 + std::exp(-dot)) >= 0.5 ? 1 : 0);
        }
}

TEST(MaskPredict, WidthMismatchIsDimensionError) {
    EXPECT_THROW(mask_predict(Tensor({2, 3}), Tensor({4, 5})), DimensionError);
}

TEST(MaskedAttention, FullMaskIsUnmasked) {
    ParameterStore ps(4);
    AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
    Rng rng(5);
    auto q = random_tensor({2, 4}, rng);
    auto f = random_tensor({6, 4}, rng);
    auto masked = masked_cross_attention(q, f, std::vector<std::uint8_t>(12, 1), p);
    auto plain = cross_attention(q, f, p);
    EXPECT_EQ(masked.to_vector(), plain.to_vector());
}

TEST(MaskedAttention, SingleVisiblePointGivesItsValue) {
    ParameterStore ps(6);
    AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
    Rng rng(7);
    auto q = random_tensor({2, 4}, rng, -5, 5);
    auto f = random_tensor({6, 4}, rng, -5, 5);
    std::vector<std::uint8_t> mask(12, 0);
    mask[3] = 1;
    mask[6 + 5] = 1;
    auto out = masked_cross_attention(q, f, mask, p);
    auto v = p.value(f);
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_EQ(out.at(0, c), v.at(3, c));
        EXPECT_EQ(out.at(1, c), v.at(5, c));
    }
}

TEST(QueryMaskPredictor, ZeroInitSeesEverything) {
    ParameterStore ps(8);
    QueryMaskPredictor head(ps, "head", {4, 1, 6, MaskSelection::weighted_sum, true});
    Rng rng(9);
    auto state = head.init_state(head.shared_mlp(random_tensor({10, 6}, rng)));
    EXPECT_EQ(state.attention_mask, std::vector<std::uint8_t>(40, 1));
}

TEST(QueryMaskPredictor, SameSeedSameQueries) {
    ParameterStore a(10), b(10);
    QueryMaskPredictor ha(a, "head", {});
    QueryMaskPredictor hb(b, "head", {});
    EXPECT_EQ(ha.query_init().to_vector(), hb.query_init().to_vector());
    EXPECT_EQ(ha.query_init().shape(), (Shape{20, 64}));
}

TEST(QueryMaskPredictor, AttentionMasksAreThresholdsOfLogits) {
    ParameterStore ps(11);
    QueryMaskPredictor head(ps, "head", {5, 3, 8, MaskSelection::weighted_sum, false});
    Rng rng(12);
    auto out = head.forward(random_tensor({30, 8}, rng, -2, 2), random_tensor({8}, rng));
    ASSERT_EQ(out.states.size(), 4u);
    for (const auto& s : out.states) {
        ASSERT_EQ(s.mask_logits.shape(), (Shape{5, 30}));
        std::vector<std::uint8_t> again(150);
        for (std::size_t i = 0; i < 150; ++i)
            again[i] = 1.0 / (1.0 + std::exp(-s.mask_logits[i])) >= 0.5 ? 1 : 0;
        EXPECT_EQ(s.attention_mask, again);
    }
    auto fm = head.shared_mlp(random_tensor({30, 8}, rng));
    auto st = head.init_state(fm);
    EXPECT_EQ(mask_predict(st.queries, fm).second, st.attention_mask);
}

TEST(QueryMaskPredictor, PredictionShapesAndSelfConsistency) {
    ParameterStore ps(13);
    QueryMaskPredictor head(ps, "head", {20, 1, 8, MaskSelection::weighted_sum, false});
    Rng rng(14);
    auto p = head.forward(random_tensor({25, 8}, rng), random_tensor({8}, rng)).prediction;
    ASSERT_EQ(p.mask.size(), 25u);
    ASSERT_EQ(p.weights.numel(), 20u);
    EXPECT_EQ(p.mask, threshold_logits(p.mask_logits));
}

TEST(Qsa, SingleQueryTakesItsProposal) {
    Rng rng(15);
    auto proposals = random_tensor({1, 7}, rng);
    auto p = qsa(random_tensor({1, 3}, rng), random_tensor({3}, rng), proposals, MaskSelection::weighted_sum);
    EXPECT_EQ(p.weights.to_vector(), std::vector<double>{1.0});
    for (std::size_t n = 0; n < 7; ++n) EXPECT_NEAR(p.mask_logits[n], proposals[n], 1e-15);
}

TEST(Qsa, IdenticalQueriesAverageProposals) {
    Rng rng(16);
    Tensor q({3, 2}, std::vector<double>{0.3, -1, 0.3, -1, 0.3, -1});
    auto proposals = random_tensor({3, 5}, rng);
    auto p = qsa(q, random_tensor({2}, rng), proposals, MaskSelection::weighted_sum);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.weights[k], 1.0 / 3.0, 1e-15);
    for (std::size_t n = 0; n < 5; ++n)
        EXPECT_NEAR(p.mask_logits[n], (proposals.at(0, n) + proposals.at(1, n) + proposals.at(2, n)) / 3.0, 1e-14);
}

TEST(Qsa, ArgmaxTiesGoToLowestIndex) {
    std::vector<double> v{0.1, 0.7, 0.2, 0.7};
    EXPECT_EQ(argmax(v), 1u);
}

class QsaProperties : public ::testing::TestWithParam<int> {};

TEST_P(QsaProperties, WeightsAndConvexBounds) {
    Rng rng(100 + GetParam());
    auto q = random_tensor({6, 4}, rng, -2, 2);
    auto s = random_tensor({4}, rng, -2, 2);
    auto proposals = random_tensor({6, 40}, rng, -8, 8);
    auto p = qsa(q, s, proposals, MaskSelection::weighted_sum);
    double total = 0.0;
    for (double r : p.weights.data()) {
        EXPECT_GT(r, 0.0);
        total += r;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
    for (std::size_t n = 0; n < 40; ++n) {
        double lo = proposals.at(0, n), hi = lo;
        for (std::size_t k = 1; k < 6; ++k) {
            lo = std::min(lo, proposals.at(k, n));
            hi = std::max(hi, proposals.at(k, n));
        }
        EXPECT_GE(p.mask_logits[n], lo);
        EXPECT_LE(p.mask_logits[n], hi);
    }
}

TEST_P(QsaProperties, Top1InvariantToPositiveSentenceScale) {
    Rng rng(200 + GetParam());
    auto q = random_tensor({8, 4}, rng, -2, 2);
    auto s = random_tensor({4}, rng, -2, 2);
    auto proposals = random_tensor({8, 10}, rng);
    auto base = qsa(q, s, proposals, MaskSelection::top1);
    const std::size_t best = argmax(base.weights.data());
    for (std::size_t n = 0; n < 10; ++n) EXPECT_EQ(base.mask_logits[n], proposals.at(best, n));
    for (double a : {1e-3, 0.5, 3.0, 250.0}) {
        auto scaled = qsa(q, scale(s, a), proposals, MaskSelection::top1);
        EXPECT_EQ(argmax(scaled.weights.data()), best) << a;
    }
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, QsaProperties, ::testing::Range(0, 10));

class HeadGradient : public ::testing::TestWithParam<int> {};

TEST_P(HeadGradient, MaskedAttentionMatchesFiniteDifferences) {
    ParameterStore ps(300 + GetParam());
    AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
    Rng rng(301 + GetParam());
    less::testing::randomize(ps, rng);
    auto q = random_tensor({2, 4}, rng, -1, 1, true);
    auto f = random_tensor({6, 4}, rng, -1, 1, true);
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
    GenericLoss loss({2, 4}, 302 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(q);
    leaves.push_back(f);
    auto r = check_gradients([&] { return loss(masked_cross_attention(q, f, mask, p)); }, leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

TEST_P(HeadGradient, LayerMatchesFiniteDifferences) {
    ParameterStore ps(400 + GetParam());
    QueryMaskPredictor head(ps, "head", {2, 1, 4, MaskSelection::weighted_sum, false});
    Rng rng(401 + GetParam());
    less::testing::randomize(ps, rng);
    auto f = random_tensor({6, 4}, rng, -1, 1, true);
    GenericLoss loss({2, 6}, 402 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(f);
    auto r = check_gradients(
        [&] {
            auto fm = head.shared_mlp(f);
            return loss(head.layer_step(0, head.init_state(fm), f, fm).mask_logits);
        },
        leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

TEST_P(HeadGradient, EndToEndMatchesFiniteDifferences) {
    ParameterStore ps(500 + GetParam());
    QueryMaskPredictor head(ps, "head", {2, 1, 4, MaskSelection::weighted_sum, false});
    Rng rng(501 + GetParam());
    less::testing::randomize(ps, rng);
    auto f = random_tensor({6, 4}, rng, -1, 1, true);
    auto s = random_tensor({4}, rng, -1, 1, true);
    GenericLoss loss({6}, 502 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(f);
    leaves.push_back(s);
    auto r = check_gradients([&] { return loss(head.forward(f, s).prediction.mask_logits); }, leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, HeadGradient, ::testing::Range(0, 5));
