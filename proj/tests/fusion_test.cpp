#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "less/fusion.hpp"
#include "less/gradcheck.hpp"
#include "test_util.hpp"

using namespace less;
using less::testing::GenericLoss;
using less::testing::random_tensor;

namespace {

void zero(Tensor t) {
    for (auto& x : t.mutable_data()) x = 0.0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(CrossAttention, SingleKeyGivesValueRow) {
    ParameterStore ps(1);
    AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
    Rng rng(2);
    auto q = random_tensor({5, 4}, rng);
    auto kv = random_tensor({1, 4}, rng);
    auto out = cross_attention(q, kv, p);
    auto v = p.value(kv);
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(n, c), v[c], 1e-15);
}

TEST(CrossAttention, EqualLogitsAverageValues) {
    ParameterStore ps(3);
    AttentionProjections p{Linear(ps, "q", 3, 3), Linear(ps, "k", 3, 3), Linear(ps, "v", 3, 3)};
    zero(p.query.weight);
    Rng rng(4);
    auto q = random_tensor({2, 3}, rng);
    auto kv = random_tensor({4, 3}, rng);
    auto out = cross_attention(q, kv, p);
    auto mean_v = mean_rows(p.value(kv));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(n, c), mean_v[c], 1e-14);
}

TEST(CrossAttention, WidthMismatchIsDimensionError) {
    ParameterStore ps(5);
    AttentionProjections p{Linear(ps, "q", 3, 3), Linear(ps, "k", 3, 3), Linear(ps, "v", 3, 3)};
    EXPECT_THROW(cross_attention(Tensor({2, 3}), Tensor({2, 4}), p), DimensionError);
}

TEST(Pwca, ZeroGateOutputIsIdentity) {
    ParameterStore ps(6);
    PwcaStage stage(ps, "s", 8, 6, FusionMode::pwca);
    zero(ps.get("s.gate.fc2.weight"));
    zero(ps.get("s.gate.fc2.bias"));
    Rng rng(7);
    auto v = random_tensor({10, 6}, rng, -3, 3);
    auto out = stage.apply(v, random_tensor({3, 8}, rng));
    EXPECT_EQ(out.to_vector(), v.to_vector());
}

TEST(Pwca, FusedBranchBoundedByOne) {
    ParameterStore ps(8);
    PwcaStage stage(ps, "s", 8, 6, FusionMode::pwca);
    Rng rng(9);
    less::testing::randomize(ps, rng, -3, 3);
    auto v = random_tensor({20, 6}, rng, -5, 5);
    auto out = stage.apply(v, random_tensor({4, 8}, rng, -3, 3));
    EXPECT_LE(max_abs_diff(out, v), 1.0);
    EXPECT_GT(max_abs_diff(out, v), 0.5);
}

TEST(Pwca, InvariantToWordOrder) {
    ParameterStore ps(10);
    PwcaStage stage(ps, "s", 5, 4, FusionMode::pwca);
    Rng rng(11);
    auto v = random_tensor({7, 4}, rng);
    auto w = random_tensor({3, 5}, rng);
    const std::vector<std::size_t> perm{2, 0, 1};
    EXPECT_LT(max_abs_diff(stage.apply(v, w), stage.apply(v, gather_rows(w, perm))), 1e-9);
}

TEST(Pwca, StageWidthMismatchIsDimensionError) {
    ParameterStore ps(12);
    PwcaStage stage(ps, "s", 5, 4, FusionMode::pwca);
    EXPECT_THROW(stage.apply(Tensor({3, 5}), Tensor({2, 5})), DimensionError);
    EXPECT_THROW(stage.apply(Tensor({3, 4}), Tensor({2, 4})), DimensionError);
}

TEST(BaselineFuse, ZeroWordsIsIdentity) {
    Rng rng(13);
    auto v = random_tensor({6, 3}, rng);
    EXPECT_EQ(baseline_fuse(v, Tensor({2, 3}, 0.0)).to_vector(), v.to_vector());
}

TEST(BaselineFuse, ConstantWordShiftsEveryVoxel) {
    Rng rng(14);
    auto v = random_tensor({6, 3}, rng);
    Tensor words({4, 3}, std::vector<double>{0.5, -1, 2, 0.5, -1, 2, 0.5, -1, 2, 0.5, -1, 2});
    auto out = baseline_fuse(v, words);
    const double c[3] = {0.5, -1, 2};
    for (std::size_t n = 0; n < 6; ++n)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out.at(n, k), v.at(n, k) + c[k], 1e-15);
}

TEST(BaselineFuse, DiffersFromPwca) {
    ParameterStore ps(15);
    PwcaStage pw(ps, "p", 5, 4, FusionMode::pwca);
    ParameterStore ps2(15);
    PwcaStage base(ps2, "p", 5, 4, FusionMode::baseline_add);
    EXPECT_EQ(ps2.get("p.word_proj").to_vector(), ps.get("p.word_proj").to_vector());
    Rng rng(16);
    auto v = random_tensor({5, 4}, rng);
    auto w = random_tensor({3, 5}, rng);
    EXPECT_GT(max_abs_diff(pw.apply(v, w), base.apply(v, w)), 1e-3);
}

TEST(PointWordFusion, OneStagePerWidth) {
    ParameterStore ps(17);
    PointWordFusion f(ps, "fusion", 8, {16, 32, 48, 64, 80}, FusionMode::pwca);
    ASSERT_EQ(f.size(), 5u);
    EXPECT_EQ(f.stage(4).width(), 80u);
    EXPECT_EQ(ps.get("fusion.stage3.word_proj").shape(), (Shape{8, 48}));
}

class FusionGradient : public ::testing::TestWithParam<int> {};

TEST_P(FusionGradient, AttentionMatchesFiniteDifferences) {
    ParameterStore ps(30 + GetParam());
    AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
    Rng rng(31 + GetParam());
    less::testing::randomize(ps, rng);
    auto q = random_tensor({5, 4}, rng, -1, 1, true);
    auto kv = random_tensor({3, 4}, rng, -1, 1, true);
    GenericLoss loss({5, 4}, 32 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(q);
    leaves.push_back(kv);
    auto r = check_gradients([&] { return loss(cross_attention(q, kv, p)); }, leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

TEST_P(FusionGradient, PwcaStageMatchesFiniteDifferences) {
    ParameterStore ps(40 + GetParam());
    PwcaStage stage(ps, "s", 5, 4, FusionMode::pwca);
    Rng rng(41 + GetParam());
    less::testing::randomize(ps, rng);
    auto v = random_tensor({6, 4}, rng, -1, 1, true);
    auto w = random_tensor({3, 5}, rng, -1, 1, true);
    GenericLoss loss({6, 4}, 42 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(v);
    leaves.push_back(w);
    auto r = check_gradients([&] { return loss(stage.apply(v, w)); }, leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
    EXPECT_GT(r.coordinates, 0u);
}

TEST_P(FusionGradient, WordGradientNonzero) {
    ParameterStore ps(50 + GetParam());
    PwcaStage stage(ps, "s", 5, 4, FusionMode::pwca);
    Rng rng(51 + GetParam());
    auto v = random_tensor({6, 4}, rng);
    auto w = random_tensor({3, 5}, rng, -1, 1, true);
    GenericLoss loss({6, 4}, 52 + GetParam());
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        l = loss(stage.apply(v, w));
    }
    backward(l, tape);
    double mag = 0.0;
    for (double g : w.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0);
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, FusionGradient, ::testing::Range(0, 5));
