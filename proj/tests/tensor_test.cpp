#include <gtest/gtest.h>

#include <cmath>

#include "less/gradcheck.hpp"
#include "less/ops.hpp"
#include "less/rng.hpp"

using namespace less;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(grad);
    return t;
}

std::vector<double> triple_loop(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.at(i, p) * b.at(p, j);
    return c;
}

}  // namespace

TEST(Matmul, IdentityAndBasis) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(matmul(eye, m).to_vector(), (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(matmul(Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {5, 7})).to_vector(), std::vector<double>{5});
}

TEST(Matmul, MatchesTripleLoop) {
    Rng rng(1);
    for (int rep = 0; rep < 5; ++rep) {
        auto a = random_tensor({3, 4}, rng, -2, 2, false);
        auto b = random_tensor({4, 2}, rng, -2, 2, false);
        EXPECT_EQ(matmul(a, b).to_vector(), triple_loop(a, b));
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    }
}

TEST(Matmul, Associative) {
    Rng rng(2);
    auto a = random_tensor({3, 4}, rng, -2, 2, false);
    auto b = random_tensor({4, 5}, rng, -2, 2, false);
    auto c = random_tensor({5, 2}, rng, -2, 2, false);
    auto l = matmul(matmul(a, b), c).to_vector();
    auto r = matmul(a, matmul(b, c)).to_vector();
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[i], 1e-9);
}

TEST(Sigmoid, Values) {
    EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_NEAR(sigmoid(Tensor::scalar(10.0)).item(), 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
    EXPECT_NEAR(sigmoid(Tensor::scalar(10.0)).item(), 0.9999546, 1e-7);

    Tensor x = Tensor::parameter({1}, {0.0});
    Tape tape;
    Tensor y;
    {
        GradScope s(tape);
        y = sigmoid(x);
    }
    backward(y, tape);
    EXPECT_EQ(x.grad()[0], 0.25);
}

TEST(Softmax, ClosedForms) {
    auto u = softmax(Tensor({3}, {7, 7, 7}), 0).to_vector();
    for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    auto p = softmax(Tensor({2}, {0.0, std::log(3.0)}), 0).to_vector();
    EXPECT_NEAR(p[0], 0.25, 1e-15);
    EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, MatchesUnstabilizedOracle) {
    Rng rng(3);
    auto x = random_tensor({20}, rng, -2, 2, false);
    auto y = softmax(x, 0).to_vector();
    double z = 0.0;
    for (double v : x.data()) z += std::exp(v);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(y[i], std::exp(x[i]) / z, 1e-12);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        auto x = random_tensor({4, 6}, rng, -5, 5, false);
        for (std::size_t axis : {0u, 1u}) {
            auto y = softmax(x, axis);
            auto y2 = softmax(shift(x, rng.uniform(-50, 50)), axis);
            if (axis == 1) {
                for (std::size_t r = 0; r < 4; ++r) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < 6; ++c) s += y.at(r, c);
                    EXPECT_NEAR(s, 1.0, 1e-12);
                }
            } else {
                for (std::size_t c = 0; c < 6; ++c) {
                    double s = 0.0;
                    for (std::size_t r = 0; r < 4; ++r) s += y.at(r, c);
                    EXPECT_NEAR(s, 1.0, 1e-12);
                }
            }
            for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], y2[i], 1e-12);
        }
    }
}

TEST(Elementwise, Basics) {
    EXPECT_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
    EXPECT_EQ(mean(Tensor({4}, {1, 2, 3, 6})).item(), 3.0);
    EXPECT_THROW(add(Tensor({2}), Tensor({3})), DimensionError);

    Tensor a = Tensor::parameter({2}, {1, 2});
    Tensor b = Tensor::parameter({2}, {3, 4});
    Tape tape;
    Tensor out;
    {
        GradScope s(tape);
        out = sum(mul(add(a, b), Tensor({2}, {5, -1})));
    }
    backward(out, tape);
    // upstream grad of add is (5,-1), passed unchanged to both inputs
    EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{5, -1}));
    EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()), (std::vector<double>{5, -1}));
}

TEST(Elementwise, ScalarBroadcast) {
    Tensor x({3}, {1, 2, 3});
    EXPECT_EQ(mul(x, Tensor::scalar(2)).to_vector(), (std::vector<double>{2, 4, 6}));
    EXPECT_EQ(sub(Tensor::scalar(1), x).to_vector(), (std::vector<double>{0, -1, -2}));
}

TEST(Backward, SumAndQuadratic) {
    Tensor x = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        l = sum(x);
    }
    backward(l, tape);
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);

    Tensor y = Tensor::parameter({2}, {1, 2});
    Tape t2;
    {
        GradScope s(t2);
        l = sum(mul(y, y));
    }
    backward(l, t2);
    EXPECT_EQ(y.grad()[0], 2.0);
    EXPECT_EQ(y.grad()[1], 4.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Tensor x = Tensor::parameter({2}, {1, 2});
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        l = sum(x);
    }
    backward(l, tape);
    backward(l, tape);
    EXPECT_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, FanOutSumsContributions) {
    Tensor x = Tensor::parameter({3}, {1, -1, 4});
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        l = add(sum(x), sum(x));
    }
    backward(l, tape);
    for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = Tensor::parameter({2}, {1, 2});
    Tape tape;
    Tensor y;
    {
        GradScope s(tape);
        y = scale(x, 2.0);
    }
    EXPECT_THROW(backward(y, tape), ContractError);
}

TEST(Backward, NoTapeNoRecording) {
    Tensor x = Tensor::parameter({2}, {1, 2});
    Tensor y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, TopologicalOrder) {
    Tensor x = Tensor::parameter({2}, {1, 2});
    Tape tape;
    {
        GradScope s(tape);
        auto a = tanh(x);
        auto b = mul(a, x);
        sum(b);
    }
    ASSERT_EQ(tape.size(), 3u);
    // every input that is produced by a node is produced earlier
    for (std::size_t i = 0; i < tape.size(); ++i)
        for (const auto& in : tape.nodes()[i].inputs)
            for (std::size_t j = i; j < tape.size(); ++j) EXPECT_NE(tape.nodes()[j].output.get(), in.get());
}

TEST(GatherRows, IdentityAndDuplicates) {
    Tensor x = Tensor::parameter({3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<std::size_t> all{0, 1, 2};
    EXPECT_EQ(gather_rows(x, all).to_vector(), x.to_vector());

    std::vector<std::size_t> twice{2, 2};
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        auto g = gather_rows(x, twice);
        EXPECT_EQ(g.to_vector(), (std::vector<double>{5, 6, 5, 6}));
        l = sum(g);
    }
    backward(l, tape);
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 0, 0, 2, 2}));

    std::vector<std::size_t> bad{3};
    EXPECT_THROW(gather_rows(x, bad), IndexError);
}

TEST(MaskedSoftmax, MaskedEntriesZeroAndEmptyRowVisible) {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<std::uint8_t> mask{1, 0, 1, 0, 0, 0};
    auto y = masked_softmax_rows(x, mask);
    EXPECT_EQ(y.at(0, 1), 0.0);
    EXPECT_NEAR(y.at(0, 0) + y.at(0, 2), 1.0, 1e-15);
    auto full = softmax(Tensor({1, 3}, {4, 5, 6}), 1);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(1, c), full[c]);
}

// Finite-difference checks over every differentiable op on random inputs in [-2, 2].
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
    Rng rng(100 + GetParam());
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto c = random_tensor({3, 4}, rng);
    auto bias = random_tensor({2}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    std::vector<std::size_t> idx{2, 0, 2, 1};
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1};
    std::vector<double> y{1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 1};
    const Tensor w({3, 4}, [&] {
        std::vector<double> v(12);
        for (auto& e : v) e = rng.uniform(-1, 1);
        return v;
    }());

    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"matmul", [&] { return sum(mul(matmul(a, b), matmul(a, b))); }},
        {"linear", [&] { return sum(tanh(linear(a, b, bias))); }},
        {"add_sub_mul", [&] { return sum(mul(sub(a, c), add(a, c))); }},
        {"scalar_bcast", [&] { return sum(mul(a, gather_rows(reshape(bias, {2, 1}), std::vector<std::size_t>{1}))); }},
        {"tanh", [&] { return sum(mul(tanh(a), w)); }},
        {"relu", [&] { return sum(mul(relu(a), w)); }},
        {"exp", [&] { return sum(mul(exp(a), w)); }},
        {"log", [&] { return sum(mul(log(pos), w)); }},
        {"sigmoid", [&] { return sum(mul(sigmoid(a), w)); }},
        {"softmax0", [&] { return sum(mul(softmax(a, 0), w)); }},
        {"softmax1", [&] { return sum(mul(softmax(a, 1), w)); }},
        {"log_softmax", [&] { return sum(mul(log_softmax(a, 1), w)); }},
        {"masked_softmax", [&] { return sum(mul(masked_softmax_rows(a, mask), w)); }},
        {"mean_scale_shift", [&] { return mean(mul(shift(scale(a, 1.7), 0.3), a)); }},
        {"gather_rows", [&] { return sum(mul(gather_rows(a, idx), gather_rows(c, idx))); }},
        {"concat", [&] { return sum(mul(concat_rows({concat_cols(a, c), concat_cols(c, a)}), concat_rows({concat_cols(w, w), concat_cols(w, w)}))); }},
        {"slice_transpose", [&] { return sum(mul(transpose(slice_cols(a, 1, 3)), transpose(slice_cols(w, 0, 2)))); }},
        {"mean_rows", [&] { return sum(mul(mean_rows(a), mean_rows(w))); }},
        {"normalize_rows", [&] { return sum(mul(normalize_rows(a), w)); }},
        {"bce", [&] { return bce_with_logits(a, y); }},
    };
    for (const auto& [name, f] : cases) {
        auto r = check_gradients(f, {a, b, c, bias, pos});
        EXPECT_TRUE(r.passed(1e-4)) << name << " rel=" << r.max_rel_error;
    }
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, OpGradient, ::testing::Range(0, 5));
