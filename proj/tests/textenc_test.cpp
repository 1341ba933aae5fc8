#include <gtest/gtest.h>

#include <filesystem>

#include "less/gradcheck.hpp"
#include "less/textenc.hpp"
#include "test_util.hpp"

using namespace less;
using less::testing::GenericLoss;

namespace {

Vocabulary small_vocab() { return Vocabulary({"the", "red", "chair", "blue", "box", "near"}); }

TextEncoder make_encoder(ParameterStore& ps, std::size_t width = 8, std::size_t vocab = 8) {
    return TextEncoder(ps, "text", {vocab, width, 32});
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
    auto v = small_vocab();
    auto ids = tokenize("The red chair.", v);
    EXPECT_EQ(ids, (std::vector<std::size_t>{v.id("the"), v.id("red"), v.id("chair")}));
    EXPECT_EQ(v.id("the"), 2u);
}

TEST(Tokenize, UnknownWordMapsToZero) {
    auto v = small_vocab();
    EXPECT_EQ(tokenize("the purple box", v)[1], Vocabulary::kUnk);
}

TEST(Tokenize, JoinedTokensRoundTrip) {
    auto v = small_vocab();
    auto ids = tokenize("the blue box near the red chair", v);
    std::string joined;
    for (auto id : ids) joined += v.token(id) + " ";
    EXPECT_EQ(tokenize(joined, v), ids);
}

TEST(Tokenize, EmptyTextIsContractError) {
    auto v = small_vocab();
    EXPECT_THROW(tokenize("  .,! ", v), ContractError);
    EXPECT_THROW(tokenize("", v), ContractError);
}

TEST(Vocabulary, FileKeepsIds) {
    auto v = small_vocab();
    auto path = std::filesystem::temp_directory_path() / "less_vocab_test.txt";
    v.save(path);
    auto w = Vocabulary::load(path);
    std::filesystem::remove(path);
    EXPECT_EQ(w.tokens(), v.tokens());
    EXPECT_EQ(w.id("<pad>"), Vocabulary::kPad);
}

TEST(TextEncoder, SingleTokenSentenceIsOnlyRow) {
    ParameterStore ps(3);
    auto enc = make_encoder(ps);
    auto f = enc.encode({4});
    ASSERT_EQ(f.words.shape(), (Shape{1, 8}));
    EXPECT_EQ(f.sentence.to_vector(), f.words.to_vector());
}

TEST(TextEncoder, SentenceIsLastWordRow) {
    ParameterStore ps(4);
    auto enc = make_encoder(ps);
    auto f = enc.encode({2, 5, 3, 3});
    ASSERT_EQ(f.length, 4u);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(f.sentence[c], f.words.at(3, c));
}

TEST(TextEncoder, ZeroWeightsGiveZeroOutputs) {
    ParameterStore ps(5);
    auto enc = make_encoder(ps);
    for (auto& p : ps.params())
        for (auto& x : p.value.mutable_data()) x = 0.0;
    auto f = enc.encode({2, 3, 4});
    for (double x : f.words.data()) EXPECT_EQ(x, 0.0);
}

TEST(TextEncoder, DeterministicAcrossCalls) {
    ParameterStore ps(6);
    auto enc = make_encoder(ps);
    EXPECT_EQ(enc.encode({2, 7, 1}).words.to_vector(), enc.encode({2, 7, 1}).words.to_vector());
}

TEST(TextEncoder, OverlongInputTruncatedWithWarning) {
    ParameterStore ps(7);
    TextEncoder enc(ps, "text", {8, 4, 3});
    auto f = enc.encode({2, 3, 4, 5, 6});
    EXPECT_EQ(f.length, 3u);
    EXPECT_EQ(f.words.rows(), 3u);
    ASSERT_EQ(f.warnings.size(), 1u);
}

TEST(TextEncoder, BadTokenIdIsIndexError) {
    ParameterStore ps(8);
    auto enc = make_encoder(ps);
    EXPECT_THROW(enc.encode({2, 99}), IndexError);
}

TEST(TextEncoder, EveryUsedEmbeddingRowGetsGradient) {
    ParameterStore ps(9);
    auto enc = make_encoder(ps);
    const std::vector<std::size_t> tokens{2, 6, 4, 6};
    GenericLoss loss({4, 8}, 11);
    Tape tape;
    Tensor l;
    {
        GradScope s(tape);
        l = loss(enc.encode(tokens).words);
    }
    backward(l, tape);
    auto emb = ps.get("text.embedding");
    for (std::size_t row = 0; row < 8; ++row) {
        double mag = 0.0;
        for (std::size_t c = 0; c < 8; ++c) mag += std::abs(emb.grad()[row * 8 + c]);
        const bool used = row == 2 || row == 4 || row == 6;
        if (used)
            EXPECT_GT(mag, 0.0) << row;
        else
            EXPECT_EQ(mag, 0.0) << row;
    }
}

class GruGradient : public ::testing::TestWithParam<int> {};

TEST_P(GruGradient, CellMatchesFiniteDifferences) {
    ParameterStore ps(20 + GetParam());
    auto enc = make_encoder(ps, 5);
    Rng rng(40 + GetParam());
    auto x = less::testing::random_tensor({1, 5}, rng, -1, 1, true);
    auto h = less::testing::random_tensor({1, 5}, rng, -1, 1, true);
    GenericLoss loss({1, 5}, 50 + GetParam());
    auto leaves = less::testing::all_params(ps);
    leaves.push_back(x);
    leaves.push_back(h);
    auto r = check_gradients([&] { return loss(enc.step(x, h)); }, leaves);
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

TEST_P(GruGradient, SequenceMatchesFiniteDifferences) {
    ParameterStore ps(60 + GetParam());
    auto enc = make_encoder(ps, 4);
    GenericLoss loss({3, 4}, 70 + GetParam());
    auto r = check_gradients([&] { return loss(enc.encode({3, 1, 6}).words); }, less::testing::all_params(ps));
    EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, GruGradient, ::testing::Range(0, 5));
