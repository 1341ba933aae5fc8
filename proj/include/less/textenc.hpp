#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "less/errors.hpp"
#include "less/ops.hpp"
#include "less/params.hpp"

namespace less {

// Vocabulary file: one token per line; line k (1-based) holds id k − 1.
// Ids 0 and 1 are always <unk> and <pad>.
class Vocabulary {
public:
    static constexpr std::size_t kUnk = 0;
    static constexpr std::size_t kPad = 1;

    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

    explicit Vocabulary(const std::vector<std::string>& words) {
        add("<unk>");
        add("<pad>");
        for (const auto& w : words) add(w);
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    bool contains(const std::string& w) const { return ids_.count(w) != 0; }

    std::size_t id(const std::string& w) const {
        auto it = ids_.find(w);
        return it == ids_.end() ? kUnk : it->second;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw FormatError("cannot write " + path.string());
        for (const auto& t : tokens_) os << t << '\n';
    }

    static Vocabulary load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw FormatError("cannot read " + path.string());
        std::vector<std::string> lines;
        for (std::string line; std::getline(is, line);) lines.push_back(line);
        if (lines.size() < 2 || lines[0] != "<unk>" || lines[1] != "<pad>")
            throw FormatError("vocabulary file must start with <unk> and <pad>");
        return Vocabulary(std::vector<std::string>(lines.begin() + 2, lines.end()));
    }

private:
    void add(const std::string& w) {
        if (ids_.count(w)) return;
        ids_[w] = tokens_.size();
        tokens_.push_back(w);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

// Lowercased words, split on whitespace and punctuation.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab) {
    auto words = split_words(text);
    if (words.empty()) throw ContractError("tokenize: empty query text");
    std::vector<std::size_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
}

struct TextFeatures {
    Tensor words;     // W, [L × C]
    Tensor sentence;  // S, [C]
    std::size_t length = 0;
    std::vector<std::string> warnings;
};

struct TextEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t width = 64;
    std::size_t max_len = 32;
};

// Learned embeddings followed by one gated recurrent layer:
//   z = σ(x·Wz + h·Uz + b),  r = σ(x·Wr + h·Ur + b)
//   n = tanh(x·Wn + b + r ⊙ (h·Un + b)),  h' = (1 − z) ⊙ n + z ⊙ h
// starting from h = 0. W holds every step's hidden state; S is the last one.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ParameterStore& ps, const std::string& name, TextEncoderConfig cfg) : cfg_(cfg) {
        if (cfg_.vocab_size < 2) throw ContractError("text encoder: vocabulary too small");
        const auto g = ParamGroup::text;
        embedding_ = ps.normal(name + ".embedding", {cfg_.vocab_size, cfg_.width}, 1.0, g);
        const std::size_t c = cfg_.width;
        xz_ = Linear(ps, name + ".gru.xz", c, c, g);
        hz_ = Linear(ps, name + ".gru.hz", c, c, g);
        xr_ = Linear(ps, name + ".gru.xr", c, c, g);
        hr_ = Linear(ps, name + ".gru.hr", c, c, g);
        xn_ = Linear(ps, name + ".gru.xn", c, c, g);
        hn_ = Linear(ps, name + ".gru.hn", c, c, g);
    }

    const TextEncoderConfig& config() const { return cfg_; }

    // One recurrent step; h and x are [1 × C].
    Tensor step(const Tensor& x, const Tensor& h) const {
        Tensor z = sigmoid(add(xz_(x), hz_(h)));
        Tensor r = sigmoid(add(xr_(x), hr_(h)));
        Tensor n = tanh(add(xn_(x), mul(r, hn_(h))));
        return add(mul(sub(Tensor::scalar(1.0), z), n), mul(z, h));
    }

    TextFeatures encode(std::vector<std::size_t> tokens) const {
        if (tokens.empty()) throw ContractError("encode: empty token sequence");
        TextFeatures out;
        if (tokens.size() > cfg_.max_len) {
            out.warnings.push_back("query truncated from " + std::to_string(tokens.size()) + " to " +
                                   std::to_string(cfg_.max_len) + " tokens");
            tokens.resize(cfg_.max_len);
        }
        for (auto t : tokens)
            if (t >= cfg_.vocab_size) throw IndexError("encode: token id " + std::to_string(t) + " outside vocabulary");
        Tensor embedded = gather_rows(embedding_, tokens);
        Tensor h({1, cfg_.width}, 0.0);
        std::vector<Tensor> states;
        states.reserve(tokens.size());
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const std::vector<std::size_t> row{t};
            h = step(gather_rows(embedded, row), h);
            states.push_back(h);
        }
        out.words = concat_rows(states);
        out.sentence = reshape(h, {cfg_.width});
        out.length = tokens.size();
        return out;
    }

private:
    TextEncoderConfig cfg_;
    Tensor embedding_;
    Linear xz_, hz_, xr_, hr_, xn_, hn_;
};

}  // namespace less
