#include "emoc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "emoc/rng.hpp"

namespace emoc {

namespace {
constexpr size_t kMaxWordChars = 100;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (size_t i = 0; i < v.tokens_.size(); ++i) {
        const std::string& t = v.tokens_[i];
        if (t.empty()) throw std::invalid_argument("vocab: empty token at line " + std::to_string(i));
        auto [it, inserted] = v.ids_.emplace(t, static_cast<int64_t>(i));
        if (!inserted)
            throw std::invalid_argument("vocab: duplicate token \"" + t + "\" at line " + std::to_string(i));
        size_t raw = t.rfind("##", 0) == 0 ? t.size() - 2 : t.size();
        v.max_piece_chars_ = std::max(v.max_piece_chars_, raw);
    }
    auto require = [&](const char* name) {
        auto it = v.ids_.find(name);
        if (it == v.ids_.end())
            throw std::invalid_argument(std::string("vocab: missing special token ") + name);
        return it->second;
    };
    v.pad_id_ = require(kPad);
    v.unk_id_ = require(kUnk);
    v.cls_id_ = require(kCls);
    v.sep_id_ = require(kSep);
    v.mask_id_ = require(kMask);
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("vocab: cannot open " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

std::optional<int64_t> Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::token(int64_t id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> basic_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (char raw : text) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            flush();
        } else if (c < 128 && std::ispunct(c)) {
            flush();
            out.emplace_back(1, raw);
        } else {
            if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
            word.push_back(static_cast<char>(c));
        }
    }
    flush();
    return out;
}

namespace {

// Greedy longest-match-first decomposition of one pre-tokenized word.
// Returns false when no decomposition exists.
bool split_word(const std::string& word, const Vocabulary& vocab, std::vector<std::string>& out) {
    if (word.size() > kMaxWordChars) return false;
    size_t start = 0;
    size_t first = out.size();
    while (start < word.size()) {
        size_t longest = std::min(word.size() - start, vocab.max_piece_chars());
        bool found = false;
        for (size_t len = longest; len >= 1; --len) {
            std::string piece = word.substr(start, len);
            if (start > 0) piece = "##" + piece;
            if (vocab.id_of(piece)) {
                out.push_back(std::move(piece));
                start += len;
                found = true;
                break;
            }
        }
        if (!found) {
            out.resize(first);
            return false;
        }
    }
    return true;
}

}  // namespace

std::vector<std::string> wordpiece_tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (const std::string& word : basic_tokenize(text)) {
        if (!split_word(word, vocab, out)) out.push_back(Vocabulary::kUnk);
    }
    return out;
}

EncodedInput encode(const std::string& text, const Vocabulary& vocab, int64_t max_len) {
    if (max_len < 3) throw std::invalid_argument("encode: max_len must be at least 3");
    std::vector<std::string> pieces = wordpiece_tokenize(text, vocab);
    size_t content = std::min(pieces.size(), static_cast<size_t>(max_len - 2));

    EncodedInput enc;
    enc.token_ids.reserve(static_cast<size_t>(max_len));
    enc.token_ids.push_back(vocab.cls_id());
    for (size_t i = 0; i < content; ++i) enc.token_ids.push_back(*vocab.id_of(pieces[i]));
    enc.token_ids.push_back(vocab.sep_id());
    enc.original_length = static_cast<int64_t>(enc.token_ids.size());
    enc.token_ids.resize(static_cast<size_t>(max_len), vocab.pad_id());

    enc.attention_mask.assign(static_cast<size_t>(max_len), 0);
    std::fill_n(enc.attention_mask.begin(), enc.original_length, 1);
    enc.segment_ids.assign(static_cast<size_t>(max_len), 0);
    return enc;
}

MaskedInput mask_tokens(const EncodedInput& input, const Vocabulary& vocab, double mask_prob,
                        uint64_t seed) {
    if (mask_prob < 0.0 || mask_prob > 1.0)
        throw std::invalid_argument("mask_tokens: mask_prob must lie in [0, 1]");
    MaskedInput m;
    m.input = input;
    m.mlm_targets.assign(input.token_ids.size(), MaskedInput::kIgnore);
    Rng rng(seed);
    // Content positions sit strictly between [CLS] and the trailing [SEP].
    for (int64_t i = 1; i + 1 < input.original_length; ++i) {
        if (rng.uniform01() < mask_prob) {
            m.mlm_targets[static_cast<size_t>(i)] = input.token_ids[static_cast<size_t>(i)];
            m.input.token_ids[static_cast<size_t>(i)] = vocab.mask_id();
        }
    }
    return m;
}

}  // namespace emoc
