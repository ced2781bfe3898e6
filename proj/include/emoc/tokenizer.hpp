#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace emoc {

// WordPiece vocabulary. Ids are dense 0..size-1 and equal the zero-based line
// number of the vocab file. The five special tokens must each appear exactly
// once.
class Vocabulary {
public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kMask = "[MASK]";

    static Vocabulary from_tokens(std::vector<std::string> tokens);
    static Vocabulary load(const std::string& path);

    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    std::optional<int64_t> id_of(const std::string& token) const;
    const std::string& token(int64_t id) const;

    int64_t pad_id() const { return pad_id_; }
    int64_t unk_id() const { return unk_id_; }
    int64_t cls_id() const { return cls_id_; }
    int64_t sep_id() const { return sep_id_; }
    int64_t mask_id() const { return mask_id_; }

    // Longest token in the vocabulary, "##" prefix excluded. Bounds the
    // greedy match window.
    size_t max_piece_chars() const { return max_piece_chars_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> ids_;
    int64_t pad_id_ = -1, unk_id_ = -1, cls_id_ = -1, sep_id_ = -1, mask_id_ = -1;
    size_t max_piece_chars_ = 0;
};

// Fixed-length model input; position 0 is [CLS], the last unpadded position
// is [SEP], everything past original_length is [PAD] with mask 0.
struct EncodedInput {
    std::vector<int64_t> token_ids;
    std::vector<int64_t> attention_mask;
    std::vector<int64_t> segment_ids;
    int64_t original_length = 0;
};

// Lowercases, splits on whitespace with punctuation as standalone tokens.
std::vector<std::string> basic_tokenize(const std::string& text);

// Greedy longest-match-first decomposition into vocabulary pieces,
// continuations prefixed "##". A word with no decomposition (or longer than
// 100 chars) becomes a single [UNK].
std::vector<std::string> wordpiece_tokenize(const std::string& text, const Vocabulary& vocab);

// [CLS] + first (max_len - 2) pieces + [SEP], padded to max_len.
EncodedInput encode(const std::string& text, const Vocabulary& vocab, int64_t max_len = 128);

struct MaskedInput {
    EncodedInput input;
    // Original id at masked positions, kIgnore elsewhere.
    std::vector<int64_t> mlm_targets;
    static constexpr int64_t kIgnore = -1;
};

// Independently replaces each content position (strictly between [CLS] and
// [SEP]) by [MASK] with probability mask_prob. Deterministic per seed.
MaskedInput mask_tokens(const EncodedInput& input, const Vocabulary& vocab, double mask_prob,
                        uint64_t seed);

}  // namespace emoc
