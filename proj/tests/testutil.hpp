#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emoc/datapipe.hpp"
#include "emoc/rng.hpp"
#include "emoc/tokenizer.hpp"
#include "emoc/train.hpp"

namespace testutil {

// Specials first, [PAD] = 0, matching the fixture-vocab convention.
inline emoc::Vocabulary fixture_vocab(std::vector<std::string> pieces) {
    std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    tokens.insert(tokens.end(), pieces.begin(), pieces.end());
    return emoc::Vocabulary::from_tokens(std::move(tokens));
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("emoc_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

// ---------------------------------------------------------------------------
// Synthetic emotion task. Each class owns three keywords and two context
// words; unlabeled text co-occurrence ties a family together, so masked-LM
// pretraining can cluster keywords the labeled set never shows.
// ---------------------------------------------------------------------------

struct SyntheticTask {
    static const std::vector<std::string>& fillers() {
        static const std::vector<std::string> v = {"the", "a",    "to",   "is",  "it",  "so",
                                                   "we",  "you",  "oh",   "well", "just", "like",
                                                   "now", "then", "one",  "day"};
        return v;
    }
    static const std::array<std::array<std::string, 3>, 4>& keywords() {
        static const std::array<std::array<std::string, 3>, 4> v = {{
            {{"okay", "fine", "alright"}},
            {{"happy", "great", "wonderful"}},
            {{"sad", "crying", "awful"}},
            {{"angry", "furious", "mad"}},
        }};
        return v;
    }
    static const std::array<std::array<std::string, 2>, 4>& contexts() {
        static const std::array<std::array<std::string, 2>, 4> v = {{
            {{"noted", "sure"}},
            {{"party", "smile"}},
            {{"rain", "alone"}},
            {{"fight", "yelling"}},
        }};
        return v;
    }

    static emoc::Vocabulary vocab() {
        std::vector<std::string> pieces = fillers();
        for (const auto& fam : keywords())
            for (const auto& k : fam) pieces.push_back(k);
        for (const auto& fam : contexts())
            for (const auto& c : fam) pieces.push_back(c);
        pieces.push_back("!");
        pieces.push_back(".");
        return fixture_vocab(std::move(pieces));
    }

    // One utterance: class keyword + same-class context word + fillers.
    static std::string sample_text(int64_t label, size_t keyword_index, emoc::Rng& rng) {
        const auto& fill = fillers();
        std::vector<std::string> words;
        size_t n_fill = 2 + static_cast<size_t>(rng.below(4));
        for (size_t i = 0; i < n_fill; ++i) words.push_back(fill[rng.below(fill.size())]);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                     keywords()[static_cast<size_t>(label)][keyword_index]);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                     contexts()[static_cast<size_t>(label)][rng.below(2)]);
        std::string text;
        for (size_t i = 0; i < words.size(); ++i) {
            if (i) text += " ";
            text += words[i];
        }
        return text;
    }

    static std::vector<emoc::Example> labeled_set(size_t per_class, const std::vector<size_t>& keyword_indices,
                                                  uint64_t seed, const emoc::Vocabulary& v, int64_t max_len) {
        emoc::Rng rng(seed);
        std::vector<emoc::Example> items;
        for (int64_t label = 0; label < 4; ++label)
            for (size_t i = 0; i < per_class; ++i) {
                size_t ki = keyword_indices[i % keyword_indices.size()];
                items.push_back({emoc::encode(sample_text(label, ki, rng), v, max_len), label});
            }
        return items;
    }

    static std::vector<std::string> unlabeled_texts(size_t count, uint64_t seed) {
        emoc::Rng rng(seed);
        std::vector<std::string> texts;
        for (size_t i = 0; i < count; ++i) {
            int64_t label = static_cast<int64_t>(rng.below(4));
            texts.push_back(sample_text(label, rng.below(3), rng));
        }
        return texts;
    }
};

// The 16-item overfit fixture: four items per class, each pinned to its
// class keyword, deterministic texts.
inline std::vector<std::pair<std::string, int64_t>> overfit_texts() {
    std::vector<std::pair<std::string, int64_t>> items;
    const auto& kw = SyntheticTask::keywords();
    const auto& fill = SyntheticTask::fillers();
    for (int64_t label = 0; label < 4; ++label) {
        for (size_t i = 0; i < 4; ++i) {
            std::string text = fill[(static_cast<size_t>(label) * 4 + i) % fill.size()] + " " +
                               kw[static_cast<size_t>(label)][0] + " " +
                               fill[(static_cast<size_t>(label) + i * 3 + 1) % fill.size()];
            items.emplace_back(text, label);
        }
    }
    return items;
}

inline std::vector<emoc::Example> overfit_items(const emoc::Vocabulary& v, int64_t max_len) {
    std::vector<emoc::Example> items;
    for (const auto& [text, label] : overfit_texts()) items.push_back({emoc::encode(text, v, max_len), label});
    return items;
}

}  // namespace testutil
