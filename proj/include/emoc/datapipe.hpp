#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emoc/tokenizer.hpp"

namespace emoc {

struct UtteranceRecord {
    std::string speaker;
    std::string utterance;
    std::string emotion;
    // Pivot language for back-translated records; empty for originals.
    std::string pivot;

    bool augmented() const { return !pivot.empty(); }
};

struct Corpus {
    std::string name;
    std::vector<std::vector<UtteranceRecord>> dialogues;

    int64_t utterance_count() const;
};

// The four target emotions, in report row order; class id = index.
struct LabelSet {
    static constexpr int64_t kNeutral = 0;
    static constexpr int64_t kJoy = 1;
    static constexpr int64_t kSadness = 2;
    static constexpr int64_t kAnger = 3;
    static constexpr size_t kCount = 4;

    static const std::array<std::string, kCount>& names();
    static std::optional<int64_t> id_of(const std::string& label);
};

// Parses the dialogue JSON format: a top-level array of dialogues, each an
// array of {"speaker", "utterance", "emotion"} objects (optional "pivot",
// "annotation" ignored). Errors carry dialogue/utterance indices.
Corpus load_corpus(const std::string& path, const std::string& name = "");

// Writes the same format back; the "pivot" field appears only on augmented
// records. Byte-deterministic for a given corpus.
void save_corpus(const Corpus& corpus, const std::string& path);

struct CorpusStats {
    std::string name;
    int64_t dialogues = 0;
    int64_t utterances = 0;
    int64_t tokens = 0;
    double avg_len = 0.0;
    std::array<int64_t, LabelSet::kCount> label_counts{};
    // Records labeled outside the four target emotions.
    int64_t other_labels = 0;
};

// Dialogue/utterance/token totals plus per-target-label counts. Tokens are
// WordPiece pieces under the given vocabulary.
CorpusStats corpus_stats(const Corpus& corpus, const Vocabulary& vocab);

std::string render_stats(const CorpusStats& stats);

struct TrainingItem {
    std::string text;
    int64_t label_id = 0;
    std::string source;  // "original" or "augmented:<pivot>"
};

// Keeps original utterances labeled with any target emotion and augmented
// utterances labeled joy/sadness/anger; augmented neutral is discarded so the
// four classes stay balanced. Augmented corpora must align positionally with
// the original. Order: originals first, then augmented corpora as given.
std::vector<TrainingItem> select_training_data(const Corpus& original,
                                               const std::vector<Corpus>& augmented);

// Index batches over [0, item_count); seeded uniform shuffle when requested,
// final partial batch kept.
std::vector<std::vector<size_t>> make_batches(size_t item_count, int64_t batch_size, uint64_t seed,
                                              bool shuffle);

// Last floor(dev_fraction * dialogues) dialogues become the dev corpus.
std::pair<Corpus, Corpus> split_train_dev(const Corpus& corpus, double dev_fraction = 0.1);

}  // namespace emoc
