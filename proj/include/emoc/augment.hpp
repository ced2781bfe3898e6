#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "emoc/datapipe.hpp"

namespace emoc {

struct ProviderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Back-translation hook. Implementations must be total for the inputs they
// accept and throw ProviderError otherwise.
class TranslationProvider {
public:
    virtual ~TranslationProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string translate(const std::string& text, const std::string& source_lang,
                                  const std::string& target_lang) = 0;
};

class IdentityProvider : public TranslationProvider {
public:
    std::string name() const override { return "identity"; }
    std::string translate(const std::string& text, const std::string&, const std::string&) override {
        return text;
    }
};

// Offline stub backed by a TSV of "src<TAB>tgt<TAB>source text<TAB>target
// text" lines; unmapped requests fail.
class TableProvider : public TranslationProvider {
public:
    static TableProvider load(const std::string& path);

    std::string name() const override { return "table"; }
    std::string translate(const std::string& text, const std::string& source_lang,
                          const std::string& target_lang) override;

private:
    std::unordered_map<std::string, std::string> table_;
};

// Append-only translation cache persisted as JSON lines of {key, text}.
class TranslationCache {
public:
    explicit TranslationCache(std::string path);

    std::optional<std::string> lookup(const std::string& key);
    void insert(const std::string& key, const std::string& text);

    size_t hits() const { return hits_; }
    size_t misses() const { return misses_; }

private:
    std::string path_;
    std::unordered_map<std::string, std::string> entries_;
    size_t hits_ = 0;
    size_t misses_ = 0;
};

std::string cache_key(const std::string& provider, const std::string& source_lang,
                      const std::string& target_lang, const std::string& text);

// English -> pivot -> English, both hops cached when a cache is given.
std::string back_translate(const std::string& text, const std::string& pivot,
                           TranslationProvider& provider, TranslationCache* cache = nullptr);

struct AugmentationJob {
    std::string input_corpus;
    std::vector<std::string> pivots;
    std::string provider = "identity";  // "identity" or "table"
    std::string table_path;
    std::string output_dir;
    std::string cache_path;

    void validate() const;
    static AugmentationJob from_json_file(const std::string& path);
};

struct UtterancePosition {
    size_t dialogue = 0;
    size_t utterance = 0;
};

struct PivotReport {
    std::string pivot;
    std::string output_path;
    int64_t successes = 0;
    std::vector<UtterancePosition> failures;
};

struct AugmentationReport {
    int64_t utterances_per_pivot = 0;
    std::vector<PivotReport> pivots;
};

std::unique_ptr<TranslationProvider> make_provider(const AugmentationJob& job);

// Back-translates one corpus through one pivot. Failed translations keep the
// original text and are reported; structure and labels are preserved.
Corpus back_translate_corpus(const Corpus& input, const std::string& pivot,
                             TranslationProvider& provider, TranslationCache* cache,
                             PivotReport& report);

// One positionally aligned output corpus per pivot, written under
// job.output_dir, plus a JSON job report.
AugmentationReport run_augmentation(const AugmentationJob& job);

}  // namespace emoc
