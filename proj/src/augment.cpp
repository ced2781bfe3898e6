#include "emoc/augment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace emoc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSourceLang = "en";
constexpr char kSep = '\x1f';

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

TableProvider TableProvider::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("table provider: cannot open " + path);
    TableProvider p;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t a = line.find('\t');
        size_t b = a == std::string::npos ? std::string::npos : line.find('\t', a + 1);
        size_t c = b == std::string::npos ? std::string::npos : line.find('\t', b + 1);
        if (c == std::string::npos)
            throw std::runtime_error("table provider: " + path + ": line " + std::to_string(lineno) +
                                     " needs four tab-separated fields");
        std::string key = line.substr(0, a) + kSep + line.substr(a + 1, b - a - 1) + kSep +
                          line.substr(b + 1, c - b - 1);
        p.table_[key] = line.substr(c + 1);
    }
    return p;
}

std::string TableProvider::translate(const std::string& text, const std::string& source_lang,
                                     const std::string& target_lang) {
    auto it = table_.find(source_lang + kSep + target_lang + kSep + text);
    if (it == table_.end())
        throw ProviderError("table provider: no entry for \"" + text + "\" (" + source_lang + " -> " +
                            target_lang + ")");
    return it->second;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

TranslationCache::TranslationCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;  // fresh cache
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("cache: " + path_ + ": line " + std::to_string(lineno) + ": " + e.what());
        }
        entries_[j.at("key").get<std::string>()] = j.at("text").get<std::string>();
    }
}

std::optional<std::string> TranslationCache::lookup(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        ++misses_;
        return std::nullopt;
    }
    ++hits_;
    return it->second;
}

void TranslationCache::insert(const std::string& key, const std::string& text) {
    entries_[key] = text;
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cache: cannot append to " + path_);
    json j;
    j["key"] = key;
    j["text"] = text;
    out << j.dump() << "\n";
    if (!out) throw std::runtime_error("cache: short write to " + path_);
}

std::string cache_key(const std::string& provider, const std::string& source_lang,
                      const std::string& target_lang, const std::string& text) {
    char digest[17];
    std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return provider + kSep + source_lang + kSep + target_lang + kSep + digest;
}

// ---------------------------------------------------------------------------
// Back-translation
// ---------------------------------------------------------------------------

namespace {

std::string cached_translate(const std::string& text, const std::string& src, const std::string& tgt,
                             TranslationProvider& provider, TranslationCache* cache) {
    std::string key = cache_key(provider.name(), src, tgt, text);
    if (cache) {
        if (auto hit = cache->lookup(key)) return *hit;
    }
    std::string result = provider.translate(text, src, tgt);
    if (cache) cache->insert(key, result);
    return result;
}

}  // namespace

std::string back_translate(const std::string& text, const std::string& pivot,
                           TranslationProvider& provider, TranslationCache* cache) {
    std::string there = cached_translate(text, kSourceLang, pivot, provider, cache);
    return cached_translate(there, pivot, kSourceLang, provider, cache);
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

void AugmentationJob::validate() const {
    if (input_corpus.empty()) throw std::invalid_argument("augment job: input corpus path is empty");
    if (pivots.empty()) throw std::invalid_argument("augment job: pivot language list is empty");
    for (const auto& p : pivots) {
        if (p.empty()) throw std::invalid_argument("augment job: empty pivot language");
        if (p == kSourceLang)
            throw std::invalid_argument("augment job: pivot language must differ from source (en)");
    }
    if (provider != "identity" && provider != "table")
        throw std::invalid_argument("augment job: unknown provider \"" + provider + "\"");
    if (provider == "table" && table_path.empty())
        throw std::invalid_argument("augment job: table provider needs a table path");
    if (output_dir.empty()) throw std::invalid_argument("augment job: output directory is empty");
}

AugmentationJob AugmentationJob::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("augment job: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("augment job: " + path + ": " + e.what());
    }
    AugmentationJob job;
    job.input_corpus = j.value("input_corpus", "");
    if (j.contains("pivots")) job.pivots = j.at("pivots").get<std::vector<std::string>>();
    job.provider = j.value("provider", "identity");
    job.table_path = j.value("table_path", "");
    job.output_dir = j.value("output_dir", "");
    job.cache_path = j.value("cache_path", "");
    job.validate();
    return job;
}

std::unique_ptr<TranslationProvider> make_provider(const AugmentationJob& job) {
    if (job.provider == "identity") return std::make_unique<IdentityProvider>();
    if (job.provider == "table") return std::make_unique<TableProvider>(TableProvider::load(job.table_path));
    throw std::invalid_argument("augment job: unknown provider \"" + job.provider + "\"");
}

Corpus back_translate_corpus(const Corpus& input, const std::string& pivot,
                             TranslationProvider& provider, TranslationCache* cache,
                             PivotReport& report) {
    Corpus out;
    out.name = input.name + "." + pivot;
    out.dialogues.reserve(input.dialogues.size());
    report.pivot = pivot;
    for (size_t d = 0; d < input.dialogues.size(); ++d) {
        std::vector<UtteranceRecord> records;
        records.reserve(input.dialogues[d].size());
        for (size_t u = 0; u < input.dialogues[d].size(); ++u) {
            UtteranceRecord rec = input.dialogues[d][u];
            rec.pivot = pivot;
            try {
                std::string text = back_translate(rec.utterance, pivot, provider, cache);
                if (trim(text).empty()) throw ProviderError("empty back-translation");
                rec.utterance = std::move(text);
                ++report.successes;
            } catch (const ProviderError&) {
                // Keep the original text; position recorded so the job can
                // be resumed or audited.
                report.failures.push_back({d, u});
            }
            records.push_back(std::move(rec));
        }
        out.dialogues.push_back(std::move(records));
    }
    return out;
}

AugmentationReport run_augmentation(const AugmentationJob& job) {
    job.validate();
    Corpus input = load_corpus(job.input_corpus);
    auto provider = make_provider(job);
    std::optional<TranslationCache> cache;
    if (!job.cache_path.empty()) cache.emplace(job.cache_path);

    fs::create_directories(job.output_dir);
    std::string stem = fs::path(job.input_corpus).stem().string();

    AugmentationReport report;
    report.utterances_per_pivot = input.utterance_count();
    json jreport;
    jreport["input_corpus"] = job.input_corpus;
    jreport["utterances_per_pivot"] = report.utterances_per_pivot;
    jreport["pivots"] = json::array();
    for (const std::string& pivot : job.pivots) {
        PivotReport pr;
        Corpus out = back_translate_corpus(input, pivot, *provider, cache ? &*cache : nullptr, pr);
        pr.output_path = (fs::path(job.output_dir) / (stem + "." + pivot + ".json")).string();
        save_corpus(out, pr.output_path);

        json jp;
        jp["pivot"] = pr.pivot;
        jp["output"] = pr.output_path;
        jp["successes"] = pr.successes;
        jp["failures"] = json::array();
        for (const auto& f : pr.failures)
            jp["failures"].push_back({{"dialogue", f.dialogue}, {"utterance", f.utterance}});
        jreport["pivots"].push_back(std::move(jp));
        report.pivots.push_back(std::move(pr));
    }
    std::ofstream rep(fs::path(job.output_dir) / "augment_report.json", std::ios::trunc);
    if (!rep) throw std::runtime_error("augment: cannot write report under " + job.output_dir);
    rep << jreport.dump(2) << "\n";
    return report;
}

}  // namespace emoc
