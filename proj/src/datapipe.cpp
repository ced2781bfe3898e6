#include "emoc/datapipe.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "emoc/rng.hpp"

namespace emoc {

using nlohmann::json;

int64_t Corpus::utterance_count() const {
    int64_t n = 0;
    for (const auto& d : dialogues) n += static_cast<int64_t>(d.size());
    return n;
}

const std::array<std::string, LabelSet::kCount>& LabelSet::names() {
    static const std::array<std::string, kCount> n = {"neutral", "joy", "sadness", "anger"};
    return n;
}

std::optional<int64_t> LabelSet::id_of(const std::string& label) {
    const auto& n = names();
    for (size_t i = 0; i < n.size(); ++i)
        if (n[i] == label) return static_cast<int64_t>(i);
    return std::nullopt;
}

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string position(size_t d, size_t u) {
    return "dialogue " + std::to_string(d) + ", utterance " + std::to_string(u);
}

std::string require_string(const json& obj, const char* field, size_t d, size_t u) {
    auto it = obj.find(field);
    if (it == obj.end())
        throw std::runtime_error("corpus: missing field \"" + std::string(field) + "\" at " + position(d, u));
    if (!it->is_string())
        throw std::runtime_error("corpus: field \"" + std::string(field) + "\" is not a string at " +
                                 position(d, u));
    return it->get<std::string>();
}

}  // namespace

Corpus load_corpus(const std::string& path, const std::string& name) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("corpus: cannot open " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw std::runtime_error("corpus: " + path + ": " + e.what());
    }
    if (!root.is_array()) throw std::runtime_error("corpus: " + path + ": top level must be an array of dialogues");
    if (root.empty()) throw std::runtime_error("corpus: " + path + ": no dialogues");

    Corpus corpus;
    corpus.name = name.empty() ? path : name;
    corpus.dialogues.reserve(root.size());
    for (size_t d = 0; d < root.size(); ++d) {
        const json& dlg = root[d];
        if (!dlg.is_array())
            throw std::runtime_error("corpus: " + path + ": dialogue " + std::to_string(d) + " is not an array");
        if (dlg.empty())
            throw std::runtime_error("corpus: " + path + ": dialogue " + std::to_string(d) + " is empty");
        std::vector<UtteranceRecord> records;
        records.reserve(dlg.size());
        for (size_t u = 0; u < dlg.size(); ++u) {
            const json& item = dlg[u];
            if (!item.is_object())
                throw std::runtime_error("corpus: " + path + ": " + position(d, u) + " is not an object");
            UtteranceRecord rec;
            rec.speaker = require_string(item, "speaker", d, u);
            rec.utterance = require_string(item, "utterance", d, u);
            rec.emotion = require_string(item, "emotion", d, u);
            if (trim(rec.utterance).empty())
                throw std::runtime_error("corpus: " + path + ": empty utterance at " + position(d, u));
            if (rec.emotion.empty())
                throw std::runtime_error("corpus: " + path + ": empty emotion at " + position(d, u));
            if (auto it = item.find("pivot"); it != item.end() && it->is_string())
                rec.pivot = it->get<std::string>();
            records.push_back(std::move(rec));
        }
        corpus.dialogues.push_back(std::move(records));
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    json root = json::array();
    for (const auto& dlg : corpus.dialogues) {
        json jd = json::array();
        for (const auto& rec : dlg) {
            json ju;
            ju["speaker"] = rec.speaker;
            ju["utterance"] = rec.utterance;
            ju["emotion"] = rec.emotion;
            if (!rec.pivot.empty()) ju["pivot"] = rec.pivot;
            jd.push_back(std::move(ju));
        }
        root.push_back(std::move(jd));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("corpus: cannot open " + path + " for writing");
    out << root.dump(2) << "\n";
    if (!out) throw std::runtime_error("corpus: short write to " + path);
}

CorpusStats corpus_stats(const Corpus& corpus, const Vocabulary& vocab) {
    CorpusStats s;
    s.name = corpus.name;
    s.dialogues = static_cast<int64_t>(corpus.dialogues.size());
    for (const auto& dlg : corpus.dialogues) {
        for (const auto& rec : dlg) {
            ++s.utterances;
            s.tokens += static_cast<int64_t>(wordpiece_tokenize(rec.utterance, vocab).size());
            if (auto id = LabelSet::id_of(rec.emotion))
                ++s.label_counts[static_cast<size_t>(*id)];
            else
                ++s.other_labels;
        }
    }
    s.avg_len = s.utterances > 0 ? static_cast<double>(s.tokens) / static_cast<double>(s.utterances) : 0.0;
    return s;
}

std::string render_stats(const CorpusStats& stats) {
    std::ostringstream out;
    char line[192];
    std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %8s\n", "corpus", "dialogues", "utterances",
                  "tokens", "avg_len");
    out << line;
    std::snprintf(line, sizeof(line), "%-16s %10lld %10lld %10lld %8.1f\n", stats.name.c_str(),
                  static_cast<long long>(stats.dialogues), static_cast<long long>(stats.utterances),
                  static_cast<long long>(stats.tokens), stats.avg_len);
    out << line << "\n";
    std::snprintf(line, sizeof(line), "%-16s %10s\n", "label", "count");
    out << line;
    for (size_t i = 0; i < LabelSet::kCount; ++i) {
        std::snprintf(line, sizeof(line), "%-16s %10lld\n", LabelSet::names()[i].c_str(),
                      static_cast<long long>(stats.label_counts[i]));
        out << line;
    }
    if (stats.other_labels > 0) {
        std::snprintf(line, sizeof(line), "%-16s %10lld\n", "(other)",
                      static_cast<long long>(stats.other_labels));
        out << line;
    }
    return out.str();
}

std::vector<TrainingItem> select_training_data(const Corpus& original,
                                               const std::vector<Corpus>& augmented) {
    for (const Corpus& aug : augmented) {
        if (aug.dialogues.size() != original.dialogues.size())
            throw std::runtime_error("select: corpus \"" + aug.name + "\" has " +
                                     std::to_string(aug.dialogues.size()) + " dialogues, original has " +
                                     std::to_string(original.dialogues.size()));
        for (size_t d = 0; d < original.dialogues.size(); ++d) {
            if (aug.dialogues[d].size() != original.dialogues[d].size())
                throw std::runtime_error("select: corpus \"" + aug.name + "\" misaligned at dialogue " +
                                         std::to_string(d));
            for (size_t u = 0; u < original.dialogues[d].size(); ++u)
                if (aug.dialogues[d][u].emotion != original.dialogues[d][u].emotion)
                    throw std::runtime_error("select: corpus \"" + aug.name + "\" changes the label at " +
                                             position(d, u));
        }
    }

    std::vector<TrainingItem> items;
    for (const auto& dlg : original.dialogues)
        for (const auto& rec : dlg)
            if (auto id = LabelSet::id_of(rec.emotion))
                items.push_back({trim(rec.utterance), *id, "original"});
    for (const Corpus& aug : augmented) {
        for (const auto& dlg : aug.dialogues) {
            for (const auto& rec : dlg) {
                auto id = LabelSet::id_of(rec.emotion);
                if (!id || *id == LabelSet::kNeutral) continue;
                std::string pivot = rec.pivot.empty() ? aug.name : rec.pivot;
                items.push_back({trim(rec.utterance), *id, "augmented:" + pivot});
            }
        }
    }
    return items;
}

std::vector<std::vector<size_t>> make_batches(size_t item_count, int64_t batch_size, uint64_t seed,
                                              bool shuffle) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be at least 1");
    std::vector<size_t> order(item_count);
    for (size_t i = 0; i < item_count; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < item_count; start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(item_count, start + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::pair<Corpus, Corpus> split_train_dev(const Corpus& corpus, double dev_fraction) {
    if (dev_fraction < 0.0 || dev_fraction >= 1.0)
        throw std::invalid_argument("split: dev_fraction must lie in [0, 1)");
    size_t n = corpus.dialogues.size();
    size_t dev = static_cast<size_t>(static_cast<double>(n) * dev_fraction);
    Corpus train{corpus.name + ".train", {corpus.dialogues.begin(), corpus.dialogues.end() - static_cast<std::ptrdiff_t>(dev)}};
    Corpus devc{corpus.name + ".dev", {corpus.dialogues.end() - static_cast<std::ptrdiff_t>(dev), corpus.dialogues.end()}};
    return {std::move(train), std::move(devc)};
}

}  // namespace emoc
