#include "emoc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace emoc {

using nlohmann::json;

namespace {

// Harmonic mean with exactness when both sides agree, so the micro identity
// holds bit-for-bit.
double f1_of(double p, double r) {
    if (p + r <= 0.0) return 0.0;
    if (p == r) return p;
    return 2.0 * p * r / (p + r);
}

double ratio_or_zero(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<int64_t>& gold,
                                                  const std::vector<int64_t>& predicted,
                                                  const std::vector<std::string>& labels) {
    if (labels.empty()) throw std::invalid_argument("score: empty label set");
    if (gold.size() != predicted.size())
        throw std::invalid_argument("score: " + std::to_string(gold.size()) + " gold labels vs " +
                                    std::to_string(predicted.size()) + " predictions");
    if (gold.empty()) throw std::invalid_argument("score: nothing to score");
    const int64_t c = static_cast<int64_t>(labels.size());
    ConfusionMatrix cm;
    cm.labels = labels;
    cm.counts.assign(static_cast<size_t>(c * c), 0);
    for (size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || gold[i] >= c)
            throw std::invalid_argument("score: gold id " + std::to_string(gold[i]) + " out of range at item " +
                                        std::to_string(i));
        if (predicted[i] < 0 || predicted[i] >= c)
            throw std::invalid_argument("score: predicted id " + std::to_string(predicted[i]) +
                                        " out of range at item " + std::to_string(i));
        ++cm.counts[static_cast<size_t>(gold[i] * c + predicted[i])];
    }
    return cm;
}

int64_t ConfusionMatrix::at(size_t gold_id, size_t pred_id) const {
    return counts[gold_id * labels.size() + pred_id];
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t v : counts) t += v;
    return t;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

EvalReport report_from_confusion(const ConfusionMatrix& cm) {
    const size_t c = cm.labels.size();
    EvalReport rep;
    rep.total_support = cm.total();

    int64_t pooled_tp = 0, pooled_pred = 0, pooled_gold = 0;
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    double wsum_p = 0.0, wsum_r = 0.0, wsum_f = 0.0;

    for (size_t k = 0; k < c; ++k) {
        int64_t tp = cm.at(k, k);
        int64_t gold_count = 0, pred_count = 0;
        for (size_t j = 0; j < c; ++j) {
            gold_count += cm.at(k, j);
            pred_count += cm.at(j, k);
        }
        ClassScore s;
        s.label = cm.labels[k];
        s.support = gold_count;
        s.precision = ratio_or_zero(static_cast<double>(tp), static_cast<double>(pred_count));
        s.recall = ratio_or_zero(static_cast<double>(tp), static_cast<double>(gold_count));
        s.f1 = f1_of(s.precision, s.recall);
        if (pred_count == 0 || gold_count == 0) rep.warnings.push_back(s.label);
        rep.per_class.push_back(s);

        pooled_tp += tp;
        pooled_pred += pred_count;
        pooled_gold += gold_count;
        macro_p += s.precision;
        macro_r += s.recall;
        macro_f += s.f1;
        wsum_p += static_cast<double>(gold_count) * s.precision;
        wsum_r += static_cast<double>(gold_count) * s.recall;
        wsum_f += static_cast<double>(gold_count) * s.f1;
    }

    rep.micro.precision = ratio_or_zero(static_cast<double>(pooled_tp), static_cast<double>(pooled_pred));
    rep.micro.recall = ratio_or_zero(static_cast<double>(pooled_tp), static_cast<double>(pooled_gold));
    rep.micro.f1 = f1_of(rep.micro.precision, rep.micro.recall);
    rep.micro.support = rep.total_support;

    rep.macro.precision = macro_p / static_cast<double>(c);
    rep.macro.recall = macro_r / static_cast<double>(c);
    rep.macro.f1 = macro_f / static_cast<double>(c);
    rep.macro.support = rep.total_support;

    rep.weighted.precision = ratio_or_zero(wsum_p, static_cast<double>(rep.total_support));
    rep.weighted.recall = ratio_or_zero(wsum_r, static_cast<double>(rep.total_support));
    rep.weighted.f1 = ratio_or_zero(wsum_f, static_cast<double>(rep.total_support));
    rep.weighted.support = rep.total_support;
    return rep;
}

EvalReport score(const std::vector<int64_t>& gold, const std::vector<int64_t>& predicted,
                 const std::vector<std::string>& labels) {
    return report_from_confusion(ConfusionMatrix::from_predictions(gold, predicted, labels));
}

Aggregates aggregates_from_class_rows(const std::vector<ClassRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("aggregates: no class rows");
    double tp_sum = 0.0, pred_sum = 0.0;
    int64_t support_sum = 0;
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    double wsum_p = 0.0, wsum_r = 0.0, wsum_f = 0.0;
    for (const ClassRow& r : rows) {
        double tp = r.recall * static_cast<double>(r.support);
        tp_sum += tp;
        if (r.precision > 0.0) pred_sum += tp / r.precision;
        support_sum += r.support;
        macro_p += r.precision;
        macro_r += r.recall;
        macro_f += r.f1;
        wsum_p += static_cast<double>(r.support) * r.precision;
        wsum_r += static_cast<double>(r.support) * r.recall;
        wsum_f += static_cast<double>(r.support) * r.f1;
    }
    Aggregates agg;
    agg.micro.precision = ratio_or_zero(tp_sum, pred_sum);
    agg.micro.recall = ratio_or_zero(tp_sum, static_cast<double>(support_sum));
    agg.micro.f1 = f1_of(agg.micro.precision, agg.micro.recall);
    agg.micro.support = support_sum;
    agg.macro.precision = macro_p / static_cast<double>(rows.size());
    agg.macro.recall = macro_r / static_cast<double>(rows.size());
    agg.macro.f1 = macro_f / static_cast<double>(rows.size());
    agg.macro.support = support_sum;
    agg.weighted.precision = ratio_or_zero(wsum_p, static_cast<double>(support_sum));
    agg.weighted.recall = ratio_or_zero(wsum_r, static_cast<double>(support_sum));
    agg.weighted.f1 = ratio_or_zero(wsum_f, static_cast<double>(support_sum));
    agg.weighted.support = support_sum;
    return agg;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

std::string format_3dp(double x) {
    // Round half up at three decimals; metric values are non-negative.
    long long milli = std::llround(x * 1000.0);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld.%03lld", milli / 1000, milli % 1000);
    return buf;
}

std::string render_report(const EvalReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%12s %9s %9s %9s %9s\n", "", "precision", "recall", "f1-score",
                  "support");
    out << line;
    out << "\n";
    for (const ClassScore& s : report.per_class) {
        std::snprintf(line, sizeof(line), "%12s %9s %9s %9s %9lld\n", s.label.c_str(),
                      format_3dp(s.precision).c_str(), format_3dp(s.recall).c_str(),
                      format_3dp(s.f1).c_str(), static_cast<long long>(s.support));
        out << line;
    }
    out << "\n";
    auto agg_row = [&](const char* name, const AggregateScore& a) {
        std::snprintf(line, sizeof(line), "%12s %9s %9s %9s %9lld\n", name, format_3dp(a.precision).c_str(),
                      format_3dp(a.recall).c_str(), format_3dp(a.f1).c_str(),
                      static_cast<long long>(a.support));
        out << line;
    };
    agg_row("micro avg", report.micro);
    agg_row("macro avg", report.macro);
    agg_row("weighted avg", report.weighted);
    return out.str();
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["classes"] = json::array();
    for (const ClassScore& s : report.per_class)
        j["classes"].push_back({{"label", s.label},
                                {"precision", s.precision},
                                {"recall", s.recall},
                                {"f1", s.f1},
                                {"support", s.support}});
    auto agg = [](const AggregateScore& a) {
        return json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}, {"support", a.support}};
    };
    j["micro_avg"] = agg(report.micro);
    j["macro_avg"] = agg(report.macro);
    j["weighted_avg"] = agg(report.weighted);
    j["total_support"] = report.total_support;
    j["zero_denominator_labels"] = report.warnings;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Offline predictions
// ---------------------------------------------------------------------------

std::pair<std::vector<int64_t>, std::vector<int64_t>> load_predictions(
    const std::string& path, const std::vector<std::string>& labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("predictions: cannot open " + path);
    auto id_of = [&](const std::string& label, size_t lineno) -> int64_t {
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<int64_t>(i);
        throw std::runtime_error("predictions: " + path + ": line " + std::to_string(lineno) +
                                 ": unknown label \"" + label + "\"");
    };
    std::vector<int64_t> gold, pred;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("predictions: " + path + ": line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        if (!j.contains("gold") || !j.contains("pred"))
            throw std::runtime_error("predictions: " + path + ": line " + std::to_string(lineno) +
                                     ": need \"gold\" and \"pred\"");
        gold.push_back(id_of(j.at("gold").get<std::string>(), lineno));
        pred.push_back(id_of(j.at("pred").get<std::string>(), lineno));
    }
    return {std::move(gold), std::move(pred)};
}

}  // namespace emoc
