#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace emoc {

// Rows are gold labels, columns predictions.
struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<int64_t> counts;  // C x C row-major

    static ConfusionMatrix from_predictions(const std::vector<int64_t>& gold,
                                            const std::vector<int64_t>& predicted,
                                            const std::vector<std::string>& labels);

    int64_t at(size_t gold_id, size_t pred_id) const;
    int64_t total() const;
};

struct ClassScore {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int64_t support = 0;
};

struct AggregateScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int64_t support = 0;
};

struct EvalReport {
    std::vector<ClassScore> per_class;
    AggregateScore micro;
    AggregateScore macro;
    AggregateScore weighted;
    int64_t total_support = 0;
    // Classes whose precision or recall hit the zero-denominator convention.
    std::vector<std::string> warnings;
};

// Per-class precision/recall/F1 with the 0-on-zero-denominator convention,
// plus micro (pooled counts), macro (unweighted mean) and weighted (gold
// support) aggregates.
EvalReport score(const std::vector<int64_t>& gold, const std::vector<int64_t>& predicted,
                 const std::vector<std::string>& labels);

EvalReport report_from_confusion(const ConfusionMatrix& cm);

// Fixed-width table in the usual scorer layout, three decimals,
// round-half-up.
std::string render_report(const EvalReport& report);

// Machine-readable twin of render_report.
std::string report_to_json(const EvalReport& report);

// Aggregates recomputed from per-class rows alone; true-positive and
// predicted counts are reconstructed from recall/precision and support.
struct ClassRow {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int64_t support = 0;
};

struct Aggregates {
    AggregateScore micro;
    AggregateScore macro;
    AggregateScore weighted;
};

Aggregates aggregates_from_class_rows(const std::vector<ClassRow>& rows);

// JSON-lines {"gold": label, "pred": label}; unknown labels rejected.
std::pair<std::vector<int64_t>, std::vector<int64_t>> load_predictions(
    const std::string& path, const std::vector<std::string>& labels);

std::string format_3dp(double x);

}  // namespace emoc
