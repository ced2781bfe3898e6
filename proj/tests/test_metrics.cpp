#include "emoc/metrics.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "emoc/datapipe.hpp"
#include "emoc/rng.hpp"
#include "testutil.hpp"

using namespace emoc;

namespace {

std::vector<std::string> four_labels() {
    return {LabelSet::names().begin(), LabelSet::names().end()};
}

// Published per-class reference rows for the two dialogue corpora; the
// aggregate rows they came with are frozen in the checks below.
std::vector<ClassRow> friends_rows() {
    return {{0.801, 0.914, 0.854, 1035}, {0.854, 0.648, 0.736, 505},
            {0.608, 0.512, 0.556, 121},  {0.662, 0.638, 0.650, 141}};
}

std::vector<ClassRow> emotionpush_rows() {
    return {{0.908, 0.917, 0.913, 2146}, {0.747, 0.730, 0.738, 601},
            {0.627, 0.627, 0.627, 110},  {0.474, 0.333, 0.391, 27}};
}

std::string collapse_spaces(const std::string& s) {
    std::string out;
    bool in_space = false;
    for (char c : s) {
        if (c == ' ' || c == '\t') {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty() && out.back() != '\n') out += ' ';
        in_space = false;
        out += c;
    }
    return out;
}

// Independent scorer: plain counting loops, no confusion matrix.
struct BruteScore {
    double p, r, f1;
    int64_t support;
};

BruteScore brute_class_score(const std::vector<int64_t>& gold, const std::vector<int64_t>& pred,
                             int64_t cls) {
    int64_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] == cls) ++support;
        if (pred[i] == cls && gold[i] == cls) ++tp;
        if (pred[i] == cls && gold[i] != cls) ++fp;
        if (pred[i] != cls && gold[i] == cls) ++fn;
    }
    BruteScore s{};
    s.support = support;
    s.p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    s.r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    s.f1 = s.p + s.r > 0 ? 2 * s.p * s.r / (s.p + s.r) : 0.0;
    return s;
}

}  // namespace

TEST_CASE("all-correct predictions score 1.0 everywhere") {
    std::vector<int64_t> gold = {0, 0, 1, 2};  // supports {2,1,1}
    EvalReport rep = score(gold, gold, four_labels());
    for (size_t k = 0; k < 3; ++k) {
        CHECK(rep.per_class[k].precision == 1.0);
        CHECK(rep.per_class[k].recall == 1.0);
        CHECK(rep.per_class[k].f1 == 1.0);
    }
    CHECK(rep.micro.precision == 1.0);
    CHECK(rep.micro.f1 == 1.0);
    CHECK(rep.total_support == 4);
}

TEST_CASE("hand-enumerated confusion example") {
    std::vector<int64_t> gold = {0, 0, 1, 2};
    std::vector<int64_t> pred = {0, 1, 1, 2};
    EvalReport rep = score(gold, pred, four_labels());

    for (int64_t cls = 0; cls < 4; ++cls) {
        BruteScore b = brute_class_score(gold, pred, cls);
        const ClassScore& s = rep.per_class[static_cast<size_t>(cls)];
        CHECK(s.precision == doctest::Approx(b.p).epsilon(1e-15));
        CHECK(s.recall == doctest::Approx(b.r).epsilon(1e-15));
        CHECK(s.f1 == doctest::Approx(b.f1).epsilon(1e-15));
        CHECK(s.support == b.support);
    }
    CHECK(rep.micro.precision == doctest::Approx(0.75));
    CHECK(rep.macro.precision == doctest::Approx(0.625));
    CHECK(rep.macro.recall == doctest::Approx(0.625));
    CHECK(rep.weighted.precision == doctest::Approx(0.875));
    CHECK(rep.weighted.recall == doctest::Approx(0.75));
    CHECK(rep.weighted.f1 == doctest::Approx(0.75));
    // the class with no predictions and no gold hits the zero convention
    CHECK(rep.per_class[3].precision == 0.0);
    CHECK(!rep.warnings.empty());
}

TEST_CASE("score validates inputs") {
    CHECK_THROWS_AS(score({0, 1}, {0}, four_labels()), std::invalid_argument);
    CHECK_THROWS_AS(score({}, {}, four_labels()), std::invalid_argument);
    CHECK_THROWS_AS(score({0, 4}, {0, 1}, four_labels()), std::invalid_argument);
    CHECK_THROWS_AS(score({0, -1}, {0, 1}, four_labels()), std::invalid_argument);
}

TEST_CASE("reference aggregate rows are reproduced from per-class rows") {
    {
        Aggregates agg = aggregates_from_class_rows(friends_rows());
        CHECK(std::abs(agg.micro.precision - 0.791) < 1e-3);
        CHECK(std::abs(agg.micro.recall - 0.791) < 1e-3);
        CHECK(std::abs(agg.micro.f1 - 0.791) < 1e-3);
        CHECK(std::abs(agg.macro.precision - 0.731) < 1e-3);
        CHECK(std::abs(agg.macro.recall - 0.678) < 1e-3);
        CHECK(std::abs(agg.macro.f1 - 0.699) < 1e-3);
        CHECK(std::abs(agg.weighted.precision - 0.792) < 1e-3);
        CHECK(std::abs(agg.weighted.recall - 0.791) < 1e-3);
        CHECK(std::abs(agg.weighted.f1 - 0.785) < 1e-3);
        CHECK(agg.micro.support == 1802);
    }
    {
        Aggregates agg = aggregates_from_class_rows(emotionpush_rows());
        CHECK(std::abs(agg.micro.precision - 0.862) < 1e-3);
        CHECK(std::abs(agg.micro.recall - 0.862) < 1e-3);
        CHECK(std::abs(agg.micro.f1 - 0.862) < 1e-3);
        CHECK(std::abs(agg.macro.precision - 0.689) < 1e-3);
        CHECK(std::abs(agg.macro.recall - 0.652) < 1e-3);
        CHECK(std::abs(agg.macro.f1 - 0.667) < 1e-3);
        CHECK(std::abs(agg.weighted.precision - 0.860) < 1e-3);
        CHECK(std::abs(agg.weighted.recall - 0.862) < 1e-3);
        CHECK(std::abs(agg.weighted.f1 - 0.861) < 1e-3);
        CHECK(agg.micro.support == 2884);
    }
    // hand-checkable aggregates straight from the frozen rows
    auto rows = friends_rows();
    double macro_f1 = (0.854 + 0.736 + 0.556 + 0.650) / 4.0;
    CHECK(std::abs(aggregates_from_class_rows(rows).macro.f1 - macro_f1) < 1e-12);
    double weighted_f1 =
        (1035 * 0.854 + 505 * 0.736 + 121 * 0.556 + 141 * 0.650) / 1802.0;
    CHECK(std::abs(aggregates_from_class_rows(rows).weighted.f1 - weighted_f1) < 1e-12);
}

TEST_CASE("micro identity holds exactly on random prediction sets") {
    Rng rng(606);
    for (int iter = 0; iter < 100; ++iter) {
        size_t n = 1 + rng.below(200);
        std::vector<int64_t> gold(n), pred(n);
        for (size_t i = 0; i < n; ++i) {
            gold[i] = static_cast<int64_t>(rng.below(4));
            pred[i] = static_cast<int64_t>(rng.below(4));
        }
        EvalReport rep = score(gold, pred, four_labels());
        int64_t correct = 0;
        for (size_t i = 0; i < n; ++i)
            if (gold[i] == pred[i]) ++correct;
        double accuracy = double(correct) / double(n);
        CHECK(rep.micro.precision == rep.micro.recall);
        CHECK(rep.micro.recall == rep.micro.f1);
        CHECK(rep.micro.precision == accuracy);
    }
}

TEST_CASE("report is invariant under joint permutation") {
    Rng rng(707);
    size_t n = 60;
    std::vector<int64_t> gold(n), pred(n);
    for (size_t i = 0; i < n; ++i) {
        gold[i] = static_cast<int64_t>(rng.below(4));
        pred[i] = static_cast<int64_t>(rng.below(4));
    }
    EvalReport a = score(gold, pred, four_labels());

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int64_t> gold2(n), pred2(n);
    for (size_t i = 0; i < n; ++i) {
        gold2[i] = gold[order[i]];
        pred2[i] = pred[order[i]];
    }
    EvalReport b = score(gold2, pred2, four_labels());
    CHECK(render_report(a) == render_report(b));
    CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("render_report layout and rounding") {
    EvalReport rep;
    rep.per_class = {{"neutral", 0.908, 0.917, 0.913, 2146},
                     {"joy", 0.747, 0.730, 0.738, 601},
                     {"sadness", 0.627, 0.627, 0.627, 110},
                     {"anger", 0.474, 0.333, 0.391, 27}};
    rep.micro = {0.862, 0.862, 0.862, 2884};
    rep.macro = {0.689, 0.652, 0.667, 2884};
    rep.weighted = {0.860, 0.862, 0.861, 2884};
    rep.total_support = 2884;

    std::string flat = collapse_spaces(render_report(rep));
    CHECK(flat.find("precision recall f1-score support") != std::string::npos);
    CHECK(flat.find("micro avg 0.862 0.862 0.862 2884") != std::string::npos);
    CHECK(flat.find("macro avg 0.689 0.652 0.667 2884") != std::string::npos);
    CHECK(flat.find("weighted avg 0.860 0.862 0.861 2884") != std::string::npos);
    CHECK(flat.find("neutral 0.908 0.917 0.913 2146") != std::string::npos);

    CHECK(format_3dp(0.6915) == "0.692");  // round half up
    CHECK(format_3dp(0.8615) == "0.862");
    CHECK(format_3dp(0.0) == "0.000");
    CHECK(format_3dp(1.0) == "1.000");
    CHECK(format_3dp(0.9999) == "1.000");
}

TEST_CASE("json twin round trips numerically") {
    Rng rng(808);
    std::vector<int64_t> gold, pred;
    for (int i = 0; i < 100; ++i) {
        gold.push_back(static_cast<int64_t>(rng.below(4)));
        pred.push_back(static_cast<int64_t>(rng.below(4)));
    }
    EvalReport rep = score(gold, pred, four_labels());
    nlohmann::json j = nlohmann::json::parse(report_to_json(rep));
    REQUIRE(j.at("classes").size() == 4);
    for (size_t k = 0; k < 4; ++k) {
        CHECK(std::abs(j["classes"][k]["precision"].get<double>() - rep.per_class[k].precision) < 1e-9);
        CHECK(std::abs(j["classes"][k]["recall"].get<double>() - rep.per_class[k].recall) < 1e-9);
        CHECK(std::abs(j["classes"][k]["f1"].get<double>() - rep.per_class[k].f1) < 1e-9);
        CHECK(j["classes"][k]["support"].get<int64_t>() == rep.per_class[k].support);
        CHECK(j["classes"][k]["label"].get<std::string>() == rep.per_class[k].label);
    }
    CHECK(std::abs(j["micro_avg"]["f1"].get<double>() - rep.micro.f1) < 1e-9);
    CHECK(std::abs(j["macro_avg"]["f1"].get<double>() - rep.macro.f1) < 1e-9);
    CHECK(std::abs(j["weighted_avg"]["f1"].get<double>() - rep.weighted.f1) < 1e-9);
    CHECK(j["total_support"].get<int64_t>() == rep.total_support);
}

TEST_CASE("zero-denominator convention flags the class") {
    // class 3 never predicted, class 2 never gold
    std::vector<int64_t> gold = {0, 1, 3, 3};
    std::vector<int64_t> pred = {0, 1, 2, 2};
    EvalReport rep = score(gold, pred, four_labels());
    CHECK(rep.per_class[3].precision == 0.0);
    CHECK(rep.per_class[3].recall == 0.0);
    CHECK(rep.per_class[3].f1 == 0.0);
    CHECK(rep.per_class[2].recall == 0.0);
    CHECK(!rep.warnings.empty());
    nlohmann::json j = nlohmann::json::parse(report_to_json(rep));
    CHECK(j.at("zero_denominator_labels").size() >= 1);
}

TEST_CASE("prediction files load and reject unknown labels") {
    testutil::TempDir tmp("preds");
    testutil::write_file(tmp.file("ok.jsonl"),
                         "{\"gold\": \"joy\", \"pred\": \"joy\"}\n"
                         "{\"gold\": \"anger\", \"pred\": \"neutral\"}\n"
                         "\n");
    auto [gold, pred] = load_predictions(tmp.file("ok.jsonl"), four_labels());
    REQUIRE(gold.size() == 2);
    CHECK(gold[0] == 1);
    CHECK(pred[1] == 0);

    testutil::write_file(tmp.file("bad.jsonl"), "{\"gold\": \"zeal\", \"pred\": \"joy\"}\n");
    CHECK_THROWS_WITH_AS(load_predictions(tmp.file("bad.jsonl"), four_labels()),
                         doctest::Contains("zeal"), std::runtime_error);

    testutil::write_file(tmp.file("short.jsonl"), "{\"gold\": \"joy\"}\n");
    CHECK_THROWS_AS(load_predictions(tmp.file("short.jsonl"), four_labels()), std::runtime_error);
}
