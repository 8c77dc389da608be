#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "forvalue/metrics.hpp"

namespace forvalue {
namespace {

using Labels = std::vector<std::uint8_t>;

// Pair counting over every (positive, negative) pair.
double brute_auc(const std::vector<double>& s, const Labels& l) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t p = 0; p < s.size(); ++p) {
        if (!l[p]) continue;
        for (std::size_t n = 0; n < s.size(); ++n) {
            if (l[n]) continue;
            pairs += 1.0;
            wins += s[p] > s[n] ? 1.0 : (s[p] == s[n] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

TEST(Auc, Examples) {
    EXPECT_DOUBLE_EQ(auc(std::vector<double>{3, 2, 1}, Labels{1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(auc(std::vector<double>{1, 2, 3}, Labels{1, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(auc(std::vector<double>{1, 1, 1, 1}, Labels{1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.9, 0.1, 0.5, 0.5}, Labels{1, 0, 1, 0}), 0.875);
}

TEST(Auc, SingleClassIsUndefined) {
    EXPECT_THROW(auc(std::vector<double>{1, 2}, Labels{1, 1}), undefined_metric);
    EXPECT_THROW(auc(std::vector<double>{1, 2}, Labels{0, 0}), undefined_metric);
    EXPECT_THROW(auc(std::vector<double>{1, 2}, Labels{0}), data_error);
}

TEST(Auc, MatchesBruteForceWithTies) {
    std::mt19937 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        std::vector<double> s(n);
        Labels l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 7);
            l[i] = rng() % 2;
        }
        l[0] = 1;
        l[1] = 0;
        EXPECT_NEAR(auc(s, l), brute_auc(s, l), 1e-12);
    }
}

TEST(Auc, InvariantUnderIncreasingTransform) {
    std::mt19937 rng(2);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(20), t(20);
        Labels l(20);
        for (std::size_t i = 0; i < 20; ++i) {
            s[i] = normal(rng);
            t[i] = std::exp(3.0 * s[i]) + 7.0;
            l[i] = i % 3 == 0;
        }
        EXPECT_DOUBLE_EQ(auc(s, l), auc(t, l));
        EXPECT_DOUBLE_EQ(recall_at_class(s, l), recall_at_class(t, l));
    }
}

TEST(Recall, CutoffIsNumberOfPositives) {
    EXPECT_DOUBLE_EQ(recall_at_class(std::vector<double>{5, 4, 3, 2}, Labels{1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(recall_at_class(std::vector<double>{5, 4, 3, 2}, Labels{1, 1, 0, 0}), 1.0);
    // Tie at the cutoff resolved by ascending index.
    EXPECT_DOUBLE_EQ(recall_at_class(std::vector<double>{1, 1, 0}, Labels{0, 1, 0}), 0.0);
    EXPECT_THROW(recall_at_class(std::vector<double>{1}, Labels{0}), undefined_metric);
}

TEST(PseudoLabels, InfluenceAndMislabelRules) {
    const std::vector<std::string> labels{"cat", "dog", "cat", "cat"};
    EXPECT_EQ(pseudo_labels(labels, "cat", LabelMode::influence), (Labels{1, 0, 1, 1}));
    const Labels clean{1, 1, 0, 1};
    EXPECT_EQ(pseudo_labels(labels, "cat", LabelMode::mislabel, std::span<const std::uint8_t>(clean)),
              (Labels{1, 0, 0, 1}));
    EXPECT_THROW(pseudo_labels(labels, "cat", LabelMode::mislabel), data_error);
    const Labels short_clean{1};
    EXPECT_THROW(pseudo_labels(labels, "cat", LabelMode::mislabel, std::span<const std::uint8_t>(short_clean)),
                 data_error);
}

TEST(ReadLabels, AcceptsCommaAndWhitespace) {
    std::istringstream in("# header\na,cat,1\nb dog 0\n\nv1,cat\n");
    const auto t = read_labels(in);
    EXPECT_EQ(t.class_of.at("a"), "cat");
    EXPECT_EQ(t.class_of.at("b"), "dog");
    EXPECT_EQ(t.class_of.at("v1"), "cat");
    EXPECT_TRUE(t.clean_of.at("a"));
    EXPECT_FALSE(t.clean_of.at("b"));
    EXPECT_EQ(t.clean_of.count("v1"), 0u);
}

TEST(ReadLabels, RejectsMalformedLines) {
    std::istringstream one("a\n");
    EXPECT_THROW(read_labels(one), data_error);
    std::istringstream flag("a,cat,yes\n");
    EXPECT_THROW(read_labels(flag), data_error);
    std::istringstream dup("a,cat\na,dog\n");
    EXPECT_THROW(read_labels(dup), data_error);
}

ScoreTable table_2x4() {
    ScoreTable t;
    t.valuation_ids = {"v_cat", "v_dog"};
    t.training_ids = {"t0", "t1", "t2", "t3"};
    t.scores = Matrix(2, 4);
    const double rows[2][4] = {{4, 3, 2, 1}, {1, 3, 2, 4}};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 4; ++b) t.scores(a, b) = rows[a][b];
    return t;
}

LabelTable labels_2x4() {
    std::istringstream in("t0,cat,1\nt1,cat,0\nt2,dog,1\nt3,dog,1\nv_cat,cat\nv_dog,dog\n");
    return read_labels(in);
}

TEST(Evaluate, InfluenceMode) {
    const auto r = evaluate(table_2x4(), labels_2x4(), LabelMode::influence);
    ASSERT_EQ(r.n_valuation, 2u);
    EXPECT_DOUBLE_EQ(r.per_valuation[0].auc, 1.0);
    EXPECT_DOUBLE_EQ(r.per_valuation[1].auc, 0.75);
    EXPECT_DOUBLE_EQ(r.mean_auc, 0.875);
    EXPECT_DOUBLE_EQ(r.std_auc, 0.125);
    EXPECT_DOUBLE_EQ(r.per_valuation[1].recall, 0.5);
}

TEST(Evaluate, MislabelModeUsesCleanFlags) {
    const auto r = evaluate(table_2x4(), labels_2x4(), LabelMode::mislabel);
    // v_cat positives: only t0.
    EXPECT_DOUBLE_EQ(r.per_valuation[0].auc, 1.0);
    EXPECT_DOUBLE_EQ(r.per_valuation[0].recall, 1.0);
}

TEST(Evaluate, SkipsUndefinedPointsAndFailsWhenAllUndefined) {
    auto t = table_2x4();
    std::istringstream in("t0,cat\nt1,cat\nt2,cat\nt3,cat\nv_cat,cat\nv_dog,dog\n");
    const auto labels = read_labels(in);
    EXPECT_THROW(evaluate(t, labels, LabelMode::influence), undefined_metric);

    std::istringstream in2("t0,cat\nt1,dog\nt2,cat\nt3,cat\nv_cat,cat\nv_dog,bird\n");
    const auto r = evaluate(t, read_labels(in2), LabelMode::influence);
    EXPECT_EQ(r.n_valuation, 1u);
    EXPECT_EQ(r.skipped, (std::vector<std::string>{"v_dog"}));
}

TEST(Evaluate, MissingLabelIsLookupError) {
    std::istringstream in("t0,cat\nv_cat,cat\nv_dog,dog\n");
    EXPECT_THROW(evaluate(table_2x4(), read_labels(in), LabelMode::influence), lookup_error);
}

TEST(Evaluate, ReportJsonCarriesMeanAndStd) {
    const auto j = report_to_json(evaluate(table_2x4(), labels_2x4(), LabelMode::influence));
    EXPECT_EQ(j["mode"], "influence");
    EXPECT_DOUBLE_EQ(j["mean_auc"].get<double>(), 0.875);
    EXPECT_EQ(j["per_valuation"].size(), 2u);
}

} // namespace
} // namespace forvalue
