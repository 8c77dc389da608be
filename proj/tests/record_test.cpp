#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "forvalue/record.hpp"
#include "test_util.hpp"

namespace forvalue {
namespace {

using testing::make_record;
using testing::vocab_of;

TEST(RestrictedVocab, FromTokensSortsAndDeduplicates) {
    auto v = RestrictedVocab::from_tokens({TokenId(9), TokenId(3), TokenId(9), TokenId(5)});
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0], TokenId(3));
    EXPECT_EQ(v[1], TokenId(5));
    EXPECT_EQ(v[2], TokenId(9));
    EXPECT_FALSE(v.index_of(TokenId(4)).has_value());
}

TEST(RestrictedVocab, FromSortedRejectsDisorderAndDuplicates) {
    EXPECT_THROW(RestrictedVocab::from_sorted({TokenId(3), TokenId(2)}), data_error);
    EXPECT_THROW(RestrictedVocab::from_sorted({TokenId(3), TokenId(3)}), data_error);
    EXPECT_NO_THROW(RestrictedVocab::from_sorted({TokenId(1), TokenId(7)}));
}

TEST(RestrictedVocab, ReverseLookupInvertsForwardLookup) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TokenId> tokens;
        const int n = 1 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) tokens.emplace_back(rng() % 1000);
        const auto v = RestrictedVocab::from_tokens(tokens);
        for (std::size_t local = 0; local < v.size(); ++local) EXPECT_EQ(v.index_of(v[local]), local);
        for (TokenId t : tokens) EXPECT_EQ(v[*v.index_of(t)], t);
    }
}

TEST(RestrictedVocab, SubsetAndFull) {
    auto full = RestrictedVocab::full(5);
    EXPECT_EQ(full.size(), 5u);
    EXPECT_TRUE(vocab_of({1, 4})->is_subset_of(full));
    EXPECT_FALSE(vocab_of({1, 5})->is_subset_of(full));
}

SampleRecord valid_record() {
    auto vocab = vocab_of({2, 5, 7});
    return make_record("r", vocab, {2, 7, 5},
                       {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}},
                       {{0.2, 0.3, 0.5}, {0.1, 0.1, 0.8}, {0.6, 0.4, 0.0}});
}

TEST(ValidateRecord, ValidRecordHasEmptyReport) {
    auto rec = valid_record();
    EXPECT_TRUE(validate_record(rec, *rec.vocab).ok());
}

TEST(ValidateRecord, ReportsProbabilitySumDrift) {
    auto rec = valid_record();
    rec.probs(0, 2) = 0.4; // row 0 sums to 0.90
    auto report = validate_record(rec, *rec.vocab);
    ASSERT_TRUE(report.has(ViolationKind::probability_sum_drift));
    EXPECT_EQ(report.violations.front().message, "probability-sum drift, row 0");
}

TEST(ValidateRecord, ToleratesDriftWithinTolerance) {
    auto rec = valid_record();
    rec.probs(1, 2) += 0.5e-4;
    EXPECT_TRUE(validate_record(rec, *rec.vocab).ok());
    rec.probs(1, 2) += 1e-4;
    EXPECT_TRUE(validate_record(rec, *rec.vocab).has(ViolationKind::probability_sum_drift));
}

TEST(ValidateRecord, ResidualMassCountsTowardsTheSum) {
    auto rec = valid_record();
    rec.probs(2, 0) = 0.5;
    EXPECT_FALSE(validate_record(rec, *rec.vocab).ok());
    rec.residual_mass[2] = 0.1;
    EXPECT_TRUE(validate_record(rec, *rec.vocab).ok());
}

TEST(ValidateRecord, ReportsOutOfVocabTarget) {
    auto rec = valid_record();
    rec.targets[1] = TokenId(11);
    auto report = validate_record(rec, *rec.vocab);
    ASSERT_TRUE(report.has(ViolationKind::out_of_vocab_target));
    EXPECT_NE(report.violations.front().message.find("out-of-vocab target"), std::string::npos);
}

TEST(ValidateRecord, ReportsDimensionMismatchAndNonFinite) {
    auto rec = valid_record();
    rec.hidden = Matrix(2, 4);
    EXPECT_TRUE(validate_record(rec, *rec.vocab).has(ViolationKind::dimension_mismatch));

    rec = valid_record();
    rec.hidden(1, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_TRUE(validate_record(rec, *rec.vocab).has(ViolationKind::non_finite_entry));

    rec = valid_record();
    rec.probs(0, 0) = -0.1;
    rec.probs(0, 1) = 0.6;
    EXPECT_TRUE(validate_record(rec, *rec.vocab).has(ViolationKind::probability_out_of_range));
}

TEST(ValidateRecord, EmptyRecordIsInvalid) {
    auto vocab = vocab_of({1});
    SampleRecord rec;
    rec.id = "empty";
    rec.vocab = vocab;
    rec.probs = Matrix(0, 1);
    EXPECT_TRUE(validate_record(rec, *vocab).has(ViolationKind::empty_record));
}

TEST(ValidateRecord, ListsEveryViolation) {
    auto rec = valid_record();
    rec.targets[0] = TokenId(99);
    rec.probs(2, 0) = 0.1;
    rec.hidden(0, 0) = std::numeric_limits<double>::infinity();
    auto report = validate_record(rec, *rec.vocab);
    EXPECT_TRUE(report.has(ViolationKind::out_of_vocab_target));
    EXPECT_TRUE(report.has(ViolationKind::probability_sum_drift));
    EXPECT_TRUE(report.has(ViolationKind::non_finite_entry));
}

TEST(ProbRow, ExposesTargetProbability) {
    auto rec = valid_record();
    const ProbRow row = rec.prob_row(1);
    EXPECT_EQ(row.target_local, 2u);
    EXPECT_DOUBLE_EQ(row.target_prob(), 0.8);
    EXPECT_DOUBLE_EQ(row.residual_mass, 0.0);
}

TEST(ScoreTable, UnknownValuationIdThrows) {
    ScoreTable t;
    t.valuation_ids = {"a"};
    EXPECT_EQ(t.valuation_index("a"), 0u);
    EXPECT_THROW(t.valuation_index("b"), lookup_error);
}

} // namespace
} // namespace forvalue
