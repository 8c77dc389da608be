#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "forvalue/sketch.hpp"
#include "forvalue/synthetic.hpp"
#include "test_util.hpp"

namespace forvalue {
namespace {

using testing::make_record;
using testing::vocab_of;

TEST(BatchVocab, UnionOfTargets) {
    auto vocab = vocab_of({1, 2, 3, 4, 5, 6});
    auto p = std::vector<std::vector<double>>(2, std::vector<double>(6, 1.0 / 6));
    auto h = std::vector<std::vector<double>>(2, std::vector<double>{1.0});
    std::vector<SampleRecord> batch{make_record("a", vocab, {5, 2}, h, p), make_record("b", vocab, {2, 6}, h, p)};
    auto v = make_record("v", vocab, {1, 1}, h, p);
    const auto u = batch_vocab(batch, v);
    EXPECT_EQ(u, *vocab_of({1, 2, 5, 6}));
}

TEST(ErrorRow, TargetMinusDistribution) {
    auto vocab = vocab_of({3, 7, 9});
    auto rec = make_record("r", vocab, {7}, {{1.0}}, {{0.2, 0.5, 0.3}});
    const auto row = error_row(rec, 0, vocab);
    ASSERT_EQ(row.values.size(), 3u);
    EXPECT_DOUBLE_EQ(row.values[0], -0.2);
    EXPECT_DOUBLE_EQ(row.values[1], 0.5);
    EXPECT_DOUBLE_EQ(row.values[2], -0.3);
}

TEST(ErrorRow, SubVocabularySelectsColumns) {
    auto vocab = vocab_of({3, 7, 9});
    auto rec = make_record("r", vocab, {7}, {{1.0}}, {{0.2, 0.5, 0.3}});
    const auto row = error_row(rec, 0, vocab_of({3, 7}));
    EXPECT_EQ(row.values, (std::vector<double>{-0.2, 0.5}));
    // Target outside the vocabulary leaves only the negated distribution.
    EXPECT_EQ(error_row(rec, 0, vocab_of({9})).values, (std::vector<double>{-0.3}));
}

TEST(ErrorRow, MissingProbabilityIsDataError) {
    auto vocab = vocab_of({3, 7});
    auto rec = make_record("r", vocab, {7}, {{1.0}}, {{0.4, 0.6}});
    EXPECT_THROW(error_row(rec, 0, vocab_of({3, 8})), data_error);
}

TEST(BuildSketch, HandExample) {
    auto vocab = vocab_of({0, 1});
    // k=0: target 0, pi=(0.5,0.5) -> e=(0.5,-0.5), h=(1,2)
    // k=1: target 1, pi=(0.25,0.75) -> e=(-0.25,0.25), h=(4,0)
    auto rec = make_record("r", vocab, {0, 1}, {{1, 2}, {4, 0}}, {{0.5, 0.5}, {0.25, 0.75}});
    const auto s = build_sketch(rec, vocab);
    EXPECT_DOUBLE_EQ(s.m(0, 0), 0.5 * 1 - 0.25 * 4);
    EXPECT_DOUBLE_EQ(s.m(0, 1), 0.5 * 2);
    EXPECT_DOUBLE_EQ(s.m(1, 0), -0.5 * 1 + 0.25 * 4);
    EXPECT_DOUBLE_EQ(s.m(1, 1), -0.5 * 2);
}

// Naive triple loop over (z, j, k) as the independent oracle.
Matrix naive_sketch(const SampleRecord& rec, const RestrictedVocab& vocab) {
    Matrix m(vocab.size(), rec.dim());
    for (std::size_t z = 0; z < vocab.size(); ++z) {
        const std::size_t col = *rec.vocab->index_of(vocab[z]);
        for (std::size_t j = 0; j < rec.dim(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < rec.length(); ++k) {
                const double e = (rec.targets[k] == vocab[z] ? 1.0 : 0.0) - rec.probs(k, col);
                acc += e * rec.hidden(k, j);
            }
            m(z, j) = acc;
        }
    }
    return m;
}

TEST(BuildSketch, MatchesNaiveOracle) {
    auto vocab = make_vocab(RestrictedVocab::full(30));
    auto recs = synthetic::random_records(20, 1, 12, 9, vocab, 42, "r");
    auto sub = vocab_of({0, 4, 5, 17, 29});
    for (const auto& rec : recs) {
        for (const VocabPtr& v : {vocab, sub}) {
            const auto s = build_sketch(rec, v);
            const auto oracle = naive_sketch(rec, *v);
            for (std::size_t x = 0; x < oracle.values().size(); ++x)
                EXPECT_NEAR(s.m.values()[x], oracle.values()[x], 1e-6 * std::max(1.0, std::abs(oracle.values()[x])));
        }
    }
}

TEST(BuildSketch, LinearInHiddenStates) {
    auto vocab = make_vocab(RestrictedVocab::full(12));
    auto rec = synthetic::random_records(1, 6, 6, 5, vocab, 7, "r")[0];
    const auto base = build_sketch(rec, vocab);
    const double c = 2.5;
    auto scaled = rec;
    for (double& x : scaled.hidden.values()) x *= c;
    auto other = synthetic::random_records(1, 6, 6, 5, vocab, 8, "o")[0];
    other.targets = rec.targets;
    other.probs = rec.probs;
    auto sum = rec;
    for (std::size_t x = 0; x < sum.hidden.values().size(); ++x) sum.hidden.values()[x] += other.hidden.values()[x];
    const auto s_scaled = build_sketch(scaled, vocab);
    const auto s_other = build_sketch(other, vocab);
    const auto s_sum = build_sketch(sum, vocab);
    for (std::size_t x = 0; x < base.m.values().size(); ++x) {
        EXPECT_NEAR(s_scaled.m.values()[x], c * base.m.values()[x], 1e-9);
        EXPECT_NEAR(s_sum.m.values()[x], base.m.values()[x] + s_other.m.values()[x], 1e-9);
    }
}

TEST(BuildSketch, ColumnSumsEqualResidualWeightedHidden) {
    // Summing over the vocabulary, each error row totals 1 - sum(pi) = residual mass
    // (target inside the vocabulary), so column sums equal sum_k residual_k h_k.
    auto vocab = make_vocab(RestrictedVocab::full(15));
    for (const auto& rec : synthetic::random_records(10, 1, 9, 4, vocab, 3, "r")) {
        const auto s = build_sketch(rec, vocab);
        for (std::size_t j = 0; j < rec.dim(); ++j) {
            double col = 0.0, expect = 0.0;
            for (std::size_t z = 0; z < vocab->size(); ++z) col += s.m(z, j);
            for (std::size_t k = 0; k < rec.length(); ++k) expect += rec.residual_mass[k] * rec.hidden(k, j);
            EXPECT_NEAR(col, expect, 1e-9);
        }
    }
}

TEST(BuildSketch, InvariantToPositionPermutation) {
    auto vocab = make_vocab(RestrictedVocab::full(10));
    std::mt19937 rng(5);
    for (const auto& rec : synthetic::random_records(10, 2, 8, 6, vocab, 11, "r")) {
        std::vector<std::size_t> perm(rec.length());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        auto shuffled = rec;
        for (std::size_t k = 0; k < perm.size(); ++k) {
            shuffled.targets[k] = rec.targets[perm[k]];
            shuffled.residual_mass[k] = rec.residual_mass[perm[k]];
            std::copy(rec.hidden.row(perm[k]).begin(), rec.hidden.row(perm[k]).end(), shuffled.hidden.row(k).begin());
            std::copy(rec.probs.row(perm[k]).begin(), rec.probs.row(perm[k]).end(), shuffled.probs.row(k).begin());
        }
        const auto a = build_sketch(rec, vocab), b = build_sketch(shuffled, vocab);
        for (std::size_t x = 0; x < a.m.values().size(); ++x) EXPECT_NEAR(a.m.values()[x], b.m.values()[x], 1e-12);
    }
}

TEST(BuildSketch, RowsDependOnlyOnTheirToken) {
    auto vocab = make_vocab(RestrictedVocab::full(20));
    auto sub = vocab_of({2, 3, 11});
    for (const auto& rec : synthetic::random_records(5, 1, 7, 3, vocab, 13, "r")) {
        const auto full = build_sketch(rec, vocab);
        const auto part = build_sketch(rec, sub);
        for (std::size_t z = 0; z < sub->size(); ++z) {
            const std::size_t fz = *vocab->index_of((*sub)[z]);
            for (std::size_t j = 0; j < rec.dim(); ++j) EXPECT_EQ(part.m(z, j), full.m(fz, j));
        }
    }
}

TEST(BuildSketch, NonFiniteHiddenIsRejected) {
    auto vocab = vocab_of({0, 1});
    auto rec = make_record("r", vocab, {0}, {{std::numeric_limits<double>::infinity()}}, {{0.5, 0.5}});
    EXPECT_THROW(build_sketch(rec, vocab), data_error);
}

} // namespace
} // namespace forvalue
