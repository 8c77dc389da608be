#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "forvalue/error.hpp"
#include "forvalue/matrix.hpp"
#include "forvalue/record.hpp"

namespace forvalue {

/// Prediction error e_{y_k} - pi(.|x, y_<k) restricted to a vocabulary.
struct ErrorRow {
    VocabPtr vocab;
    std::vector<double> values;
};

/// Distinct target tokens of a record, ascending.
inline std::vector<TokenId> target_set(const SampleRecord& rec) {
    std::vector<TokenId> t(rec.targets.begin(), rec.targets.end());
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

/// Union of the target tokens of a batch and of the valuation sample.
inline RestrictedVocab batch_vocab(std::span<const SampleRecord> batch, const SampleRecord& valuation) {
    std::vector<TokenId> tokens(valuation.targets.begin(), valuation.targets.end());
    for (const auto& rec : batch) tokens.insert(tokens.end(), rec.targets.begin(), rec.targets.end());
    return RestrictedVocab::from_tokens(std::move(tokens));
}

/// For each token of `vocab`, the column holding its probability in rec.probs.
inline std::vector<std::size_t> probability_columns(const SampleRecord& rec, const RestrictedVocab& vocab) {
    if (!rec.vocab) throw data_error("record " + rec.id + " has no vocabulary");
    std::vector<std::size_t> cols(vocab.size());
    if (&vocab == rec.vocab.get() || vocab == *rec.vocab) {
        for (std::size_t z = 0; z < cols.size(); ++z) cols[z] = z;
        return cols;
    }
    for (std::size_t z = 0; z < vocab.size(); ++z) {
        auto c = rec.vocab->index_of(vocab[z]);
        if (!c)
            throw data_error("record " + rec.id + ": token " + std::to_string(vocab[z].value) +
                             " has no stored probability");
        cols[z] = *c;
    }
    return cols;
}

namespace detail {

inline void fill_error_row(const SampleRecord& rec, std::size_t k, const RestrictedVocab& vocab,
                           std::span<const std::size_t> cols, std::span<double> out) {
    const auto probs = rec.probs.row(k);
    for (std::size_t z = 0; z < out.size(); ++z) out[z] = -probs[cols[z]];
    if (auto t = vocab.index_of(rec.targets[k])) out[*t] += 1.0;
}

} // namespace detail

/// Error row at position k over `vocab`. Tokens of `vocab` missing from the
/// record's stored distribution signal corrupted input (data_error).
inline ErrorRow error_row(const SampleRecord& rec, std::size_t k, const VocabPtr& vocab) {
    if (k >= rec.length()) throw data_error("position out of range in record " + rec.id);
    const auto cols = probability_columns(rec, *vocab);
    ErrorRow row{vocab, std::vector<double>(vocab->size())};
    detail::fill_error_row(rec, k, *vocab, cols, row.values);
    return row;
}

/// All T error rows of a record as a T x |vocab| matrix.
inline Matrix error_matrix(const SampleRecord& rec, const RestrictedVocab& vocab) {
    const auto cols = probability_columns(rec, vocab);
    Matrix e(rec.length(), vocab.size());
    for (std::size_t k = 0; k < rec.length(); ++k) detail::fill_error_row(rec, k, vocab, cols, e.row(k));
    return e;
}

/// m = sum_k error_row(k) (x) hidden[k], positions accumulated in ascending order.
inline Sketch build_sketch(const SampleRecord& rec, const VocabPtr& vocab) {
    const std::size_t d = rec.dim();
    const Matrix err = error_matrix(rec, *vocab);
    Sketch s{vocab, Matrix(vocab->size(), d)};
    for (std::size_t k = 0; k < rec.length(); ++k) {
        const auto h = rec.hidden.row(k);
        const auto e = err.row(k);
        for (std::size_t z = 0; z < e.size(); ++z) {
            if (e[z] != 0.0) axpy(e[z], h, s.m.row(z));
        }
    }
    for (double x : s.m.values())
        if (!std::isfinite(x)) throw data_error("non-finite sketch for record " + rec.id);
    return s;
}

} // namespace forvalue
