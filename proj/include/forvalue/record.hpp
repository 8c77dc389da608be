#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forvalue/error.hpp"
#include "forvalue/matrix.hpp"

namespace forvalue {

/// Index into the model's global vocabulary.
struct TokenId {
    std::uint32_t value = 0;

    constexpr TokenId() = default;
    constexpr explicit TokenId(std::uint32_t v) : value(v) {}

    friend constexpr auto operator<=>(TokenId, TokenId) = default;
};

/// Tolerance on |sum(probabilities) + residual_mass - 1|.
inline constexpr double kProbabilitySumTolerance = 1e-4;

/// Ascending list of distinct token ids with a dense local index per token.
class RestrictedVocab {
public:
    RestrictedVocab() = default;

    /// Sorts and deduplicates.
    static RestrictedVocab from_tokens(std::vector<TokenId> tokens) {
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        RestrictedVocab v;
        v.tokens_ = std::move(tokens);
        return v;
    }

    /// Requires strictly ascending input; throws data_error otherwise.
    static RestrictedVocab from_sorted(std::vector<TokenId> tokens) {
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            if (!(tokens[i - 1] < tokens[i]))
                throw data_error("restricted vocabulary must be strictly ascending (position " +
                                 std::to_string(i) + ")");
        }
        RestrictedVocab v;
        v.tokens_ = std::move(tokens);
        return v;
    }

    /// Tokens 0..n-1, i.e. the full vocabulary of an n-token model.
    static RestrictedVocab full(std::size_t n) {
        std::vector<TokenId> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = TokenId(static_cast<std::uint32_t>(i));
        RestrictedVocab v;
        v.tokens_ = std::move(t);
        return v;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    bool empty() const noexcept { return tokens_.empty(); }
    TokenId operator[](std::size_t local) const noexcept { return tokens_[local]; }
    std::span<const TokenId> tokens() const noexcept { return tokens_; }
    auto begin() const noexcept { return tokens_.begin(); }
    auto end() const noexcept { return tokens_.end(); }

    std::optional<std::size_t> index_of(TokenId t) const noexcept {
        auto it = std::lower_bound(tokens_.begin(), tokens_.end(), t);
        if (it == tokens_.end() || *it != t) return std::nullopt;
        return static_cast<std::size_t>(it - tokens_.begin());
    }

    bool contains(TokenId t) const noexcept { return index_of(t).has_value(); }

    bool is_subset_of(const RestrictedVocab& other) const noexcept {
        return std::includes(other.tokens_.begin(), other.tokens_.end(), tokens_.begin(),
                             tokens_.end());
    }

    bool operator==(const RestrictedVocab&) const = default;

private:
    std::vector<TokenId> tokens_;
};

using VocabPtr = std::shared_ptr<const RestrictedVocab>;

inline VocabPtr make_vocab(RestrictedVocab v) {
    return std::make_shared<const RestrictedVocab>(std::move(v));
}

enum class Role { training, valuation };

inline const char* to_string(Role r) noexcept {
    return r == Role::training ? "training" : "valuation";
}

/// Next-token distribution at one target position, restricted to the dataset
/// vocabulary. A non-owning view into a SampleRecord.
struct ProbRow {
    std::span<const double> entries; // dense over the dataset vocabulary
    std::size_t target_local = 0;    // local index of the target token
    double residual_mass = 0.0;      // mass outside the dataset vocabulary

    double target_prob() const noexcept { return entries[target_local]; }
};

/// One (input, target sequence) pair as seen through a single forward pass.
///
/// Row k of `hidden` is the state that predicts targets[k]. `probs` row k is
/// the model's next-token distribution at that state, dense over `vocab`
/// (the dataset vocabulary). Records are immutable once built.
struct SampleRecord {
    std::string id;
    Role role = Role::training;
    std::optional<std::string> class_label;
    std::optional<bool> clean;
    std::vector<TokenId> targets;
    Matrix hidden;
    Matrix probs;
    std::vector<double> residual_mass;
    VocabPtr vocab;

    std::size_t length() const noexcept { return targets.size(); }
    std::size_t dim() const noexcept { return hidden.cols(); }

    /// Local index of targets[k] in `vocab`; throws data_error when absent.
    std::size_t target_local(std::size_t k) const {
        auto idx = vocab ? vocab->index_of(targets[k]) : std::nullopt;
        if (!idx)
            throw data_error("record " + id + ": target token " +
                             std::to_string(targets[k].value) + " not in vocabulary");
        return *idx;
    }

    ProbRow prob_row(std::size_t k) const {
        return ProbRow{probs.row(k), target_local(k), residual_mass[k]};
    }

    bool operator==(const SampleRecord& o) const {
        return id == o.id && role == o.role && class_label == o.class_label && clean == o.clean &&
               targets == o.targets && hidden == o.hidden && probs == o.probs &&
               residual_mass == o.residual_mass &&
               (vocab == o.vocab || (vocab && o.vocab && *vocab == *o.vocab));
    }
};

/// Prediction-error sketch sum_k (e_{y_k} - pi_k) h_k^T with one row per
/// vocabulary token.
struct Sketch {
    VocabPtr vocab;
    Matrix m;

    std::size_t dim() const noexcept { return m.cols(); }
};

/// Scores S[v][i] for every (valuation, training) pair.
struct ScoreTable {
    std::vector<std::string> valuation_ids;
    std::vector<std::string> training_ids;
    Matrix scores; // valuation x training

    std::size_t valuation_index(const std::string& id) const {
        auto it = std::find(valuation_ids.begin(), valuation_ids.end(), id);
        if (it == valuation_ids.end()) throw lookup_error("unknown valuation id: " + id);
        return static_cast<std::size_t>(it - valuation_ids.begin());
    }
};

enum class ViolationKind {
    dimension_mismatch,
    probability_sum_drift,
    probability_out_of_range,
    out_of_vocab_target,
    non_finite_entry,
    empty_record,
};

struct Violation {
    ViolationKind kind;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
    bool has(ViolationKind k) const noexcept {
        return std::any_of(violations.begin(), violations.end(),
                           [k](const Violation& v) { return v.kind == k; });
    }
};

/// Checks every record invariant against the dataset vocabulary. Never throws;
/// an empty report means the record is valid.
inline ValidationReport validate_record(const SampleRecord& rec, const RestrictedVocab& vocab) {
    ValidationReport report;
    auto add = [&](ViolationKind k, std::string msg) {
        report.violations.push_back({k, std::move(msg)});
    };

    const std::size_t T = rec.targets.size();
    if (T == 0) add(ViolationKind::empty_record, "empty record (no target positions)");
    if (rec.hidden.rows() != T)
        add(ViolationKind::dimension_mismatch,
            "dimension mismatch: hidden has " + std::to_string(rec.hidden.rows()) +
                " rows, expected " + std::to_string(T));
    if (rec.probs.rows() != T)
        add(ViolationKind::dimension_mismatch,
            "dimension mismatch: probs has " + std::to_string(rec.probs.rows()) +
                " rows, expected " + std::to_string(T));
    if (rec.probs.cols() != vocab.size())
        add(ViolationKind::dimension_mismatch,
            "dimension mismatch: probs has " + std::to_string(rec.probs.cols()) +
                " columns, vocabulary has " + std::to_string(vocab.size()));
    if (rec.residual_mass.size() != T)
        add(ViolationKind::dimension_mismatch,
            "dimension mismatch: " + std::to_string(rec.residual_mass.size()) +
                " residual masses, expected " + std::to_string(T));
    if (rec.vocab && *rec.vocab != vocab)
        add(ViolationKind::dimension_mismatch, "dimension mismatch: record vocabulary differs");

    for (std::size_t k = 0; k < T; ++k) {
        if (!vocab.contains(rec.targets[k]))
            add(ViolationKind::out_of_vocab_target,
                "out-of-vocab target: token " + std::to_string(rec.targets[k].value) +
                    " at position " + std::to_string(k));
    }

    for (double x : rec.hidden.values()) {
        if (!std::isfinite(x)) {
            add(ViolationKind::non_finite_entry, "non-finite entry in hidden states");
            break;
        }
    }

    const bool rows_ok = rec.probs.rows() == T && rec.residual_mass.size() == T;
    if (rows_ok) {
        for (std::size_t k = 0; k < T; ++k) {
            double sum = 0.0;
            bool finite = true, in_range = true;
            for (double p : rec.probs.row(k)) {
                if (!std::isfinite(p)) finite = false;
                else if (p < 0.0 || p > 1.0) in_range = false;
                sum += p;
            }
            const double r = rec.residual_mass[k];
            if (!std::isfinite(r)) finite = false;
            else if (r < 0.0 || r > 1.0) in_range = false;
            if (!finite) {
                add(ViolationKind::non_finite_entry,
                    "non-finite entry in probabilities, row " + std::to_string(k));
                continue;
            }
            if (!in_range)
                add(ViolationKind::probability_out_of_range,
                    "probability out of [0,1], row " + std::to_string(k));
            if (std::abs(sum + r - 1.0) > kProbabilitySumTolerance)
                add(ViolationKind::probability_sum_drift,
                    "probability-sum drift, row " + std::to_string(k));
        }
    }
    return report;
}

} // namespace forvalue
