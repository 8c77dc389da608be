#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forvalue/error.hpp"
#include "forvalue/record.hpp"

namespace forvalue {

/// A metric is undefined for the given labels (e.g. AUC with one class present).
class undefined_metric : public data_error {
public:
    using data_error::data_error;
};

enum class LabelMode { influence, mislabel };

inline const char* to_string(LabelMode m) noexcept {
    return m == LabelMode::influence ? "influence" : "mislabel";
}

/// 1 where the training sample counts as relevant to the valuation point:
/// same class (influence), or same class and clean (mislabel).
inline std::vector<std::uint8_t> pseudo_labels(std::span<const std::string> train_labels,
                                               const std::string& valuation_label, LabelMode mode,
                                               std::optional<std::span<const std::uint8_t>> clean_flags = std::nullopt) {
    if (mode == LabelMode::mislabel) {
        if (!clean_flags) throw data_error("mislabel mode requires clean flags");
        if (clean_flags->size() != train_labels.size())
            throw data_error("length mismatch: " + std::to_string(train_labels.size()) + " labels, " +
                             std::to_string(clean_flags->size()) + " clean flags");
    }
    std::vector<std::uint8_t> out(train_labels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        bool positive = train_labels[i] == valuation_label;
        if (mode == LabelMode::mislabel) positive = positive && (*clean_flags)[i] != 0;
        out[i] = positive ? 1 : 0;
    }
    return out;
}

/// Mann-Whitney AUC, P(score_pos > score_neg) + P(equal)/2, via midranks.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw data_error("length mismatch between scores and labels");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the midrank keeps everything integral.
    double pos_rank_sum2 = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi < n && scores[order[hi]] == scores[order[lo]]) ++hi;
        const double rank2 = static_cast<double>(lo + 1 + hi); // 2 * mean of ranks lo+1..hi
        for (std::size_t j = lo; j < hi; ++j) {
            if (labels[order[j]]) {
                pos_rank_sum2 += rank2;
                ++n_pos;
            }
        }
        lo = hi;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw undefined_metric("undefined AUC: labels contain a single class");
    const double p = static_cast<double>(n_pos);
    const double u = pos_rank_sum2 / 2.0 - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(n_neg));
}

/// Fraction of positives among the top-p scores, p = number of positives.
/// Ties are ordered by ascending index.
inline double recall_at_class(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw data_error("length mismatch between scores and labels");
    const std::size_t p = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                                 [](std::uint8_t l) { return l != 0; }));
    if (p == 0) throw undefined_metric("undefined recall: no positive labels");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t hits = 0;
    for (std::size_t r = 0; r < p; ++r) hits += labels[order[r]] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(p);
}

/// Class label and optional clean flag per sample id.
struct LabelTable {
    std::map<std::string, std::string> class_of;
    std::map<std::string, bool> clean_of;
};

/// Parses lines of `id class [clean]`, separated by commas and/or whitespace.
/// Blank lines and lines starting with '#' are ignored.
inline LabelTable read_labels(std::istream& in) {
    LabelTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        std::vector<std::string> cols;
        for (std::string f; fields >> f;) cols.push_back(f);
        if (cols.empty() || cols[0][0] == '#') continue;
        if (cols.size() < 2 || cols.size() > 3)
            throw data_error("labels: expected 2 or 3 columns on line " + std::to_string(line_no));
        if (!t.class_of.emplace(cols[0], cols[1]).second)
            throw data_error("labels: duplicate id " + cols[0]);
        if (cols.size() == 3) {
            if (cols[2] != "0" && cols[2] != "1")
                throw data_error("labels: clean flag must be 0 or 1 on line " + std::to_string(line_no));
            t.clean_of[cols[0]] = cols[2] == "1";
        }
    }
    return t;
}

struct ValuationMetrics {
    std::string valuation_id;
    double auc = 0.0;
    double recall = 0.0;
};

struct EvalReport {
    LabelMode mode = LabelMode::influence;
    std::vector<ValuationMetrics> per_valuation;
    std::vector<std::string> skipped; // valuation ids with undefined metrics
    double mean_auc = 0.0;
    double mean_recall = 0.0;
    double std_auc = 0.0;    // population std across valuation points
    double std_recall = 0.0;
    std::size_t n_valuation = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

} // namespace detail

/// Per-valuation AUC and recall, averaged over valuation points whose metrics
/// are defined. Points with no positive (or no negative) training sample are
/// listed in `skipped`.
inline EvalReport evaluate(const ScoreTable& table, const LabelTable& labels, LabelMode mode) {
    std::vector<std::string> train_labels;
    std::vector<std::uint8_t> clean;
    for (const auto& id : table.training_ids) {
        auto it = labels.class_of.find(id);
        if (it == labels.class_of.end()) throw lookup_error("missing label for training id " + id);
        train_labels.push_back(it->second);
        if (mode == LabelMode::mislabel) {
            auto c = labels.clean_of.find(id);
            if (c == labels.clean_of.end()) throw lookup_error("missing clean flag for training id " + id);
            clean.push_back(c->second ? 1 : 0);
        }
    }
    std::optional<std::span<const std::uint8_t>> clean_span;
    if (mode == LabelMode::mislabel) clean_span = std::span<const std::uint8_t>(clean);

    EvalReport report;
    report.mode = mode;
    std::vector<double> aucs, recalls;
    for (std::size_t a = 0; a < table.valuation_ids.size(); ++a) {
        const auto& vid = table.valuation_ids[a];
        auto it = labels.class_of.find(vid);
        if (it == labels.class_of.end()) throw lookup_error("missing label for valuation id " + vid);
        const auto pl = pseudo_labels(train_labels, it->second, mode, clean_span);
        try {
            ValuationMetrics m{vid, auc(table.scores.row(a), pl), recall_at_class(table.scores.row(a), pl)};
            aucs.push_back(m.auc);
            recalls.push_back(m.recall);
            report.per_valuation.push_back(std::move(m));
        } catch (const undefined_metric&) {
            report.skipped.push_back(vid);
        }
    }
    if (report.per_valuation.empty()) throw undefined_metric("metrics undefined for every valuation point");
    report.n_valuation = report.per_valuation.size();
    std::tie(report.mean_auc, report.std_auc) = detail::mean_std(aucs);
    std::tie(report.mean_recall, report.std_recall) = detail::mean_std(recalls);
    return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["mode"] = to_string(r.mode);
    auto rows = nlohmann::json::array();
    for (const auto& m : r.per_valuation)
        rows.push_back({{"valuation_id", m.valuation_id}, {"auc", m.auc}, {"recall", m.recall}});
    j["per_valuation"] = std::move(rows);
    j["mean_auc"] = r.mean_auc;
    j["mean_recall"] = r.mean_recall;
    j["std_auc"] = r.std_auc;
    j["std_recall"] = r.std_recall;
    j["std_over"] = "valuation points";
    j["n_valuation"] = r.n_valuation;
    j["skipped"] = r.skipped;
    return j;
}

} // namespace forvalue
