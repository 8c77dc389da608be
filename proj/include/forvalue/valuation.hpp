#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "forvalue/error.hpp"
#include "forvalue/format.hpp"
#include "forvalue/ingest.hpp"
#include "forvalue/matrix.hpp"
#include "forvalue/parallel.hpp"
#include "forvalue/record.hpp"
#include "forvalue/sketch.hpp"

namespace forvalue {

namespace detail {

inline void require_same_dim(const SampleRecord& v, const SampleRecord& i) {
    if (v.dim() != i.dim())
        throw data_error("dimension mismatch: " + v.id + " has d=" + std::to_string(v.dim()) + ", " +
                         i.id + " has d=" + std::to_string(i.dim()));
}

/// sum_j a[idx[j]] * b[idx[j]] with the same accumulator pattern as dot().
inline double gather_dot(std::span<const double> a, std::span<const double> b,
                         std::span<const std::size_t> idx) noexcept {
    const std::size_t n = idx.size();
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[idx[j]] * b[idx[j]];
        s1 += a[idx[j + 1]] * b[idx[j + 1]];
        s2 += a[idx[j + 2]] * b[idx[j + 2]];
        s3 += a[idx[j + 3]] * b[idx[j + 3]];
    }
    for (; j < n; ++j) s0 += a[idx[j]] * b[idx[j]];
    return (s0 + s1) + (s2 + s3);
}

/// Double sum over positions given both records' error rows as matrices
/// whose columns are selected by `cols`.
inline double pairwise_sum(const Matrix& ev, const Matrix& hv, const Matrix& ei, const Matrix& hi,
                           std::span<const std::size_t> cols) {
    double total = 0.0;
    for (std::size_t k = 0; k < ev.rows(); ++k) {
        for (std::size_t kk = 0; kk < ei.rows(); ++kk) {
            const double alpha = gather_dot(ev.row(k), ei.row(kk), cols);
            total += alpha * dot(hv.row(k), hi.row(kk));
        }
    }
    return total;
}

/// sum over (row_v, row_i) pairs of <mv[row_v], mi[row_i]>, in the given order.
inline double sketch_rows_dot(const Matrix& mv, const Matrix& mi,
                              std::span<const std::pair<std::size_t, std::size_t>> rows) noexcept {
    double total = 0.0;
    for (auto [rv, ri] : rows) total += dot(mv.row(rv), mi.row(ri));
    return total;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

} // namespace detail

/// For-Value score as the explicit double sum over position pairs:
/// sum_{k,k'} <err_v(k), err_i(k')> * <h_v(k), h_i(k')>, errors restricted to `vocab`.
inline double score_pairwise(const SampleRecord& v, const SampleRecord& i, const RestrictedVocab& vocab) {
    detail::require_same_dim(v, i);
    const Matrix ev = error_matrix(v, vocab);
    const Matrix ei = error_matrix(i, vocab);
    const auto cols = detail::iota_indices(vocab.size());
    return detail::pairwise_sum(ev, v.hidden, ei, i.hidden, cols);
}

/// Frobenius inner product of two sketches over the same vocabulary.
inline double score_sketch(const Sketch& mv, const Sketch& mi) {
    if (!mv.vocab || !mi.vocab || (mv.vocab != mi.vocab && *mv.vocab != *mi.vocab))
        throw data_error("vocabulary mismatch between sketches");
    if (mv.dim() != mi.dim()) throw data_error("dimension mismatch between sketches");
    double total = 0.0;
    for (std::size_t z = 0; z < mv.m.rows(); ++z) total += dot(mv.m.row(z), mi.m.row(z));
    return total;
}

/// Probability mass each position of `rec` places outside `vocab`.
inline std::vector<double> mass_outside(const SampleRecord& rec, const RestrictedVocab& vocab) {
    std::vector<double> out(rec.length());
    std::vector<bool> inside(rec.vocab->size(), false);
    for (TokenId t : vocab)
        if (auto c = rec.vocab->index_of(t)) inside[*c] = true;
    for (std::size_t k = 0; k < rec.length(); ++k) {
        double r = rec.residual_mass[k];
        const auto p = rec.probs.row(k);
        for (std::size_t c = 0; c < p.size(); ++c)
            if (!inside[c]) r += p[c];
        out[k] = r;
    }
    return out;
}

/// Upper bound on |score over vocab - score over the full vocabulary|,
/// sum_{k,k'} |<h_v(k), h_i(k')>| * r_v(k) * r_i(k') with r the mass outside
/// `vocab`. Requires `vocab` to hold every target of both records.
inline double restriction_bound(const SampleRecord& v, const SampleRecord& i, const RestrictedVocab& vocab) {
    detail::require_same_dim(v, i);
    const auto rv = mass_outside(v, vocab);
    const auto ri = mass_outside(i, vocab);
    double total = 0.0;
    for (std::size_t k = 0; k < v.length(); ++k)
        for (std::size_t kk = 0; kk < i.length(); ++kk)
            total += std::abs(dot(v.hidden.row(k), i.hidden.row(kk))) * rv[k] * ri[kk];
    return total;
}

enum class VocabMode { batch_union, dataset, full_if_available };
enum class ScorePath { automatic, pairwise, sketch };

inline const char* to_string(VocabMode m) noexcept {
    switch (m) {
    case VocabMode::batch_union: return "batch_union";
    case VocabMode::dataset: return "dataset";
    case VocabMode::full_if_available: return "full_if_available";
    }
    return "?";
}

inline const char* to_string(ScorePath p) noexcept {
    switch (p) {
    case ScorePath::automatic: return "auto";
    case ScorePath::pairwise: return "pairwise";
    case ScorePath::sketch: return "sketch";
    }
    return "?";
}

struct ValuationOptions {
    std::size_t batch_size = 64;
    VocabMode vocab_mode = VocabMode::batch_union;
    ScorePath path = ScorePath::automatic;
    std::size_t threads = 1;
    /// Divide each score by |y_v| * |y_i|. Off by default; raw scores are the method.
    bool length_normalize = false;
    /// Size of the model vocabulary, when known (enables full_if_available).
    std::optional<std::uint64_t> global_vocab_size;
};

struct ValuationResult {
    ScoreTable table;
    VocabMode vocab_mode = VocabMode::batch_union; // mode actually used
    ScorePath path = ScorePath::sketch;            // path actually used
    std::size_t batches = 0;
};

/// Yields training records in batches. Implementations: span and dump reader.
class TrainingSource {
public:
    virtual ~TrainingSource() = default;
    virtual std::size_t size() const = 0;
    virtual const VocabPtr& vocab() const = 0;
    virtual std::vector<SampleRecord> next_batch(std::size_t max) = 0;
};

class SpanSource final : public TrainingSource {
public:
    explicit SpanSource(std::span<const SampleRecord> records) : records_(records) {
        if (!records_.empty()) vocab_ = records_.front().vocab;
    }
    std::size_t size() const override { return records_.size(); }
    const VocabPtr& vocab() const override { return vocab_; }
    std::vector<SampleRecord> next_batch(std::size_t max) override {
        const std::size_t n = std::min(max, records_.size() - pos_);
        std::vector<SampleRecord> out(records_.begin() + pos_, records_.begin() + pos_ + n);
        pos_ += n;
        return out;
    }

private:
    std::span<const SampleRecord> records_;
    VocabPtr vocab_;
    std::size_t pos_ = 0;
};

/// Streams records of one role from a dump; only one batch is resident at a time.
class DumpSource final : public TrainingSource {
public:
    DumpSource(DumpReader& reader, Role role) : reader_(reader) {
        for (std::size_t i = 0; i < reader.size(); ++i)
            if (reader.manifest().samples[i].role == role) indices_.push_back(i);
    }
    std::size_t size() const override { return indices_.size(); }
    const VocabPtr& vocab() const override { return reader_.vocab(); }
    std::vector<SampleRecord> next_batch(std::size_t max) override {
        std::vector<SampleRecord> out;
        while (out.size() < max && pos_ < indices_.size()) out.push_back(reader_.load(indices_[pos_++]));
        return out;
    }

private:
    DumpReader& reader_;
    std::vector<std::size_t> indices_;
    std::size_t pos_ = 0;
};

namespace detail {

/// Distinct target tokens of `rec` as column indices of the dataset vocabulary, ascending.
inline std::vector<std::size_t> target_columns(const SampleRecord& rec) {
    std::vector<std::size_t> cols;
    cols.reserve(rec.length());
    for (std::size_t k = 0; k < rec.length(); ++k) cols.push_back(rec.target_local(k));
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    return cols;
}

inline std::vector<std::size_t> union_sorted(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline bool covers_full_vocabulary(const RestrictedVocab& vocab, std::optional<std::uint64_t> global) {
    return global && vocab.size() == *global &&
           (vocab.empty() || vocab.tokens().back().value + 1 == *global);
}

} // namespace detail

/// Scores every valuation record against every training record.
///
/// Training records are consumed in batches of `batch_size`. For each batch
/// the working vocabulary is the union of the batch's target tokens and the
/// valuation targets; sketches are materialized over it. Under batch_union a
/// pair (v, i) is scored over the tokens of y_v and y_i, so scores do not
/// depend on batch composition. Under dataset every pair uses the full
/// dataset vocabulary.
///
/// Each score is computed by one worker with a fixed reduction order, so the
/// table is bit-identical for any thread count.
inline ValuationResult run_valuation(TrainingSource& train, std::span<const SampleRecord> valuation,
                                     const ValuationOptions& opts) {
    if (opts.batch_size == 0) throw data_error("batch size must be positive");
    if (train.size() == 0) throw lookup_error("empty training set");
    const VocabPtr dataset_vocab = train.vocab();
    if (!dataset_vocab) throw data_error("training records carry no vocabulary");
    for (const auto& v : valuation) {
        if (!v.vocab || *v.vocab != *dataset_vocab)
            throw data_error("incompatible dumps: valuation record " + v.id +
                             " uses a different restricted vocabulary");
    }

    ValuationResult result;
    result.vocab_mode = opts.vocab_mode;
    if (opts.vocab_mode == VocabMode::full_if_available)
        result.vocab_mode = detail::covers_full_vocabulary(*dataset_vocab, opts.global_vocab_size)
                                ? VocabMode::full_if_available
                                : VocabMode::dataset;
    const bool per_pair_vocab = result.vocab_mode == VocabMode::batch_union;

    const std::size_t n_v = valuation.size();
    const std::size_t n_i = train.size();
    const std::size_t P = dataset_vocab->size();
    const std::size_t d = valuation.empty() ? 0 : valuation.front().dim();

    double mean_tv = 0.0;
    for (const auto& v : valuation) mean_tv += static_cast<double>(v.length());
    mean_tv = n_v ? mean_tv / static_cast<double>(n_v) : 0.0;

    ScoreTable& table = result.table;
    for (const auto& v : valuation) table.valuation_ids.push_back(v.id);
    table.scores = Matrix(n_v, n_i);

    std::vector<std::vector<std::size_t>> v_cols(n_v);
    for (std::size_t a = 0; a < n_v; ++a) v_cols[a] = detail::target_columns(valuation[a]);
    std::vector<std::size_t> all_v_cols;
    for (const auto& c : v_cols) all_v_cols = detail::union_sorted(all_v_cols, c);

    const auto full_cols = detail::iota_indices(P);

    // Per-record state reused across batches.
    std::vector<Sketch> v_sketch;
    std::vector<Matrix> v_err;

    std::size_t offset = 0;
    bool decided = false;
    bool use_sketch = opts.path == ScorePath::sketch;
    for (;;) {
        std::vector<SampleRecord> batch = train.next_batch(opts.batch_size);
        if (batch.empty()) break;
        ++result.batches;
        for (const auto& rec : batch) {
            if (!rec.vocab || *rec.vocab != *dataset_vocab)
                throw data_error("incompatible record " + rec.id + ": different restricted vocabulary");
            if (d != 0 && rec.dim() != d)
                throw data_error("dimension mismatch: training record " + rec.id + " has d=" +
                                 std::to_string(rec.dim()) + ", valuation records have d=" +
                                 std::to_string(d));
        }

        if (!decided) {
            if (opts.path == ScorePath::automatic) {
                // Per-pair cost of each path with sketch construction amortized over reuse.
                double mean_ti = 0.0;
                for (const auto& r : batch) mean_ti += static_cast<double>(r.length());
                mean_ti /= static_cast<double>(batch.size());
                const double vocab_cols = static_cast<double>(P);
                const double dd = static_cast<double>(std::max<std::size_t>(d, 1));
                const double pairwise_cost = mean_tv * mean_ti * (vocab_cols + dd);
                const double sketch_cost = vocab_cols * dd +
                                           mean_ti * vocab_cols * dd / std::max<double>(1.0, double(n_v)) +
                                           mean_tv * vocab_cols * dd / static_cast<double>(n_i);
                use_sketch = sketch_cost < pairwise_cost;
            }
            result.path = use_sketch ? ScorePath::sketch : ScorePath::pairwise;
            if (use_sketch) {
                v_sketch.resize(n_v);
                parallel_for(n_v, opts.threads,
                             [&](std::size_t a) { v_sketch[a] = build_sketch(valuation[a], dataset_vocab); });
            } else {
                v_err.resize(n_v);
                parallel_for(n_v, opts.threads,
                             [&](std::size_t a) { v_err[a] = error_matrix(valuation[a], *dataset_vocab); });
            }
            decided = true;
        }

        // Working vocabulary of this batch as dataset columns.
        std::vector<std::size_t> carrier_cols;
        if (per_pair_vocab) {
            carrier_cols = all_v_cols;
            for (const auto& rec : batch) carrier_cols = detail::union_sorted(carrier_cols, detail::target_columns(rec));
        } else {
            carrier_cols = full_cols;
        }
        std::vector<std::size_t> carrier_row(P, static_cast<std::size_t>(-1));
        std::vector<TokenId> carrier_tokens;
        carrier_tokens.reserve(carrier_cols.size());
        for (std::size_t r = 0; r < carrier_cols.size(); ++r) {
            carrier_row[carrier_cols[r]] = r;
            carrier_tokens.push_back((*dataset_vocab)[carrier_cols[r]]);
        }
        const VocabPtr carrier = per_pair_vocab
                                     ? make_vocab(RestrictedVocab::from_sorted(std::move(carrier_tokens)))
                                     : dataset_vocab;

        if (use_sketch) {
            std::vector<Sketch> batch_sketch(batch.size());
            parallel_for(batch.size(), opts.threads,
                         [&](std::size_t b) { batch_sketch[b] = build_sketch(batch[b], carrier); });
            if (per_pair_vocab) {
                parallel_for(batch.size(), opts.threads, [&](std::size_t b) {
                    const auto i_cols = detail::target_columns(batch[b]);
                    std::vector<std::pair<std::size_t, std::size_t>> rows;
                    for (std::size_t a = 0; a < n_v; ++a) {
                        rows.clear();
                        for (std::size_t c : detail::union_sorted(v_cols[a], i_cols)) rows.emplace_back(c, carrier_row[c]);
                        table.scores(a, offset + b) = detail::sketch_rows_dot(v_sketch[a].m, batch_sketch[b].m, rows);
                    }
                });
            } else {
                // Row tiles keep a block of every batch sketch in cache while the
                // valuation sketches stream past. Each pair still accumulates its
                // rows in ascending order.
                constexpr std::size_t kTileRows = 16;
                const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, batch.size()));
                const std::size_t group = (batch.size() + workers - 1) / workers;
                parallel_for(workers, workers, [&](std::size_t w) {
                    const std::size_t b_begin = w * group;
                    const std::size_t b_end = std::min(batch.size(), b_begin + group);
                    for (std::size_t b = b_begin; b < b_end; ++b)
                        for (std::size_t a = 0; a < n_v; ++a) table.scores(a, offset + b) = 0.0;
                    for (std::size_t z0 = 0; z0 < P; z0 += kTileRows) {
                        const std::size_t z1 = std::min(P, z0 + kTileRows);
                        for (std::size_t a = 0; a < n_v; ++a) {
                            const Matrix& mv = v_sketch[a].m;
                            for (std::size_t b = b_begin; b < b_end; ++b) {
                                const Matrix& mi = batch_sketch[b].m;
                                double acc = table.scores(a, offset + b);
                                for (std::size_t z = z0; z < z1; ++z) acc += dot(mv.row(z), mi.row(z));
                                table.scores(a, offset + b) = acc;
                            }
                        }
                    }
                });
            }
        } else {
            parallel_for(batch.size(), opts.threads, [&](std::size_t b) {
                const SampleRecord& rec = batch[b];
                const auto i_cols = per_pair_vocab ? detail::target_columns(rec) : std::vector<std::size_t>{};
                const Matrix ei = error_matrix(rec, *dataset_vocab);
                for (std::size_t a = 0; a < n_v; ++a) {
                    const auto cols = per_pair_vocab ? detail::union_sorted(v_cols[a], i_cols) : full_cols;
                    table.scores(a, offset + b) =
                        detail::pairwise_sum(v_err[a], valuation[a].hidden, ei, rec.hidden, cols);
                }
            });
        }
        if (opts.length_normalize) {
            for (std::size_t b = 0; b < batch.size(); ++b)
                for (std::size_t a = 0; a < n_v; ++a)
                    table.scores(a, offset + b) /= static_cast<double>(valuation[a].length() * batch[b].length());
        }

        for (const auto& rec : batch) table.training_ids.push_back(rec.id);
        offset += batch.size();
    }
    if (offset != n_i) throw data_error("training source yielded fewer records than announced");
    for (double s : table.scores.values())
        if (!std::isfinite(s)) throw data_error("non-finite score");
    return result;
}

inline ValuationResult run_valuation(std::span<const SampleRecord> train, std::span<const SampleRecord> valuation,
                                     const ValuationOptions& opts) {
    SpanSource source(train);
    return run_valuation(source, valuation, opts);
}

/// Mean of the selected valuation rows, per training id.
inline std::vector<double> group_value(const ScoreTable& table, std::span<const std::string> valuation_ids) {
    if (valuation_ids.empty()) throw lookup_error("empty valuation subset");
    std::vector<double> mean(table.training_ids.size(), 0.0);
    for (const auto& id : valuation_ids) {
        const std::size_t a = table.valuation_index(id);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += table.scores(a, i);
    }
    for (double& m : mean) m /= static_cast<double>(valuation_ids.size());
    return mean;
}

inline std::vector<double> group_value(const ScoreTable& table) {
    return group_value(table, table.valuation_ids);
}

struct RankedEntry {
    std::string training_id;
    double score = 0.0;

    bool operator==(const RankedEntry&) const = default;
};

/// Descending by score; ties by ascending training id.
inline std::vector<RankedEntry> rank_scores(std::span<const std::string> ids, std::span<const double> scores) {
    std::vector<RankedEntry> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], scores[i]});
    std::sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.training_id < b.training_id;
    });
    return out;
}

inline std::vector<RankedEntry> rank(const ScoreTable& table, const std::string& valuation_id) {
    const std::size_t a = table.valuation_index(valuation_id);
    return rank_scores(table.training_ids, table.scores.row(a));
}

/// CSV `valuation_id,training_id,score`, rows ordered by valuation id, then rank.
inline void write_score_csv(std::ostream& out, const ScoreTable& table) {
    std::vector<std::size_t> order(table.valuation_ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return table.valuation_ids[a] < table.valuation_ids[b];
    });
    out << "valuation_id,training_id,score\n";
    for (std::size_t a : order) {
        for (const auto& e : rank_scores(table.training_ids, table.scores.row(a)))
            out << table.valuation_ids[a] << ',' << e.training_id << ',' << format_double(e.score) << '\n';
    }
}

/// Parses the CSV written by write_score_csv. Training ids come back sorted.
inline ScoreTable read_score_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "valuation_id,training_id,score")
        throw data_error("score CSV: missing header");
    std::vector<std::string> v_ids;
    std::map<std::string, std::size_t> v_index;
    std::map<std::string, std::size_t> t_index;
    std::vector<std::tuple<std::size_t, std::string, double>> cells;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw data_error("score CSV: malformed line " + std::to_string(line_no));
        std::string v = line.substr(0, c1);
        std::string t = line.substr(c1 + 1, c2 - c1 - 1);
        const double s = parse_double(std::string_view(line).substr(c2 + 1));
        auto [it, inserted] = v_index.emplace(v, v_ids.size());
        if (inserted) v_ids.push_back(v);
        t_index.emplace(t, 0);
        cells.emplace_back(it->second, std::move(t), s);
    }
    ScoreTable table;
    table.valuation_ids = v_ids;
    std::size_t idx = 0;
    for (auto& [id, pos] : t_index) {
        pos = idx++;
        table.training_ids.push_back(id);
    }
    table.scores = Matrix(v_ids.size(), t_index.size(), std::nan(""));
    for (const auto& [a, t, s] : cells) table.scores(a, t_index.at(t)) = s;
    for (std::size_t a = 0; a < v_ids.size(); ++a)
        for (std::size_t i = 0; i < table.training_ids.size(); ++i)
            if (std::isnan(table.scores(a, i)))
                throw data_error("score CSV: missing score for (" + v_ids[a] + ", " + table.training_ids[i] + ")");
    return table;
}

} // namespace forvalue
