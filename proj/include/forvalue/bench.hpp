#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "forvalue/synthetic.hpp"
#include "forvalue/valuation.hpp"

namespace forvalue::bench {

struct BenchOptions {
    std::vector<std::size_t> train_sizes{250, 500, 1000, 2000, 4000};
    std::vector<std::size_t> vocab_sizes{250, 500, 1000, 2000, 4000};
    std::size_t valuation = 100;
    std::size_t length = 32;
    std::size_t dim = 64;
    std::size_t vocab = 500;       // |V| during the training-size sweep
    std::size_t train_for_vocab = 500; // n during the vocabulary sweep
    std::size_t threads = 1;
    std::size_t batch_size = 64;
    std::size_t repetitions = 5;
    std::uint64_t seed = 7;
};

struct BenchPoint {
    std::size_t train = 0;
    std::size_t vocab = 0;
    double seconds = 0.0;
    double pairs_per_second = 0.0;
};

struct BenchReport {
    std::vector<BenchPoint> train_sweep;
    std::vector<BenchPoint> vocab_sweep;
    std::optional<double> train_exponent; // slope of log time vs log n
    std::optional<double> vocab_exponent; // slope of log time vs log |V|
};

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

/// Wall time of one full sketch-path valuation (sketch construction included).
inline double time_once(std::span<const SampleRecord> train, std::span<const SampleRecord> valuation,
                        const BenchOptions& o) {
    ValuationOptions vo;
    vo.batch_size = o.batch_size;
    vo.vocab_mode = VocabMode::dataset;
    vo.path = ScorePath::sketch;
    vo.threads = o.threads;
    const auto start = std::chrono::steady_clock::now();
    const auto result = run_valuation(train, valuation, vo);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (result.table.scores.size() != train.size() * valuation.size()) throw data_error("benchmark produced wrong table");
    return elapsed.count();
}

inline BenchPoint make_point(std::size_t n_train, std::size_t n_valuation, std::size_t vocab, double seconds) {
    return {n_train, vocab, seconds, static_cast<double>(n_train * n_valuation) / std::max(seconds, 1e-9)};
}

/// Best-of-`repetitions` time for one configuration.
inline BenchPoint time_valuation(std::size_t n_train, std::size_t n_valuation, std::size_t vocab_size,
                                 const BenchOptions& o) {
    const VocabPtr vocab = make_vocab(RestrictedVocab::full(vocab_size));
    const auto train = synthetic::random_records(n_train, o.length, o.length, o.dim, vocab, o.seed, "t");
    const auto valuation =
        synthetic::random_records(n_valuation, o.length, o.length, o.dim, vocab, o.seed + 1, "v", Role::valuation);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(1, o.repetitions); ++r)
        best = std::min(best, time_once(train, valuation, o));
    return make_point(n_train, n_valuation, vocab_size, best);
}

/// Repetitions are interleaved across sweep points (each repetition visits
/// every point once), so a slow period of the machine does not land on a
/// single point. Each point keeps its fastest repetition.
inline BenchReport run_bench(const BenchOptions& o) {
    BenchReport report;
    const std::size_t reps = std::max<std::size_t>(1, o.repetitions);

    // Training-size sweep: prefixes of one record set.
    if (!o.train_sizes.empty()) {
        const VocabPtr vocab = make_vocab(RestrictedVocab::full(o.vocab));
        const std::size_t n_max = *std::max_element(o.train_sizes.begin(), o.train_sizes.end());
        const auto train = synthetic::random_records(n_max, o.length, o.length, o.dim, vocab, o.seed, "t");
        const auto valuation =
            synthetic::random_records(o.valuation, o.length, o.length, o.dim, vocab, o.seed + 1, "v", Role::valuation);
        std::vector<double> best(o.train_sizes.size(), std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t p = 0; p < o.train_sizes.size(); ++p)
                best[p] = std::min(best[p], time_once(std::span(train).first(o.train_sizes[p]), valuation, o));
        std::vector<double> xs;
        for (std::size_t p = 0; p < o.train_sizes.size(); ++p) {
            report.train_sweep.push_back(make_point(o.train_sizes[p], o.valuation, o.vocab, best[p]));
            xs.push_back(static_cast<double>(o.train_sizes[p]));
        }
        if (xs.size() >= 2) report.train_exponent = log_log_slope(xs, best);
    }

    // Vocabulary sweep: one record set per vocabulary size.
    if (!o.vocab_sizes.empty()) {
        std::vector<std::vector<SampleRecord>> train, valuation;
        for (std::size_t v : o.vocab_sizes) {
            const VocabPtr vocab = make_vocab(RestrictedVocab::full(v));
            train.push_back(synthetic::random_records(o.train_for_vocab, o.length, o.length, o.dim, vocab, o.seed, "t"));
            valuation.push_back(synthetic::random_records(o.valuation, o.length, o.length, o.dim, vocab, o.seed + 1, "v",
                                                          Role::valuation));
        }
        std::vector<double> best(o.vocab_sizes.size(), std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t p = 0; p < o.vocab_sizes.size(); ++p)
                best[p] = std::min(best[p], time_once(train[p], valuation[p], o));
        std::vector<double> xs;
        for (std::size_t p = 0; p < o.vocab_sizes.size(); ++p) {
            report.vocab_sweep.push_back(make_point(o.train_for_vocab, o.valuation, o.vocab_sizes[p], best[p]));
            xs.push_back(static_cast<double>(o.vocab_sizes[p]));
        }
        if (xs.size() >= 2) report.vocab_exponent = log_log_slope(xs, best);
    }
    return report;
}

} // namespace forvalue::bench
