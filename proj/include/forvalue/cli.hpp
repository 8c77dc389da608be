#pragma once

// Command implementations behind the `forvalue` executable. Each command
// returns a process exit code: 0 success, 1 domain failure, 2 environment or
// I/O failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "forvalue/bench.hpp"
#include "forvalue/error.hpp"
#include "forvalue/format.hpp"
#include "forvalue/ingest.hpp"
#include "forvalue/metrics.hpp"
#include "forvalue/synthetic.hpp"
#include "forvalue/toy_verify.hpp"
#include "forvalue/valuation.hpp"

namespace forvalue::cli {

enum ExitCode : int { kSuccess = 0, kDomainFailure = 1, kEnvironmentFailure = 2 };

/// Runs `body`, mapping exceptions onto exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
    try {
        return body();
    } catch (const io_error& e) {
        err << "error: " << e.what() << '\n';
        return kEnvironmentFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kEnvironmentFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDomainFailure;
    }
}

inline std::ifstream open_input(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw io_error("cannot open " + p.string());
    return in;
}

inline int cmd_validate(const std::filesystem::path& dump_dir, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const DumpReader reader(dump_dir);
        std::size_t bad = 0;
        for (std::size_t i = 0; i < reader.size(); ++i) {
            const auto& entry = reader.manifest().samples[i];
            std::vector<std::string> problems;
            try {
                const SampleRecord rec = reader.load_unvalidated(i);
                for (const auto& v : validate_record(rec, *reader.vocab()).violations) problems.push_back(v.message);
            } catch (const std::exception& e) {
                problems.emplace_back(e.what());
            }
            if (!problems.empty()) {
                ++bad;
                for (const auto& p : problems) out << entry.id << ": " << p << '\n';
            }
        }
        if (bad == 0) {
            out << reader.size() << " samples valid\n";
            return int(kSuccess);
        }
        out << bad << " of " << reader.size() << " samples invalid\n";
        return int(kDomainFailure);
    });
}

struct ScoreArgs {
    std::filesystem::path train_dir;
    std::filesystem::path valid_dir;
    std::filesystem::path out_path;
    ValuationOptions options;
};

inline int cmd_score(const ScoreArgs& args, std::ostream& log, std::ostream& err) {
    return guarded(err, [&] {
        DumpReader train(args.train_dir);
        DumpReader valid(args.valid_dir);
        const auto& tm = train.manifest();
        const auto& vm = valid.manifest();
        if (tm.embedding_dim != vm.embedding_dim || tm.restricted_vocab != vm.restricted_vocab) {
            err << "incompatible dumps:\n"
                << "  training:  d=" << tm.embedding_dim << ", |V_D|=" << tm.restricted_vocab.size() << '\n'
                << "  valuation: d=" << vm.embedding_dim << ", |V_D|=" << vm.restricted_vocab.size()
                << (tm.restricted_vocab == vm.restricted_vocab ? "" : " (vocabularies differ)") << '\n';
            return int(kDomainFailure);
        }
        std::vector<SampleRecord> valuation;
        for (std::size_t i = 0; i < valid.size(); ++i)
            if (vm.samples[i].role == Role::valuation) valuation.push_back(valid.load(i));
        if (valuation.empty()) throw lookup_error("no valuation samples in " + args.valid_dir.string());

        ValuationOptions opts = args.options;
        if (!opts.global_vocab_size) opts.global_vocab_size = tm.global_vocab_size;
        DumpSource source(train, Role::training);

        const auto start = std::chrono::steady_clock::now();
        const ValuationResult result = run_valuation(source, valuation, opts);
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

        std::ofstream out(args.out_path, std::ios::trunc);
        if (!out) throw io_error("cannot write " + args.out_path.string());
        write_score_csv(out, result.table);
        out.flush();
        if (!out) throw io_error("write failed: " + args.out_path.string());

        const double pairs = static_cast<double>(result.table.scores.size());
        log << "scored " << result.table.valuation_ids.size() << " x " << result.table.training_ids.size()
            << " pairs in " << std::fixed << std::setprecision(3) << elapsed.count() << " s ("
            << std::setprecision(0) << pairs / std::max(elapsed.count(), 1e-9) << " pairs/s; path "
            << to_string(result.path) << ", vocab " << to_string(result.vocab_mode) << ", " << result.batches
            << " batches)\n"
            << std::defaultfloat;
        return int(kSuccess);
    });
}

inline ScoreTable load_scores(const std::filesystem::path& p) {
    auto in = open_input(p);
    return read_score_csv(in);
}

inline int cmd_rank(const std::filesystem::path& scores_csv, const std::string& valuation_id, std::size_t top_k,
                    std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ScoreTable table = load_scores(scores_csv);
        const auto ranked = rank(table, valuation_id);
        const std::size_t n = top_k == 0 ? ranked.size() : std::min(top_k, ranked.size());
        for (std::size_t r = 0; r < n; ++r)
            out << r + 1 << ' ' << ranked[r].training_id << ' ' << format_double(ranked[r].score) << '\n';
        return int(kSuccess);
    });
}

inline int cmd_eval(const std::filesystem::path& scores_csv, const std::filesystem::path& labels_file, LabelMode mode,
                    const std::filesystem::path& report_path, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ScoreTable table = load_scores(scores_csv);
        auto in = open_input(labels_file);
        const LabelTable labels = read_labels(in);
        const EvalReport report = evaluate(table, labels, mode);
        if (!report_path.empty()) {
            std::ofstream rf(report_path, std::ios::trunc);
            if (!rf) throw io_error("cannot write " + report_path.string());
            rf << report_to_json(report).dump(2) << '\n';
        }
        out << std::fixed << std::setprecision(3) << "AUC    " << report.mean_auc << " ± " << report.std_auc << '\n'
            << "Recall " << report.mean_recall << " ± " << report.std_recall << '\n'
            << std::defaultfloat << "(mean ± std over " << report.n_valuation << " valuation points, mode "
            << to_string(mode) << ")\n";
        if (!report.skipped.empty()) out << "skipped " << report.skipped.size() << " valuation points with undefined metrics\n";
        return int(kSuccess);
    });
}

enum class ThresholdMode { bottom_fraction, value };

struct DetectResult {
    std::vector<RankedEntry> flagged; // ascending by group-averaged score
};

/// Flags training samples whose score averaged over all valuation points is
/// in the bottom fraction (rounded up) or strictly below a value.
inline DetectResult detect(const ScoreTable& table, ThresholdMode mode, double param) {
    if (mode == ThresholdMode::bottom_fraction && !(param > 0.0 && param < 1.0))
        throw data_error("bottom fraction must lie in (0, 1), got " + format_double(param));
    const auto mean = group_value(table);
    std::vector<RankedEntry> ranked;
    for (std::size_t i = 0; i < mean.size(); ++i) ranked.push_back({table.training_ids[i], mean[i]});
    std::sort(ranked.begin(), ranked.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.training_id < b.training_id;
    });
    DetectResult r;
    if (mode == ThresholdMode::bottom_fraction) {
        const auto count = static_cast<std::size_t>(std::ceil(param * static_cast<double>(ranked.size())));
        r.flagged.assign(ranked.begin(), ranked.begin() + std::min(count, ranked.size()));
    } else {
        for (const auto& e : ranked)
            if (e.score < param) r.flagged.push_back(e);
    }
    return r;
}

inline int cmd_detect(const std::filesystem::path& scores_csv, ThresholdMode mode, double param,
                      const std::filesystem::path& labels_file, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ScoreTable table = load_scores(scores_csv);
        const DetectResult r = detect(table, mode, param);
        for (const auto& e : r.flagged) out << e.training_id << ',' << format_double(e.score) << '\n';
        if (!labels_file.empty()) {
            auto in = open_input(labels_file);
            const LabelTable labels = read_labels(in);
            std::size_t noisy = 0, hit = 0;
            for (const auto& id : table.training_ids) {
                auto c = labels.clean_of.find(id);
                if (c == labels.clean_of.end()) throw lookup_error("missing clean flag for " + id);
                if (!c->second) ++noisy;
            }
            for (const auto& e : r.flagged)
                if (!labels.clean_of.at(e.training_id)) ++hit;
            err << "flagged " << r.flagged.size() << ", of which noisy " << hit << " / " << noisy << " noisy total";
            if (noisy > 0) err << " (recall " << format_double(double(hit) / double(noisy)) << ")";
            err << '\n';
        }
        return int(kSuccess);
    });
}

inline int cmd_toy_verify(const toy::VerifyOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto report = toy::toy_verify(opts);
        for (const auto& p : report.properties) {
            out << (p.passed ? "PASS " : "FAIL ") << p.name << "  residual=" << format_double(p.residual)
                << " tol=" << format_double(p.tolerance);
            if (!p.detail.empty()) out << "  (" << p.detail << ")";
            out << '\n';
        }
        out << (report.passed() ? "all properties hold\n" : "property check failed\n");
        return report.passed() ? int(kSuccess) : int(kDomainFailure);
    });
}

inline int cmd_bench(const bench::BenchOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto report = bench::run_bench(opts);
        out << "n_train n_valuation T d |V| seconds pairs_per_second\n";
        auto row = [&](const bench::BenchPoint& p) {
            out << p.train << ' ' << opts.valuation << ' ' << opts.length << ' ' << opts.dim << ' ' << p.vocab << ' '
                << format_double(p.seconds) << ' ' << format_double(std::round(p.pairs_per_second)) << '\n';
        };
        for (const auto& p : report.train_sweep) row(p);
        for (const auto& p : report.vocab_sweep) row(p);
        bool ok = true;
        if (report.train_exponent) {
            const bool pass = *report.train_exponent >= 0.9 && *report.train_exponent <= 1.3;
            ok = ok && pass;
            out << "scaling exponent in n:   " << format_double(*report.train_exponent) << " (expected [0.9, 1.3]) "
                << (pass ? "PASS" : "FAIL") << '\n';
        }
        if (report.vocab_exponent) {
            const bool pass = *report.vocab_exponent >= 0.8 && *report.vocab_exponent <= 1.4;
            ok = ok && pass;
            out << "scaling exponent in |V|: " << format_double(*report.vocab_exponent) << " (expected [0.8, 1.4]) "
                << (pass ? "PASS" : "FAIL") << '\n';
        }
        return ok ? int(kSuccess) : int(kDomainFailure);
    });
}

enum class ToyDataset { random, cluster, mislabel };

/// Writes <out>/train, <out>/valid (dump directories) and <out>/labels.txt
/// for one of the synthetic toy datasets.
inline int cmd_toy_export(ToyDataset dataset, const std::filesystem::path& out_dir, std::uint64_t seed,
                          bool full_vocab, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        synthetic::LabeledToyData data;
        if (dataset == ToyDataset::random) {
            data.instance = toy::random_instance(seed);
            for (std::size_t i = 0; i < data.instance.train.size(); ++i) {
                data.train_labels.push_back("c" + std::to_string(i % 2));
                data.train_clean.push_back(true);
            }
            for (std::size_t i = 0; i < data.instance.valuation.size(); ++i)
                data.valuation_labels.push_back("c" + std::to_string(i % 2));
        } else if (dataset == ToyDataset::cluster) {
            synthetic::ClusterDatasetOptions o;
            o.seed = seed;
            data = synthetic::cluster_dataset(o);
        } else {
            synthetic::MislabelDatasetOptions o;
            o.seed = seed;
            data = synthetic::mislabel_dataset(o);
        }
        const auto& inst = data.instance;
        const VocabPtr vocab =
            full_vocab ? make_vocab(RestrictedVocab::full(inst.model.vocab_size())) : synthetic::target_vocab(inst);
        std::vector<bool> clean(data.train_clean.begin(), data.train_clean.end());
        const auto train = toy::export_records(inst.model, inst.train, vocab, {Role::training, data.train_labels, clean});
        const auto valid =
            toy::export_records(inst.model, inst.valuation, vocab, {Role::valuation, data.valuation_labels, {}});
        const auto manifest =
            make_manifest(*vocab, static_cast<std::uint32_t>(inst.model.dim()), inst.model.vocab_size());
        write_dump(out_dir / "train", manifest, train);
        write_dump(out_dir / "valid", manifest, valid);
        std::ofstream labels(out_dir / "labels.txt", std::ios::trunc);
        if (!labels) throw io_error("cannot write " + (out_dir / "labels.txt").string());
        for (const auto& r : train) labels << r.id << ',' << *r.class_label << ',' << (*r.clean ? 1 : 0) << '\n';
        for (const auto& r : valid) labels << r.id << ',' << *r.class_label << '\n';
        out << "wrote " << train.size() << " training and " << valid.size() << " valuation samples to "
            << out_dir.string() << '\n';
        return int(kSuccess);
    });
}

} // namespace forvalue::cli
