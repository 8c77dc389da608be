#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "forvalue/cli.hpp"

using namespace forvalue;

int main(int argc, char** argv) {
    CLI::App app{"forvalue: forward-only training-data valuation"};
    app.require_subcommand(1);

    // validate
    std::string validate_dir;
    auto* validate = app.add_subcommand("validate", "Check every sample of a dump directory");
    validate->add_option("dump_dir", validate_dir)->required();

    // score
    cli::ScoreArgs score_args;
    std::string vocab_mode = "batch_union", path = "auto";
    auto* score = app.add_subcommand("score", "Score valuation samples against training samples");
    score->add_option("train_dir", score_args.train_dir, "Dump with training samples")->required();
    score->add_option("valid_dir", score_args.valid_dir, "Dump with valuation samples")->required();
    score->add_option("-o,--out", score_args.out_path, "Output CSV")->required();
    score->add_option("--batch-size", score_args.options.batch_size)->check(CLI::PositiveNumber);
    score->add_option("--vocab-mode", vocab_mode)->check(CLI::IsMember({"batch_union", "dataset", "full_if_available"}));
    score->add_option("--path", path)->check(CLI::IsMember({"auto", "pairwise", "sketch"}));
    score->add_option("--threads", score_args.options.threads)->check(CLI::PositiveNumber);
    score->add_flag("--length-normalize", score_args.options.length_normalize,
                    "Divide each score by the product of the two sequence lengths");

    // rank
    std::string rank_csv, rank_id;
    std::size_t top_k = 10;
    auto* rank_cmd = app.add_subcommand("rank", "List the top training samples for one valuation sample");
    rank_cmd->add_option("scores_csv", rank_csv)->required();
    rank_cmd->add_option("valuation_id", rank_id)->required();
    rank_cmd->add_option("-k,--top-k", top_k, "0 lists every training sample");

    // eval
    std::string eval_csv, eval_labels, eval_mode = "influence", eval_report;
    auto* eval = app.add_subcommand("eval", "AUC and recall against class pseudo-labels");
    eval->add_option("scores_csv", eval_csv)->required();
    eval->add_option("labels", eval_labels, "Text table: id class [clean]")->required();
    eval->add_option("--mode", eval_mode)->check(CLI::IsMember({"influence", "mislabel"}));
    eval->add_option("--report", eval_report, "Write the full report as JSON");

    // detect
    std::string detect_csv, detect_labels;
    double bottom_fraction = 0.0, below = 0.0;
    auto* detect = app.add_subcommand("detect", "Flag training samples with low group-averaged scores");
    detect->add_option("scores_csv", detect_csv)->required();
    auto* frac_opt = detect->add_option("--bottom-fraction", bottom_fraction);
    auto* below_opt = detect->add_option("--below", below);
    frac_opt->excludes(below_opt);
    detect->add_option("--labels", detect_labels, "Report recall of flagged samples against clean flags");

    // toy-verify
    toy::VerifyOptions verify_opts;
    auto* verify = app.add_subcommand("toy-verify", "Check the score against exact toy-model gradient dynamics");
    verify->add_option("--seed", verify_opts.seed);
    verify->add_option("--instances", verify_opts.instances)->check(CLI::PositiveNumber);
    verify->add_option("--dynamics-instances", verify_opts.dynamics_instances);
    verify->add_option("--vocab", verify_opts.sizes.vocab)->check(CLI::Range(2, 1 << 16));
    verify->add_option("--dim", verify_opts.sizes.dim)->check(CLI::PositiveNumber);
    verify->add_option("--train", verify_opts.sizes.n_train)->check(CLI::PositiveNumber);
    verify->add_option("--valuation", verify_opts.sizes.n_valuation)->check(CLI::PositiveNumber);
    verify->add_flag("--perturb-sketch", verify_opts.perturb_sketch, "Negative control: corrupt one engine sketch");

    // bench
    bench::BenchOptions bench_opts;
    auto* bench_cmd = app.add_subcommand("bench", "Time sketch construction and scoring on synthetic records");
    bench_cmd->add_option("--n", bench_opts.train_sizes, "Training-set sizes")->delimiter(',');
    bench_cmd->add_option("--vocab-sizes", bench_opts.vocab_sizes, "|V| values for the vocabulary sweep")->delimiter(',');
    bench_cmd->add_option("--valuation", bench_opts.valuation)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--T", bench_opts.length)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--d", bench_opts.dim)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--vocab", bench_opts.vocab, "|V| during the n sweep")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--n-for-vocab", bench_opts.train_for_vocab)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--threads", bench_opts.threads)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--reps", bench_opts.repetitions)->check(CLI::PositiveNumber);

    // toy-export
    std::string export_kind = "random", export_dir;
    std::uint64_t export_seed = 1;
    bool export_full = false;
    auto* export_cmd = app.add_subcommand("toy-export", "Write a synthetic toy dataset as dump directories");
    export_cmd->add_option("dataset", export_kind)->check(CLI::IsMember({"random", "cluster", "mislabel"}));
    export_cmd->add_option("out_dir", export_dir)->required();
    export_cmd->add_option("--seed", export_seed);
    export_cmd->add_flag("--full-vocab", export_full, "Store probabilities over the whole toy vocabulary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Usage errors count as environment failures; --help exits 0.
        return app.exit(e) == 0 ? cli::kSuccess : cli::kEnvironmentFailure;
    }

    if (*validate) return cli::cmd_validate(validate_dir, std::cout, std::cerr);
    if (*score) {
        static const std::map<std::string, VocabMode> modes{{"batch_union", VocabMode::batch_union},
                                                            {"dataset", VocabMode::dataset},
                                                            {"full_if_available", VocabMode::full_if_available}};
        static const std::map<std::string, ScorePath> paths{
            {"auto", ScorePath::automatic}, {"pairwise", ScorePath::pairwise}, {"sketch", ScorePath::sketch}};
        score_args.options.vocab_mode = modes.at(vocab_mode);
        score_args.options.path = paths.at(path);
        return cli::cmd_score(score_args, std::cerr, std::cerr);
    }
    if (*rank_cmd) return cli::cmd_rank(rank_csv, rank_id, top_k, std::cout, std::cerr);
    if (*eval)
        return cli::cmd_eval(eval_csv, eval_labels, eval_mode == "mislabel" ? LabelMode::mislabel : LabelMode::influence,
                             eval_report, std::cout, std::cerr);
    if (*detect) {
        if (!*frac_opt && !*below_opt) {
            std::cerr << "error: one of --bottom-fraction or --below is required\n";
            return cli::kDomainFailure;
        }
        return *frac_opt ? cli::cmd_detect(detect_csv, cli::ThresholdMode::bottom_fraction, bottom_fraction,
                                           detect_labels, std::cout, std::cerr)
                         : cli::cmd_detect(detect_csv, cli::ThresholdMode::value, below, detect_labels, std::cout,
                                           std::cerr);
    }
    if (*verify) return cli::cmd_toy_verify(verify_opts, std::cout, std::cerr);
    if (*bench_cmd) return cli::cmd_bench(bench_opts, std::cout, std::cerr);
    if (*export_cmd) {
        const auto kind = export_kind == "cluster"    ? cli::ToyDataset::cluster
                          : export_kind == "mislabel" ? cli::ToyDataset::mislabel
                                                      : cli::ToyDataset::random;
        return cli::cmd_toy_export(kind, export_dir, export_seed, export_full, std::cout, std::cerr);
    }
    return cli::kDomainFailure;
}
