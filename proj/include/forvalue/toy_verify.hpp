#pragma once

// Property suite that checks the forward-only score against the exact
// gradient dynamics of the unconstrained-features model.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "forvalue/sketch.hpp"
#include "forvalue/toy_oracle.hpp"
#include "forvalue/valuation.hpp"

namespace forvalue::toy {

/// |a - b| / max(|a|, |b|); 0 when both are 0.
inline double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

struct PropertyResult {
    std::string name;
    double residual = 0.0;  // worst observed value of the checked quantity
    double tolerance = 0.0; // pass when residual <= tolerance (or within bounds)
    bool passed = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<PropertyResult> properties;

    bool passed() const {
        return std::all_of(properties.begin(), properties.end(), [](const auto& p) { return p.passed; });
    }
    const PropertyResult* find(const std::string& name) const {
        for (const auto& p : properties)
            if (p.name == name) return &p;
        return nullptr;
    }
};

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::size_t instances = 20;
    std::size_t dynamics_instances = 10;
    ToySizes sizes;
    /// Negative control: corrupt one engine sketch before the bridge check.
    bool perturb_sketch = false;
};

namespace detail {

inline PropertyResult at_most(std::string name, double residual, double tolerance, std::string detail = {}) {
    return {std::move(name), residual, tolerance, residual <= tolerance, std::move(detail)};
}

} // namespace detail

/// Central finite differences of the SFT loss against sft_gradient; returns
/// the largest absolute coordinate difference.
inline double gradient_fd_error(const ToyModel& m, std::span<const ToySample> samples, double step = 1e-5) {
    const ToyGradient g = sft_gradient(m, samples);
    ToyModel probe = m;
    double worst = 0.0;
    auto check = [&](std::span<double> params, std::span<const double> analytic) {
        for (std::size_t j = 0; j < params.size(); ++j) {
            const double saved = params[j];
            params[j] = saved + step;
            const double up = sft_loss(probe, samples);
            params[j] = saved - step;
            const double down = sft_loss(probe, samples);
            params[j] = saved;
            worst = std::max(worst, std::abs((up - down) / (2.0 * step) - analytic[j]));
        }
    };
    check(probe.unembedding.values(), g.unembedding.values());
    check(probe.embeddings.values(), g.embeddings.values());
    return worst;
}

/// Residuals |delta ln pi_v - (lr/n) sum_i hessian_free_score(v, i)| after one
/// gradient step, for each learning rate.
inline std::vector<double> first_order_residuals(const ToyInstance& inst, const ToySample& v,
                                                 std::span<const double> rates) {
    double predicted_rate = 0.0;
    for (const auto& s : inst.train) predicted_rate += hessian_free_score(inst.model, v, s);
    predicted_rate /= static_cast<double>(inst.train.size());
    const double before = log_likelihood(inst.model, v);
    std::vector<double> out;
    for (double lr : rates) {
        const ToyModel next = gradient_step(inst.model, inst.train, lr);
        out.push_back(std::abs(log_likelihood(next, v) - before - lr * predicted_rate));
    }
    return out;
}

/// Nested vocabularies from the union of both samples' targets up to the full
/// vocabulary, adding tokens in ascending id order.
inline std::vector<RestrictedVocab> nested_vocab_chain(const SampleRecord& v, const SampleRecord& i,
                                                       std::size_t full_size, std::size_t steps) {
    std::vector<TokenId> base(v.targets.begin(), v.targets.end());
    base.insert(base.end(), i.targets.begin(), i.targets.end());
    RestrictedVocab current = RestrictedVocab::from_tokens(base);
    std::vector<TokenId> rest;
    for (std::size_t z = 0; z < full_size; ++z)
        if (!current.contains(TokenId(static_cast<std::uint32_t>(z)))) rest.emplace_back(static_cast<std::uint32_t>(z));
    std::vector<RestrictedVocab> chain{current};
    const std::size_t per_step = std::max<std::size_t>(1, (rest.size() + steps - 1) / std::max<std::size_t>(1, steps));
    std::vector<TokenId> tokens(current.begin(), current.end());
    for (std::size_t start = 0; start < rest.size(); start += per_step) {
        const std::size_t end = std::min(rest.size(), start + per_step);
        tokens.insert(tokens.end(), rest.begin() + start, rest.begin() + end);
        chain.push_back(RestrictedVocab::from_tokens(tokens));
    }
    return chain;
}

inline VerifyReport toy_verify(const VerifyOptions& opts) {
    VerifyReport report;
    const std::size_t n = std::max<std::size_t>(1, opts.instances);

    double fd = 0.0, ident = 0.0, decomp = 0.0, decomp_pair = 0.0, distinct_match = 0.0;
    double term2_distinct = 0.0, bridge = 0.0, bridge_table = 0.0, paths = 0.0;
    double bound_violation = 0.0, bound_increase = 0.0, bound_at_full = 0.0;
    std::size_t term2_nonzero_shared = 0;

    for (std::size_t s = 0; s < n; ++s) {
        const std::uint64_t seed = opts.seed * 7919 + s;
        const ToyInstance shared = random_instance(seed, opts.sizes, true);
        const ToyInstance distinct = random_instance(seed + 1000003, opts.sizes, false);

        std::vector<ToySample> all = shared.train;
        fd = std::max(fd, gradient_fd_error(shared.model, all));

        for (const auto& v : shared.valuation) {
            const ToyGradient gv = log_likelihood_gradient(shared.model, v);
            double sum_term1 = 0.0, sum_hf = 0.0;
            for (const auto& t : shared.train) {
                const ToyGradient gt = log_likelihood_gradient(shared.model, t);
                const double t1 = term_I(shared.model, v, t);
                ident = std::max(ident, relative_error(t1, inner_unembedding(gv, gt)));
                const double hf = inner(gv, gt);
                const double t2 = term_II(shared.model, v, std::span<const ToySample>(&t, 1));
                decomp_pair = std::max(decomp_pair, relative_error(t1 + t2, hf));
                sum_term1 += t1;
                sum_hf += hf;
            }
            const double t2_all = term_II(shared.model, v, shared.train);
            if (t2_all != 0.0) ++term2_nonzero_shared;
            decomp = std::max(decomp, relative_error(sum_term1 + t2_all, sum_hf));
        }

        for (const auto& v : distinct.valuation) {
            term2_distinct = std::max(term2_distinct, std::abs(term_II(distinct.model, v, distinct.train)));
            for (const auto& t : distinct.train)
                distinct_match = std::max(distinct_match, relative_error(hessian_free_score(distinct.model, v, t),
                                                                         term_I(distinct.model, v, t)));
        }

        // Engine bridge: exported records scored by the engine reproduce term I.
        const VocabPtr full = make_vocab(RestrictedVocab::full(opts.sizes.vocab));
        const auto train_rec = export_records(distinct.model, distinct.train, full, {Role::training, {}, {}});
        const auto val_rec = export_records(distinct.model, distinct.valuation, full, {Role::valuation, {}, {}});
        std::vector<Sketch> train_sk;
        for (const auto& r : train_rec) train_sk.push_back(build_sketch(r, full));
        if (opts.perturb_sketch && !train_sk.empty()) train_sk.front().m(0, 0) += 1e-3;
        ValuationOptions vopts;
        vopts.vocab_mode = VocabMode::dataset;
        vopts.path = ScorePath::sketch;
        vopts.batch_size = 5;
        const auto table = run_valuation(train_rec, val_rec, vopts).table;
        for (std::size_t a = 0; a < val_rec.size(); ++a) {
            const Sketch sv = build_sketch(val_rec[a], full);
            for (std::size_t b = 0; b < train_rec.size(); ++b) {
                const double oracle = term_I(distinct.model, distinct.valuation[a], distinct.train[b]);
                bridge = std::max(bridge, relative_error(score_sketch(sv, train_sk[b]), oracle));
                bridge_table = std::max(bridge_table, relative_error(table.scores(a, b), oracle));
                const double pw = score_pairwise(val_rec[a], train_rec[b], *full);
                paths = std::max(paths, std::abs(score_sketch(sv, build_sketch(train_rec[b], full)) - pw) /
                                            std::max(1.0, std::abs(pw)));
            }
        }

        // Restricted vocabularies: error against the full score stays within the
        // residual-mass bound, and the bound shrinks to zero along a nested chain.
        const auto& v0 = val_rec.front();
        for (const auto& t : train_rec) {
            const double exact = score_pairwise(v0, t, *full);
            double previous = std::numeric_limits<double>::infinity();
            const auto chain = nested_vocab_chain(v0, t, opts.sizes.vocab, 4);
            for (const auto& vocab : chain) {
                const double restricted = score_pairwise(v0, t, vocab);
                const double bound = restriction_bound(v0, t, vocab);
                bound_violation = std::max(bound_violation, std::abs(restricted - exact) - bound - 1e-12);
                bound_increase = std::max(bound_increase, bound - previous);
                previous = bound;
            }
            bound_at_full = std::max(bound_at_full, restriction_bound(v0, t, chain.back()));
        }
    }

    report.properties.push_back(detail::at_most("sft_gradient_matches_finite_differences", fd, 1e-6));
    report.properties.push_back(detail::at_most("term_I_equals_unembedding_gradient_product", ident, 1e-9));
    report.properties.push_back(detail::at_most(
        "term_I_plus_term_II_equals_gradient_dot_product", std::max(decomp, decomp_pair), 1e-9,
        std::to_string(term2_nonzero_shared) + " valuation samples with shared contexts"));
    report.properties.push_back(detail::at_most("term_II_vanishes_for_distinct_contexts", term2_distinct, 0.0));
    report.properties.push_back(detail::at_most("hessian_free_equals_term_I_for_distinct_contexts", distinct_match, 1e-9));
    report.properties.push_back(detail::at_most("engine_sketch_score_equals_term_I", bridge, 1e-6));
    report.properties.push_back(detail::at_most("engine_valuation_table_equals_term_I", bridge_table, 1e-6));
    report.properties.push_back(detail::at_most("sketch_path_equals_pairwise_path", paths, 1e-5));
    report.properties.push_back(detail::at_most("restricted_score_within_residual_bound", std::max(0.0, bound_violation), 0.0));
    report.properties.push_back(detail::at_most("residual_bound_non_increasing_along_chain", std::max(0.0, bound_increase), 0.0));
    report.properties.push_back(detail::at_most("residual_bound_zero_at_full_vocabulary", bound_at_full, 0.0));

    // Second-order convergence of the one-step likelihood change.
    const double rates[] = {1e-3, 5e-4, 2.5e-4};
    double worst_ratio_gap = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t s = 0; s < opts.dynamics_instances; ++s) {
        const ToyInstance inst = random_instance(opts.seed * 104729 + s, opts.sizes, true);
        for (const auto& v : inst.valuation) {
            const auto r = first_order_residuals(inst, v, rates);
            for (std::size_t j = 0; j + 1 < r.size(); ++j) {
                const double ratio = r[j] / r[j + 1];
                lo = std::min(lo, ratio);
                hi = std::max(hi, ratio);
                worst_ratio_gap = std::max(worst_ratio_gap, std::max(3.5 - ratio, ratio - 4.5));
            }
        }
    }
    PropertyResult dyn{"one_step_likelihood_change_is_second_order", worst_ratio_gap, 0.0, worst_ratio_gap <= 0.0,
                       "residual ratios per halving in [" + format_double(lo) + ", " + format_double(hi) +
                           "], required [3.5, 4.5]"};
    report.properties.push_back(std::move(dyn));
    return report;
}

} // namespace forvalue::toy
