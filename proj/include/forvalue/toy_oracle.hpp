#pragma once

// Unconstrained-features language model: every context (input plus target
// prefix) owns a free embedding h, logits are W h, and the sequence
// likelihood is the product of per-position softmax probabilities. All
// gradients are analytic, which makes this the reference for checking the
// forward-only score against exact training dynamics.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "forvalue/error.hpp"
#include "forvalue/matrix.hpp"
#include "forvalue/record.hpp"

namespace forvalue::toy {

struct ToySample {
    std::string id;
    std::vector<TokenId> targets;
    /// Embedding slot of the context predicting each target. Two positions
    /// (possibly of different samples) that share a slot share the same
    /// (input, prefix) context.
    std::vector<std::size_t> contexts;

    std::size_t length() const noexcept { return targets.size(); }
};

struct ToyModel {
    Matrix unembedding; // |V| x d
    Matrix embeddings;  // one row per context slot

    std::size_t vocab_size() const noexcept { return unembedding.rows(); }
    std::size_t dim() const noexcept { return unembedding.cols(); }
    std::size_t num_contexts() const noexcept { return embeddings.rows(); }

    std::span<const double> context_of(const ToySample& s, std::size_t k) const {
        return embeddings.row(s.contexts.at(k));
    }
};

/// Gradient (or any tangent vector) over all model parameters.
struct ToyGradient {
    Matrix unembedding;
    Matrix embeddings;

    static ToyGradient zeros_like(const ToyModel& m) {
        return {Matrix(m.vocab_size(), m.dim()), Matrix(m.num_contexts(), m.dim())};
    }

    void add_scaled(double scale, const ToyGradient& other) {
        axpy(scale, other.unembedding.values(), unembedding.values());
        axpy(scale, other.embeddings.values(), embeddings.values());
    }
};

/// Inner product over every parameter.
inline double inner(const ToyGradient& a, const ToyGradient& b) {
    return dot(a.unembedding.values(), b.unembedding.values()) + dot(a.embeddings.values(), b.embeddings.values());
}

/// Frobenius inner product of the unembedding blocks only.
inline double inner_unembedding(const ToyGradient& a, const ToyGradient& b) {
    return dot(a.unembedding.values(), b.unembedding.values());
}

inline void check_sample(const ToyModel& m, const ToySample& s) {
    if (s.contexts.size() != s.targets.size())
        throw data_error("toy sample " + s.id + ": contexts and targets differ in length");
    for (std::size_t k = 0; k < s.length(); ++k) {
        if (s.targets[k].value >= m.vocab_size()) throw data_error("toy sample " + s.id + ": token out of range");
        if (s.contexts[k] >= m.num_contexts()) throw data_error("toy sample " + s.id + ": unknown context slot");
    }
}

/// softmax(W h)
inline std::vector<double> next_token_probs(const ToyModel& m, std::span<const double> h) {
    const std::size_t V = m.vocab_size();
    std::vector<double> logits(V);
    for (std::size_t z = 0; z < V; ++z) logits[z] = dot(m.unembedding.row(z), h);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        total += l;
    }
    for (double& l : logits) l /= total;
    return logits;
}

inline double log_likelihood(const ToyModel& m, const ToySample& s) {
    check_sample(m, s);
    const std::size_t V = m.vocab_size();
    double total = 0.0;
    std::vector<double> logits(V);
    for (std::size_t k = 0; k < s.length(); ++k) {
        const auto h = m.context_of(s, k);
        for (std::size_t z = 0; z < V; ++z) logits[z] = dot(m.unembedding.row(z), h);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double l : logits) sum += std::exp(l - mx);
        total += logits[s.targets[k].value] - mx - std::log(sum);
    }
    return total;
}

/// e_{y_k} - softmax(W h_k) over the full vocabulary.
inline std::vector<double> full_error(const ToyModel& m, const ToySample& s, std::size_t k) {
    auto e = next_token_probs(m, m.context_of(s, k));
    for (double& x : e) x = -x;
    e[s.targets[k].value] += 1.0;
    return e;
}

/// W^T e: gradient of ln pi(y_k | context) with respect to that context's embedding.
inline std::vector<double> embedding_direction(const ToyModel& m, std::span<const double> err) {
    std::vector<double> g(m.dim(), 0.0);
    for (std::size_t z = 0; z < m.vocab_size(); ++z) axpy(err[z], m.unembedding.row(z), g);
    return g;
}

/// Gradient of ln pi(y_s | x_s) with respect to every parameter.
inline ToyGradient log_likelihood_gradient(const ToyModel& m, const ToySample& s) {
    check_sample(m, s);
    ToyGradient g = ToyGradient::zeros_like(m);
    for (std::size_t k = 0; k < s.length(); ++k) {
        const auto h = m.context_of(s, k);
        const auto e = full_error(m, s, k);
        for (std::size_t z = 0; z < m.vocab_size(); ++z) axpy(e[z], h, g.unembedding.row(z));
        axpy(1.0, embedding_direction(m, e), g.embeddings.row(s.contexts[k]));
    }
    return g;
}

/// Teacher-forcing loss -(1/n) sum_i ln pi(y_i | x_i).
inline double sft_loss(const ToyModel& m, std::span<const ToySample> samples) {
    double total = 0.0;
    for (const auto& s : samples) total += log_likelihood(m, s);
    return -total / static_cast<double>(samples.size());
}

inline ToyGradient sft_gradient(const ToyModel& m, std::span<const ToySample> samples) {
    ToyGradient g = ToyGradient::zeros_like(m);
    const double scale = -1.0 / static_cast<double>(samples.size());
    for (const auto& s : samples) g.add_scaled(scale, log_likelihood_gradient(m, s));
    return g;
}

/// theta <- theta - lr * grad L_SFT(theta)
inline ToyModel gradient_step(const ToyModel& m, std::span<const ToySample> samples, double lr) {
    if (!(lr >= 0.0)) throw data_error("learning rate must be non-negative");
    ToyModel next = m;
    if (lr == 0.0) return next;
    const ToyGradient g = sft_gradient(m, samples);
    axpy(-lr, g.unembedding.values(), next.unembedding.values());
    axpy(-lr, g.embeddings.values(), next.embeddings.values());
    return next;
}

/// Embedding/error alignment over the full vocabulary:
/// sum_{k,k'} <e_v(k), e_i(k')> <h_v(k), h_i(k')>.
inline double term_I(const ToyModel& m, const ToySample& v, const ToySample& i) {
    check_sample(m, v);
    check_sample(m, i);
    std::vector<std::vector<double>> ev, ei;
    for (std::size_t k = 0; k < v.length(); ++k) ev.push_back(full_error(m, v, k));
    for (std::size_t k = 0; k < i.length(); ++k) ei.push_back(full_error(m, i, k));
    double total = 0.0;
    for (std::size_t k = 0; k < v.length(); ++k)
        for (std::size_t kk = 0; kk < i.length(); ++kk)
            total += dot(ev[k], ei[kk]) * dot(m.context_of(v, k), m.context_of(i, kk));
    return total;
}

/// Unembedding interaction through contexts the valuation sample shares with
/// training samples: sum_k < W^T e_v(k), sum over training positions in the
/// same context of W^T e_i(k') >. Probabilities are conditioned on the shared
/// (input, prefix) context of each position.
inline double term_II(const ToyModel& m, const ToySample& v, std::span<const ToySample> train) {
    check_sample(m, v);
    double total = 0.0;
    for (std::size_t k = 0; k < v.length(); ++k) {
        const std::size_t slot = v.contexts[k];
        std::vector<double> aliased(m.dim(), 0.0);
        bool any = false;
        for (const auto& s : train) {
            for (std::size_t kk = 0; kk < s.length(); ++kk) {
                if (s.contexts[kk] != slot) continue;
                axpy(1.0, embedding_direction(m, full_error(m, s, kk)), aliased);
                any = true;
            }
        }
        if (any) total += dot(embedding_direction(m, full_error(m, v, k)), aliased);
    }
    return total;
}

/// Gradient dot product <grad ln pi_v, grad ln pi_i> over all parameters.
inline double hessian_free_score(const ToyModel& m, const ToySample& v, const ToySample& i) {
    return inner(log_likelihood_gradient(m, v), log_likelihood_gradient(m, i));
}

/// Embedding-only baseline: <sum_k h_v(k), sum_k h_i(k)>.
inline double emb_score(const SampleRecord& v, const SampleRecord& i) {
    if (v.dim() != i.dim())
        throw data_error("dimension mismatch: " + v.id + " has d=" + std::to_string(v.dim()) + ", " + i.id +
                         " has d=" + std::to_string(i.dim()));
    std::vector<double> sv(v.dim(), 0.0), si(i.dim(), 0.0);
    for (std::size_t k = 0; k < v.length(); ++k) axpy(1.0, v.hidden.row(k), sv);
    for (std::size_t k = 0; k < i.length(); ++k) axpy(1.0, i.hidden.row(k), si);
    return dot(sv, si);
}

/// Metadata attached to exported records.
struct ExportInfo {
    Role role = Role::training;
    std::vector<std::string> class_labels; // empty or one per sample
    std::vector<bool> clean;               // empty or one per sample
};

/// Records whose hidden rows are the toy context embeddings and whose
/// probability rows are the exact softmax restricted to `vocab`; residual
/// mass is the exact probability outside `vocab`.
inline std::vector<SampleRecord> export_records(const ToyModel& m, std::span<const ToySample> samples,
                                                const VocabPtr& vocab, const ExportInfo& info = {}) {
    for (TokenId t : *vocab)
        if (t.value >= m.vocab_size()) throw data_error("export vocabulary exceeds model vocabulary");
    std::vector<bool> inside(m.vocab_size(), false);
    for (TokenId t : *vocab) inside[t.value] = true;

    std::vector<SampleRecord> out;
    out.reserve(samples.size());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const ToySample& s = samples[n];
        check_sample(m, s);
        SampleRecord r;
        r.id = s.id;
        r.role = info.role;
        if (!info.class_labels.empty()) r.class_label = info.class_labels.at(n);
        if (!info.clean.empty()) r.clean = info.clean.at(n);
        r.targets = s.targets;
        r.vocab = vocab;
        r.hidden = Matrix(s.length(), m.dim());
        r.probs = Matrix(s.length(), vocab->size());
        r.residual_mass.assign(s.length(), 0.0);
        for (std::size_t k = 0; k < s.length(); ++k) {
            const auto h = m.context_of(s, k);
            std::copy(h.begin(), h.end(), r.hidden.row(k).begin());
            const auto p = next_token_probs(m, h);
            for (std::size_t z = 0; z < vocab->size(); ++z) r.probs(k, z) = p[(*vocab)[z].value];
            double outside = 0.0;
            for (std::size_t z = 0; z < p.size(); ++z)
                if (!inside[z]) outside += p[z];
            r.residual_mass[k] = outside;
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct ToySizes {
    std::size_t vocab = 20;
    std::size_t dim = 8;
    std::size_t n_train = 12;
    std::size_t n_valuation = 4;
    std::size_t min_len = 2;
    std::size_t max_len = 5;
};

/// A model with its training and valuation samples.
struct ToyInstance {
    ToyModel model;
    std::vector<ToySample> train;
    std::vector<ToySample> valuation;
};

/// Random instance; parameters are N(0, 1/d). With `share_contexts`, about
/// half of the training samples reuse the first positions' contexts (and
/// the targets before them) of a valuation sample, i.e. they share its input
/// and a prefix of its output.
inline ToyInstance random_instance(std::uint64_t seed, const ToySizes& sizes = {}, bool share_contexts = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(sizes.dim)));
    std::uniform_int_distribution<std::size_t> token(0, sizes.vocab - 1);
    std::uniform_int_distribution<std::size_t> length(sizes.min_len, sizes.max_len);

    ToyInstance inst;
    inst.model.unembedding = Matrix(sizes.vocab, sizes.dim);
    for (double& x : inst.model.unembedding.values()) x = normal(rng);

    std::size_t slots = 0;
    auto make = [&](const std::string& id) {
        ToySample s;
        s.id = id;
        const std::size_t T = length(rng);
        for (std::size_t k = 0; k < T; ++k) {
            s.targets.emplace_back(static_cast<std::uint32_t>(token(rng)));
            s.contexts.push_back(slots++);
        }
        return s;
    };
    for (std::size_t a = 0; a < sizes.n_valuation; ++a) inst.valuation.push_back(make("v" + std::to_string(a)));
    for (std::size_t i = 0; i < sizes.n_train; ++i) {
        ToySample s = make("t" + std::to_string(i));
        if (share_contexts && !inst.valuation.empty() && (rng() & 1u)) {
            const ToySample& v = inst.valuation[rng() % inst.valuation.size()];
            // Shares contexts of positions 0..shared-1; targets before the
            // last shared position must agree for the prefixes to coincide.
            const std::size_t shared = 1 + rng() % std::min(v.length(), s.length());
            for (std::size_t k = 0; k < shared; ++k) {
                s.contexts[k] = v.contexts[k];
                if (k + 1 < shared) s.targets[k] = v.targets[k];
            }
        }
        inst.train.push_back(std::move(s));
    }
    inst.model.embeddings = Matrix(slots, sizes.dim);
    for (double& x : inst.model.embeddings.values()) x = normal(rng);
    return inst;
}

/// True when no training position uses a context of a valuation sample.
inline bool contexts_distinct(const ToyInstance& inst) {
    std::vector<bool> used(inst.model.num_contexts(), false);
    for (const auto& v : inst.valuation)
        for (std::size_t c : v.contexts) used[c] = true;
    for (const auto& s : inst.train)
        for (std::size_t c : s.contexts)
            if (used[c]) return false;
    return true;
}

} // namespace forvalue::toy
