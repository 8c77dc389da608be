#pragma once

// Synthetic datasets: random records for throughput and equivalence checks,
// and class-structured toy datasets for identification and mislabel runs.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "forvalue/record.hpp"
#include "forvalue/toy_oracle.hpp"

namespace forvalue::synthetic {

/// Random valid records over `vocab`: hidden ~ N(0, 1), probability rows are
/// normalized random weights with a random residual mass.
inline std::vector<SampleRecord> random_records(std::size_t n, std::size_t min_len, std::size_t max_len, std::size_t dim,
                                                const VocabPtr& vocab, std::uint64_t seed, const std::string& prefix,
                                                Role role = Role::training) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> length(min_len, max_len);
    std::uniform_int_distribution<std::size_t> token(0, vocab->size() - 1);
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        SampleRecord rec;
        rec.id = prefix + std::to_string(r);
        rec.role = role;
        rec.vocab = vocab;
        const std::size_t T = length(rng);
        rec.hidden = Matrix(T, dim);
        for (double& x : rec.hidden.values()) x = normal(rng);
        rec.probs = Matrix(T, vocab->size());
        rec.residual_mass.resize(T);
        for (std::size_t k = 0; k < T; ++k) {
            rec.targets.push_back((*vocab)[token(rng)]);
            const double residual = 0.2 * unit(rng);
            double total = 0.0;
            for (double& p : rec.probs.row(k)) {
                p = -std::log(1.0 - unit(rng));
                total += p;
            }
            for (double& p : rec.probs.row(k)) p *= (1.0 - residual) / total;
            rec.residual_mass[k] = residual;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

/// Every value rounded to the nearest 32-bit float, as the dump format stores it.
inline SampleRecord round_to_float(SampleRecord rec) {
    for (double& x : rec.hidden.values()) x = static_cast<float>(x);
    for (double& x : rec.probs.values()) x = static_cast<float>(x);
    for (double& x : rec.residual_mass) x = static_cast<float>(x);
    return rec;
}

/// Toy instance plus per-sample class metadata.
struct LabeledToyData {
    toy::ToyInstance instance;
    std::vector<std::string> train_labels; // observed (possibly flipped) labels
    std::vector<std::string> valuation_labels;
    std::vector<bool> train_clean;
    std::vector<std::string> train_true_labels;
};

struct ClusterDatasetOptions {
    std::size_t classes = 5;
    std::size_t train_per_class = 10;
    std::size_t valuation_per_class = 2;
    std::size_t motif_tokens = 2;  // tokens owned by each class
    std::size_t shared_tokens = 0; // tokens any class may emit
    double shared_token_rate = 0.0;
    std::size_t dim = 16;
    std::size_t min_len = 2;
    std::size_t max_len = 6;
    double common_scale = 2.0;  // norm of the component shared by every context
    double cluster_scale = 1.0; // norm of each class center
    double noise_scale = 0.5;   // per-coordinate noise is noise_scale / sqrt(dim)
    std::uint64_t seed = 11;
};

inline std::vector<double> random_direction(std::mt19937_64& rng, std::size_t dim, double norm) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    double s = 0.0;
    for (double& x : v) {
        x = normal(rng);
        s += x * x;
    }
    for (double& x : v) x *= norm / std::sqrt(s);
    return v;
}

/// Class = shared embedding cluster + shared target motif. Every context
/// embedding is common + center(class) + noise; targets are drawn from the
/// class's motif tokens, mixed with tokens shared by all classes. Sequence
/// lengths vary so that embedding-only similarity is dominated by length.
inline LabeledToyData cluster_dataset(const ClusterDatasetOptions& o) {
    std::mt19937_64 rng(o.seed);
    const std::size_t vocab = o.classes * o.motif_tokens + o.shared_tokens;
    std::normal_distribution<double> w_init(0.0, 1.0 / std::sqrt(static_cast<double>(o.dim)));
    std::normal_distribution<double> noise(0.0, o.noise_scale / std::sqrt(static_cast<double>(o.dim)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> length(o.min_len, o.max_len);

    LabeledToyData data;
    toy::ToyModel& m = data.instance.model;
    m.unembedding = Matrix(vocab, o.dim);
    for (double& x : m.unembedding.values()) x = w_init(rng);

    const auto common = random_direction(rng, o.dim, o.common_scale);
    std::vector<std::vector<double>> centers;
    for (std::size_t c = 0; c < o.classes; ++c) centers.push_back(random_direction(rng, o.dim, o.cluster_scale));

    std::vector<std::vector<double>> rows;
    auto make = [&](const std::string& id, std::size_t cls) {
        toy::ToySample s;
        s.id = id;
        const std::size_t T = length(rng);
        for (std::size_t k = 0; k < T; ++k) {
            std::size_t tok;
            if (o.shared_tokens > 0 && unit(rng) < o.shared_token_rate)
                tok = o.classes * o.motif_tokens + rng() % o.shared_tokens;
            else
                tok = cls * o.motif_tokens + rng() % o.motif_tokens;
            s.targets.emplace_back(static_cast<std::uint32_t>(tok));
            std::vector<double> h(o.dim);
            for (std::size_t j = 0; j < o.dim; ++j) h[j] = common[j] + centers[cls][j] + noise(rng);
            s.contexts.push_back(rows.size());
            rows.push_back(std::move(h));
        }
        return s;
    };

    for (std::size_t c = 0; c < o.classes; ++c) {
        for (std::size_t i = 0; i < o.train_per_class; ++i) {
            data.instance.train.push_back(make("c" + std::to_string(c) + "_t" + std::to_string(i), c));
            data.train_labels.push_back("class" + std::to_string(c));
            data.train_clean.push_back(true);
        }
        for (std::size_t i = 0; i < o.valuation_per_class; ++i) {
            data.instance.valuation.push_back(make("c" + std::to_string(c) + "_v" + std::to_string(i), c));
            data.valuation_labels.push_back("class" + std::to_string(c));
        }
    }
    data.train_true_labels = data.train_labels;
    m.embeddings = Matrix(rows.size(), o.dim);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.embeddings.row(r).begin());
    return data;
}

struct MislabelDatasetOptions {
    std::size_t train_per_class = 20;
    std::size_t valuation_per_class = 5;
    double flip_fraction = 0.5;
    std::size_t dim = 16;
    double common_scale = 0.5;
    double cluster_scale = 1.5;
    double noise_scale = 0.5;
    std::size_t reference_steps = 30; // gradient steps on the clean references
    double reference_lr = 0.5;
    std::uint64_t seed = 5;
};

/// Two-class question answering toy: every target reads "it is a <label>"
/// (tokens 0 1 2, then 3 for class "cat" or 4 for "dog"). Context embeddings
/// carry the true class of the input. A `flip_fraction` of each class's
/// training labels is flipped; the model is then briefly trained on the
/// clean valuation references only.
inline LabeledToyData mislabel_dataset(const MislabelDatasetOptions& o) {
    std::mt19937_64 rng(o.seed);
    constexpr std::size_t kVocab = 8; // five used tokens plus three never emitted
    const std::string names[2] = {"cat", "dog"};
    std::normal_distribution<double> w_init(0.0, 1.0 / std::sqrt(static_cast<double>(o.dim)));
    std::normal_distribution<double> noise(0.0, o.noise_scale / std::sqrt(static_cast<double>(o.dim)));

    LabeledToyData data;
    toy::ToyModel& m = data.instance.model;
    m.unembedding = Matrix(kVocab, o.dim);
    for (double& x : m.unembedding.values()) x = w_init(rng);

    const auto common = random_direction(rng, o.dim, o.common_scale);
    std::vector<std::vector<double>> centers{random_direction(rng, o.dim, o.cluster_scale),
                                             random_direction(rng, o.dim, o.cluster_scale)};
    std::vector<std::vector<double>> position(4);
    for (auto& p : position) p = random_direction(rng, o.dim, 0.5);

    std::vector<std::vector<double>> rows;
    auto make = [&](const std::string& id, std::size_t true_class, std::size_t label) {
        toy::ToySample s;
        s.id = id;
        const std::uint32_t targets[4] = {0, 1, 2, static_cast<std::uint32_t>(3 + label)};
        for (std::size_t k = 0; k < 4; ++k) {
            s.targets.emplace_back(targets[k]);
            std::vector<double> h(o.dim);
            for (std::size_t j = 0; j < o.dim; ++j)
                h[j] = common[j] + position[k][j] + centers[true_class][j] + noise(rng);
            s.contexts.push_back(rows.size());
            rows.push_back(std::move(h));
        }
        return s;
    };

    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<std::size_t> idx(o.train_per_class);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_flip = static_cast<std::size_t>(std::llround(o.flip_fraction * static_cast<double>(idx.size())));
        std::vector<bool> flipped(idx.size(), false);
        for (std::size_t f = 0; f < n_flip; ++f) flipped[idx[f]] = true;
        for (std::size_t i = 0; i < o.train_per_class; ++i) {
            const std::size_t label = flipped[i] ? 1 - c : c;
            data.instance.train.push_back(make(names[c] + "_t" + std::to_string(i), c, label));
            data.train_labels.push_back(names[label]);
            data.train_true_labels.push_back(names[c]);
            data.train_clean.push_back(!flipped[i]);
        }
        for (std::size_t i = 0; i < o.valuation_per_class; ++i) {
            data.instance.valuation.push_back(make(names[c] + "_v" + std::to_string(i), c, c));
            data.valuation_labels.push_back(names[c]);
        }
    }
    m.embeddings = Matrix(rows.size(), o.dim);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.embeddings.row(r).begin());

    for (std::size_t step = 0; step < o.reference_steps; ++step)
        m = toy::gradient_step(m, data.instance.valuation, o.reference_lr);
    return data;
}

/// Smallest vocabulary holding every target of the instance.
inline VocabPtr target_vocab(const toy::ToyInstance& inst) {
    std::vector<TokenId> t;
    for (const auto& s : inst.train) t.insert(t.end(), s.targets.begin(), s.targets.end());
    for (const auto& s : inst.valuation) t.insert(t.end(), s.targets.begin(), s.targets.end());
    return make_vocab(RestrictedVocab::from_tokens(std::move(t)));
}

} // namespace forvalue::synthetic
