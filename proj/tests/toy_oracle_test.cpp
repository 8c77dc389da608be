#include <cmath>

#include <gtest/gtest.h>

#include "forvalue/toy_verify.hpp"
#include "test_util.hpp"

namespace forvalue::toy {
namespace {

// |V| = 2, d = 1, W = [[1], [0]]; one context slot with embedding h.
ToyModel two_token_model(double h, std::size_t slots = 1) {
    ToyModel m;
    m.unembedding = Matrix(2, 1);
    m.unembedding(0, 0) = 1.0;
    m.embeddings = Matrix(slots, 1);
    for (std::size_t s = 0; s < slots; ++s) m.embeddings(s, 0) = h;
    return m;
}

ToySample sample(std::string id, std::vector<std::uint32_t> targets, std::vector<std::size_t> contexts) {
    ToySample s;
    s.id = std::move(id);
    for (auto t : targets) s.targets.emplace_back(t);
    s.contexts = std::move(contexts);
    return s;
}

TEST(ToyModel, LogLikelihoodOfUniformContext) {
    const auto m = two_token_model(0.0);
    EXPECT_DOUBLE_EQ(log_likelihood(m, sample("a", {0}, {0})), std::log(0.5));
    EXPECT_DOUBLE_EQ(log_likelihood(m, sample("a", {0, 1, 1}, {0, 0, 0})), 3 * std::log(0.5));
}

TEST(ToyModel, NextTokenProbsIsSoftmax) {
    const auto m = two_token_model(std::log(3.0));
    const auto p = next_token_probs(m, m.embeddings.row(0));
    EXPECT_NEAR(p[0], 0.75, 1e-15);
    EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(ToyModel, BadSampleIsDataError) {
    const auto m = two_token_model(0.0);
    EXPECT_THROW(log_likelihood(m, sample("a", {2}, {0})), data_error);
    EXPECT_THROW(log_likelihood(m, sample("a", {0}, {3})), data_error);
    EXPECT_THROW(log_likelihood(m, sample("a", {0, 1}, {0})), data_error);
}

TEST(SftGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = random_instance(seed, {}, true);
        EXPECT_LT(gradient_fd_error(inst.model, inst.train), 1e-6);
    }
}

TEST(SftGradient, AliasedContextsAccumulate) {
    // Two samples on one slot: the embedding gradient is the sum of both.
    const auto m = two_token_model(0.3);
    const std::vector<ToySample> both{sample("a", {0}, {0}), sample("b", {1}, {0})};
    const auto g = sft_gradient(m, both);
    const auto ga = log_likelihood_gradient(m, both[0]);
    const auto gb = log_likelihood_gradient(m, both[1]);
    EXPECT_NEAR(g.embeddings(0, 0), -(ga.embeddings(0, 0) + gb.embeddings(0, 0)) / 2.0, 1e-15);
    EXPECT_LT(gradient_fd_error(m, both), 1e-6);
}

TEST(TermII, HandInstanceWithSharedContext) {
    // h = 0 gives pi = (1/2, 1/2). The valuation target is 0 and the training
    // target is 1, so W^T e_v = 1/2 and W^T e_i = -1/2 while every hidden
    // product vanishes.
    const auto m = two_token_model(0.0);
    const auto v = sample("v", {0}, {0});
    const auto t = sample("t", {1}, {0});
    EXPECT_DOUBLE_EQ(term_I(m, v, t), 0.0);
    EXPECT_DOUBLE_EQ(term_II(m, v, std::span<const ToySample>(&t, 1)), -0.25);
    EXPECT_DOUBLE_EQ(hessian_free_score(m, v, t), -0.25);
}

TEST(TermII, ZeroWithoutSharedContexts) {
    const auto m = two_token_model(0.7, 2);
    const auto v = sample("v", {0}, {0});
    const auto t = sample("t", {1}, {1});
    EXPECT_EQ(term_II(m, v, std::span<const ToySample>(&t, 1)), 0.0);
    EXPECT_NEAR(hessian_free_score(m, v, t), term_I(m, v, t), 1e-15);
}

TEST(TermII, DecompositionOnRandomSharedInstances) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = random_instance(seed, {}, true);
        for (const auto& v : inst.valuation)
            for (const auto& t : inst.train) {
                const double sum = term_I(inst.model, v, t) + term_II(inst.model, v, std::span<const ToySample>(&t, 1));
                EXPECT_LT(relative_error(sum, hessian_free_score(inst.model, v, t)), 1e-9);
            }
    }
}

TEST(GradientStep, ZeroRateIsIdentityAndNegativeRateThrows) {
    const auto inst = random_instance(3);
    const auto same = gradient_step(inst.model, inst.train, 0.0);
    EXPECT_EQ(same.unembedding, inst.model.unembedding);
    EXPECT_EQ(same.embeddings, inst.model.embeddings);
    EXPECT_THROW(gradient_step(inst.model, inst.train, -1e-3), data_error);
}

TEST(GradientStep, SmallStepLowersTheLoss) {
    const auto inst = random_instance(4);
    const auto next = gradient_step(inst.model, inst.train, 1e-2);
    EXPECT_LT(sft_loss(next, inst.train), sft_loss(inst.model, inst.train));
}

TEST(FirstOrder, ResidualShrinksQuadratically) {
    const auto inst = random_instance(8, {}, true);
    const double rates[] = {1e-3, 5e-4};
    const auto r = first_order_residuals(inst, inst.valuation[0], rates);
    EXPECT_GT(r[0] / r[1], 3.5);
    EXPECT_LT(r[0] / r[1], 4.5);
}

TEST(EmbScore, SumOfHiddenStates) {
    auto vocab = testing::vocab_of({0, 1});
    auto v = testing::make_record("v", vocab, {0, 1}, {{1, 2}, {3, 4}}, {{0.5, 0.5}, {0.5, 0.5}});
    auto i = testing::make_record("i", vocab, {1}, {{-1, 1}}, {{0.5, 0.5}});
    EXPECT_DOUBLE_EQ(emb_score(v, i), 4 * -1 + 6 * 1);
}

TEST(ExportRecords, ProbabilitiesAndResidualMass) {
    const auto m = two_token_model(std::log(3.0));
    const std::vector<ToySample> samples{sample("a", {0}, {0})};
    const auto full = export_records(m, samples, make_vocab(RestrictedVocab::full(2)));
    EXPECT_NEAR(full[0].probs(0, 0), 0.75, 1e-15);
    EXPECT_EQ(full[0].residual_mass[0], 0.0);
    const auto part = export_records(m, samples, testing::vocab_of({0}), {Role::valuation, {"x"}, {true}});
    EXPECT_NEAR(part[0].residual_mass[0], 0.25, 1e-15);
    EXPECT_EQ(part[0].role, Role::valuation);
    EXPECT_EQ(part[0].class_label, "x");
    EXPECT_EQ(part[0].clean, true);
    EXPECT_TRUE(validate_record(part[0], *part[0].vocab).ok());
    EXPECT_THROW(export_records(m, samples, testing::vocab_of({5})), data_error);
}

TEST(ExportRecords, EngineScoreEqualsTermI) {
    const auto inst = random_instance(12);
    const auto vocab = make_vocab(RestrictedVocab::full(inst.model.vocab_size()));
    const auto v = export_records(inst.model, inst.valuation, vocab);
    const auto t = export_records(inst.model, inst.train, vocab);
    for (std::size_t a = 0; a < v.size(); ++a)
        for (std::size_t b = 0; b < t.size(); ++b)
            EXPECT_LT(relative_error(score_sketch(build_sketch(v[a], vocab), build_sketch(t[b], vocab)),
                                     term_I(inst.model, inst.valuation[a], inst.train[b])),
                      1e-9);
}

TEST(RandomInstance, SharingFlagControlsContexts) {
    EXPECT_TRUE(contexts_distinct(random_instance(1, {}, false)));
    bool any_shared = false;
    for (std::uint64_t s = 0; s < 5; ++s) any_shared |= !contexts_distinct(random_instance(s, {}, true));
    EXPECT_TRUE(any_shared);
}

TEST(ToyVerify, PassesAndNegativeControlFails) {
    VerifyOptions o;
    o.instances = 3;
    o.dynamics_instances = 2;
    const auto ok = toy_verify(o);
    for (const auto& p : ok.properties) EXPECT_TRUE(p.passed) << p.name << " residual " << p.residual;
    o.perturb_sketch = true;
    const auto bad = toy_verify(o);
    EXPECT_FALSE(bad.passed());
    EXPECT_FALSE(bad.find("engine_sketch_score_equals_term_I")->passed);
}

} // namespace
} // namespace forvalue::toy
