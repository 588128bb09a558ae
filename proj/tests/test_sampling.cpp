#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "ecoc/gradcheck.hpp"
#include "ecoc/input_policy.hpp"
#include "ecoc/sampling.hpp"
#include "toy_model.hpp"

using namespace ecoc;
using nn::Tape;
using nn::Var;

TEST(Schedule, Endpoints) {
    MixtureSchedule s{0.8, 2.0, 40, BitProfile::uniform};
    EXPECT_NEAR(schedule_value(s, 20), 0.4, 1e-15);
    EXPECT_LT(schedule_value(s, 0), 0.8 * 1e-4);
    MixtureSchedule one{1.0, 2.0, 40, BitProfile::uniform};
    EXPECT_GT(schedule_value(one, 40), 0.9999);
    EXPECT_DOUBLE_EQ(schedule_value(one, -5), schedule_value(one, 0));
}

TEST(Schedule, MonotoneOnGrid) {
    for (double tau : {0.1, 0.25, 1.0})
        for (double delta : {0.0, 0.5, 3.0, 50.0})
            for (std::size_t n : {1u, 10u, 40u}) {
                MixtureSchedule s{tau, delta, n, BitProfile::uniform};
                double prev = -1.0;
                for (int i = 0; i <= 100; ++i) {
                    double v = schedule_value(s, n * i / 100.0);
                    EXPECT_GE(v, prev);
                    prev = v;
                }
            }
}

TEST(Anneal, EndpointsAndMidpoint) {
    EXPECT_NEAR(anneal_temperature(0, 40), 0.01, 0.01);
    EXPECT_LE(anneal_temperature(0, 40), 0.02);
    EXPECT_NEAR(anneal_temperature(40, 40), 2.5, 0.01);
    EXPECT_GE(anneal_temperature(40, 40), 2.45);
    EXPECT_NEAR(anneal_temperature(20, 40), (0.01 + 2.5) / 2, 1e-12);
    double prev = 0.0;
    for (int e = 0; e <= 40; ++e) {
        EXPECT_GE(anneal_temperature(e, 40), prev);
        prev = anneal_temperature(e, 40);
    }
}

TEST(BitProfile, SignificanceRamp) {
    auto p = per_bit_probabilities(0.4, 5, BitProfile::significance_ramp);
    EXPECT_DOUBLE_EQ(p.front(), 0.2);
    EXPECT_DOUBLE_EQ(p.back(), 0.4);
    for (double x : per_bit_probabilities(0.4, 5, BitProfile::uniform)) EXPECT_DOUBLE_EQ(x, 0.4);
}

TEST(MixBits, Extremes) {
    Rng rng(1);
    auto pred = Codeword::from_string("1100110011");
    auto tgt = Codeword::from_string("0011001100");
    std::vector<double> zeros(10, 0.0), ones(10, 1.0);
    EXPECT_EQ(mix_codeword_bits(pred, tgt, zeros, rng), tgt);
    EXPECT_EQ(mix_codeword_bits(pred, tgt, ones, rng), pred);
    EXPECT_THROW(mix_codeword_bits(pred, Codeword::from_string("0"), zeros, rng), ConfigError);
}

TEST(MixBits, HalfProbabilityMonteCarlo) {
    Rng rng(2);
    auto pred = Codeword::from_string("1111111111");
    auto tgt = Codeword::from_string("0000000000");
    std::vector<double> half(10, 0.5);
    double total = 0.0;
    for (int i = 0; i < 10000; ++i) total += static_cast<double>(hamming(mix_codeword_bits(pred, tgt, half, rng), tgt));
    EXPECT_NEAR(total / 10000, 5.0, 0.2);
}

TEST(Gumbel, Examples) {
    std::vector<double> eq{0.3, 0.3, 0.3}, u{0.4, 0.4, 0.4};
    for (double y : gumbel_softmax_sample(eq, 0.7, u)) EXPECT_NEAR(y, 1.0 / 3, 1e-15);
    std::vector<double> l{1.0, 0.0}, h{0.5, 0.5};
    auto y = gumbel_softmax_sample(l, 1.0, h);
    EXPECT_NEAR(y[0], 0.7310585786, 1e-9);
    EXPECT_NEAR(y[1], 0.2689414214, 1e-9);
    Rng rng(3);
    std::vector<double> l3{3, 0, 0};
    double mass = 0.0;
    for (int i = 0; i < 10000; ++i) mass += gumbel_softmax_sample(l3, 0.05, rng)[0];
    EXPECT_GT(mass / 10000, 0.9);
}

TEST(Gumbel, ArgmaxFrequenciesMatchSoftmax) {
    Rng rng(4);
    std::vector<double> l{0.5, -0.3, 1.1};
    auto p = softmax_weights(l);
    std::vector<double> freq(3, 0.0);
    for (int i = 0; i < 10000; ++i) {
        auto y = gumbel_softmax_sample(l, 0.05, rng);
        freq[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())] += 1e-4;
    }
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(freq[k], p[k], 0.02);
}

TEST(BinaryConcrete, Examples) {
    EXPECT_DOUBLE_EQ(binary_concrete_sample(0.0, 0.3, 0.5), 0.5);
    EXPECT_NEAR(binary_concrete_sample(0.7, 0.7, 0.5), 0.7310585786, 1e-9);
    Rng rng(5);
    int above = 0;
    for (int i = 0; i < 10000; ++i) above += binary_concrete_sample(2.0, 0.5, rng) > 0.5;
    EXPECT_NEAR(above / 10000.0, 0.8807970780, 0.01);
    EXPECT_THROW(binary_concrete_sample(0.0, 0.0, 0.5), ConfigError);
}

TEST(SoftEmbedding, SingleCandidateAndSharpTemperature) {
    auto cb = toy::codebook();
    std::vector<double> table(toy::kVocab * 3);
    for (std::size_t i = 0; i < table.size(); ++i) table[i] = static_cast<double>(i);
    std::vector<double> p{0.9, 0.1, 0.8, 0.45, 0.2, 0.7};
    auto one = soft_codeword_embedding(p, cb, table, 3, 1, 1.0);
    ASSERT_EQ(one.tokens.size(), 1u);
    // least confident bit (index 3) flipped
    EXPECT_EQ(one.tokens[0], cb.decode(cb.threshold(p).with_flipped(3)));
    for (std::size_t d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(one.vector[d], table[one.tokens[0] * 3 + d]);

    auto sharp = soft_codeword_embedding(p, cb, table, 3, 4, 0.01);
    EXPECT_NEAR(std::accumulate(sharp.weights.begin(), sharp.weights.end(), 0.0), 1.0, 1e-12);
    EXPECT_GT(*std::max_element(sharp.weights.begin(), sharp.weights.end()), 0.999);
    EXPECT_THROW(soft_codeword_embedding(p, cb, table, 3, 7, 1.0), ConfigError);
}

TEST(SoftEmbedding, SameTokenCandidatesReturnThatEmbedding) {
    // the heavy token owns [0, 10); flipping the three low bits of 0111 stays inside
    std::vector<double> w{1, 1, 1, 5};
    auto cb = build_codebook(4, 4, {OrderingKind::unigram, 0}, w, MappingMode::binary, 0);
    std::vector<double> table{0, 0, 1, 1, 2, 2, 3, 3};
    std::vector<double> p{0.05, 0.6, 0.55, 0.52};
    const std::size_t tok = cb.decode_probs(p);
    auto r = soft_codeword_embedding(p, cb, table, 2, 3, 0.3);
    for (auto t : r.tokens) EXPECT_EQ(t, tok);
    EXPECT_NEAR(r.vector[0], table[tok * 2], 1e-12);
}

namespace {

struct Fixture {
    Codebook cb = toy::codebook();
    LanguageModel model;
    SamplerConfig sampler;
    explicit Fixture(HeadKind head, Strategy s) : model(toy::config(head), 21) {
        sampler.strategy = s;
        sampler.k = 3;
        sampler.seed = 8;
    }

    InputRequest request(double schedule, double temp) const {
        InputRequest r;
        r.model = &model;
        r.codebook = &cb;
        r.sampler = &sampler;
        r.schedule = schedule;
        r.temperature = temp;
        return r;
    }
};

// Two steps: gold input, then a relaxed input built from step-1 outputs.
Var relaxed_loss(Tape& t, const Fixture& f, const InputRequest& req) {
    const LanguageModel& m = f.model;
    const Codebook* cb = m.config().head == HeadKind::ecoc ? &f.cb : nullptr;
    auto st = m.load_state(t, m.zero_state(2));
    auto out1 = m.decode(t, m.encode_step(t, m.embed(t, toy::inputs()[0]), st, nullptr));
    Var l1 = m.loss(t, out1, toy::targets()[0], cb);
    InputBuilder b(req);
    Var x2 = b.build(t, &out1, toy::targets()[0]);
    auto out2 = m.decode(t, m.encode_step(t, x2, st, nullptr));
    return t.add(l1, m.loss(t, out2, toy::targets()[1], cb));
}

}  // namespace

TEST(RelaxedInput, BinaryConcreteGradientCheck) {
    Fixture f(HeadKind::ecoc, Strategy::binary_concrete);
    RelaxationNoise noise;
    noise.uniforms = nn::Matrix(2, toy::kBits);
    Rng rng(6);
    for (double& u : noise.uniforms.values()) u = rng.uniform();
    std::vector<bool> all{true, true};
    auto req = f.request(1.0, 1.0);
    req.noise = &noise;
    req.force_relaxed = &all;
    auto r = nn::finite_difference_check(f.model.params(), [&](Tape& t) { return relaxed_loss(t, f, req); }, 80, 2);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter << " a=" << r.worst_analytic << " n=" << r.worst_numeric;
}

TEST(RelaxedInput, GumbelGradientCheck) {
    Fixture f(HeadKind::hierarchical, Strategy::gumbel_softmax);
    const auto& tree = f.model.tree();
    RelaxationNoise noise;
    noise.uniforms = nn::Matrix(2, tree.clusters);
    noise.leaf_uniforms = nn::Matrix(2, 2 * tree.branching);
    Rng rng(7);
    for (double& u : noise.uniforms.values()) u = rng.uniform();
    for (double& u : noise.leaf_uniforms.values()) u = rng.uniform();
    std::vector<bool> all{true, true};
    auto req = f.request(1.0, 1.0);
    req.noise = &noise;
    req.force_relaxed = &all;
    auto r = nn::finite_difference_check(f.model.params(), [&](Tape& t) { return relaxed_loss(t, f, req); }, 80, 3);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter << " a=" << r.worst_analytic << " n=" << r.worst_numeric;
}

TEST(RelaxedInput, InputDependsOnModelOutputs) {
    Fixture f(HeadKind::ecoc, Strategy::binary_concrete);
    std::vector<bool> all{true, true};
    auto req = f.request(1.0, 1.0);
    req.force_relaxed = &all;
    Tape t;
    auto st = f.model.load_state(t, f.model.zero_state(2));
    auto out = f.model.decode(t, f.model.encode_step(t, f.model.embed(t, toy::inputs()[0]), st, nullptr));
    InputBuilder b(req);
    Var x = b.build(t, &out, toy::targets()[0]);
    t.backward(t.sum(x));
    double g = 0.0;
    for (double v : f.model.head_weight().grad().values()) g += std::abs(v);
    EXPECT_GT(g, 0.0);
}

TEST(StrategyHead, MismatchesAreConfigErrors) {
    EXPECT_THROW(check_strategy_head(Strategy::gumbel_softmax, HeadKind::ecoc), ConfigError);
    EXPECT_THROW(check_strategy_head(Strategy::binary_concrete, HeadKind::hierarchical), ConfigError);
    EXPECT_THROW(check_strategy_head(Strategy::soft_mixture, HeadKind::softmax), ConfigError);
    EXPECT_THROW(check_strategy_head(Strategy::clvms, HeadKind::softmax), ConfigError);
    EXPECT_NO_THROW(check_strategy_head(Strategy::clvms, HeadKind::hierarchical));
    EXPECT_NO_THROW(check_strategy_head(Strategy::scheduled_sampling, HeadKind::softmax));
}

class ZeroSchedule : public ::testing::TestWithParam<std::pair<HeadKind, Strategy>> {};

TEST_P(ZeroSchedule, InputEqualsGoldEmbedding) {
    auto [head, strategy] = GetParam();
    Fixture f(head, strategy);
    Tape t;
    auto st = f.model.load_state(t, f.model.zero_state(2));
    auto out = f.model.decode(t, f.model.encode_step(t, f.model.embed(t, toy::inputs()[0]), st, nullptr));
    InputBuilder b(f.request(0.0, 0.01));
    ExposureStats stats;
    Var x = b.build(t, &out, toy::targets()[0], &stats);
    EXPECT_EQ(x.value(), f.model.embed(t, toy::targets()[0]).value());
    EXPECT_EQ(stats.units_from_model, 0.0);
}

INSTANTIATE_TEST_SUITE_P(
    AllStrategies, ZeroSchedule,
    ::testing::Values(std::pair{HeadKind::ecoc, Strategy::teacher_forcing}, std::pair{HeadKind::softmax, Strategy::scheduled_sampling},
                      std::pair{HeadKind::ecoc, Strategy::clvms}, std::pair{HeadKind::hierarchical, Strategy::clvms},
                      std::pair{HeadKind::ecoc, Strategy::soft_mixture}, std::pair{HeadKind::ecoc, Strategy::binary_concrete},
                      std::pair{HeadKind::hierarchical, Strategy::gumbel_softmax}));

TEST(Clvms, SaturatedScheduleUsesOwnPrediction) {
    Fixture f(HeadKind::ecoc, Strategy::clvms);
    Tape t;
    auto st = f.model.load_state(t, f.model.zero_state(2));
    auto out = f.model.decode(t, f.model.encode_step(t, f.model.embed(t, toy::inputs()[0]), st, nullptr));
    InputBuilder b(f.request(1.0, 1.0));
    ExposureStats stats;
    Var x = b.build(t, &out, toy::targets()[0], &stats);
    std::vector<std::size_t> pred{f.model.greedy_token(out, 0, &f.cb), f.model.greedy_token(out, 1, &f.cb)};
    EXPECT_EQ(x.value(), f.model.embed(t, pred).value());
    EXPECT_DOUBLE_EQ(stats.exposure(), 1.0);
}

TEST(NextInput, TeacherForcingIsTheTargetRow) {
    Fixture f(HeadKind::ecoc, Strategy::teacher_forcing);
    auto v = next_input(f.request(0.5, 1.0), nullptr, 5);
    auto row = f.model.embedding().value().row(5);
    EXPECT_EQ(v, std::vector<double>(row.begin(), row.end()));
}
