#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mmtsvit/fusion.hpp"
#include "test_support.hpp"

using namespace mmtsvit;
using mmtsvit::test::random_labels;
using mmtsvit::test::random_sample;
using mmtsvit::test::random_tensor;
using mmtsvit::test::tiny_config;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

/// Random weights everywhere, including the zero-initialized biases.
template <typename P>
void randomize(P& p, Rng& rng, double amplitude = 0.3) {
    for (auto& [name, t] : p.named_parameters())
        for (auto& v : t.mutable_data()) v = rng.uniform(-amplitude, amplitude);
}

void expect_simplex(const Tensor& y) {
    const std::size_t k = y.shape()[2];
    for (std::size_t p = 0; p < y.numel() / k; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            EXPECT_GE(y.data()[p * k + c], 0.0);
            s += y.data()[p * k + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

struct SmFixture {
    ModelConfig cfg = tiny_config();
    Rng rng{11};
    TSViTParams single;
    SITSSample sample;

    SmFixture() {
        single = TSViTParams::init(cfg, 3, rng);
        randomize(single, rng);
        sample = random_sample("s2", 4, 4, 4, 3, rng);
    }
    Tensor sm() const { return sm_tsvit_forward(sample.x, sample.dates, single); }
};

MMParams random_mm(FusionMode mode, const std::vector<std::size_t>& channels, std::uint64_t seed) {
    Rng rng(seed);
    MMParams p = MMParams::init(mode, tiny_config(), channels, rng);
    randomize(p, rng);
    return p;
}

std::vector<SITSSample> random_samples(const std::vector<std::size_t>& channels, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SITSSample> out;
    for (std::size_t j = 0; j < channels.size(); ++j)
        out.push_back(random_sample("m" + std::to_string(j), 4, 4, 4, channels[j], rng));
    return out;
}

}  // namespace

TEST(FusionMode, ParseRoundTrip) {
    for (auto m : {FusionMode::SM, FusionMode::EF, FusionMode::SCTF, FusionMode::CAF})
        EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
    EXPECT_THROW(parse_fusion_mode("LATE"), ConfigError);
}

TEST(EarlyFusion, SingleModalityIsUnchanged) {
    Rng rng(1);
    const auto s = random_sample("a", 3, 2, 2, 2, rng);
    const auto out = early_fusion_concat({s});
    EXPECT_TRUE(bit_equal(out.x, s.x));
    EXPECT_EQ(out.dates, s.dates);
}

TEST(EarlyFusion, ChannelSumAndIndexing) {
    Rng rng(2);
    std::vector<SITSSample> s{random_sample("s1", 3, 2, 2, 2, rng), random_sample("s2", 3, 2, 2, 10, rng),
                              random_sample("pf", 3, 2, 2, 4, rng)};
    const auto out = early_fusion_concat(s);
    ASSERT_EQ(out.x.shape(), (Shape{3, 2, 2, 16}));
    EXPECT_EQ(out.dates, s[0].dates);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 2; ++x)
                for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(out.x.at({t, y, x, 2 + c}), s[1].x.at({t, y, x, c}));
}

TEST(EarlyFusion, ExtentMismatchNamesModalityAndAxis) {
    Rng rng(3);
    std::vector<SITSSample> s{random_sample("s1", 3, 4, 4, 2, rng), random_sample("pf", 3, 4, 8, 2, rng)};
    try {
        early_fusion_concat(s);
        FAIL() << "expected FusionError";
    } catch (const FusionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("pf"), std::string::npos) << msg;
        EXPECT_NE(msg.find("W"), std::string::npos) << msg;
    }
}

TEST(EarlyFusion, DateMismatchIsDataError) {
    Rng rng(4);
    std::vector<SITSSample> s{random_sample("s1", 3, 2, 2, 2, rng), random_sample("s2", 3, 2, 2, 2, rng, 11)};
    EXPECT_THROW(early_fusion_concat(s), DataError);
}

TEST(SctfSync, ArithmeticMean) {
    const Tensor a({1, 1, 2}, {1, 3});
    const Tensor b({1, 1, 2}, {3, 5});
    const Tensor m = sctf_sync({a, b});
    EXPECT_EQ(m.values(), (std::vector<double>{2, 4}));
    EXPECT_TRUE(bit_equal(sctf_sync({a}), a));
}

TEST(SctfSync, MatchesScalarLoopOracle) {
    Rng rng(5);
    std::vector<Tensor> tokens;
    for (int j = 0; j < 3; ++j) tokens.push_back(random_tensor({4, 3, 8}, rng));
    const Tensor m = sctf_sync(tokens);
    for (std::size_t i = 0; i < m.numel(); ++i) {
        double s = 0.0;
        for (const auto& t : tokens) s += t.data()[i];
        EXPECT_NEAR(m.data()[i], s / 3.0, 1e-12);
    }
    const Tensor permuted = sctf_sync({tokens[2], tokens[0], tokens[1]});
    EXPECT_LE(max_abs_diff(m, permuted), 1e-12);
}

TEST(SctfSync, ShapeMismatchIsFusionError) {
    EXPECT_THROW(sctf_sync({Tensor::zeros({2, 3, 4}), Tensor::zeros({2, 3, 5})}), FusionError);
}

TEST(Reduction, EarlyFusionSingleModalityIsBitExactSm) {
    SmFixture f;
    const MMParams mm = MMParams::from_single(FusionMode::EF, f.single, 1);
    EXPECT_TRUE(bit_equal(mm_forward({f.sample}, mm), f.sm()));
}

TEST(Reduction, SctfSingleModalityIsBitExactSm) {
    SmFixture f;
    const MMParams mm = MMParams::from_single(FusionMode::SCTF, f.single, 1);
    EXPECT_TRUE(bit_equal(mm_forward({f.sample}, mm), f.sm()));
}

TEST(Reduction, SctfClonedPairIsBitExactSm) {
    SmFixture f;
    const MMParams mm = MMParams::from_single(FusionMode::SCTF, f.single, 2);
    EXPECT_TRUE(bit_equal(mm_forward({f.sample, f.sample}, mm), f.sm()));
}

TEST(Reduction, CafClonedPairMatchesSm) {
    SmFixture f;
    const MMParams mm = MMParams::from_single(FusionMode::CAF, f.single, 2);
    EXPECT_LE(max_abs_diff(mm_forward({f.sample, f.sample}, mm), f.sm()), 1e-10);
}

TEST(Reduction, ClonesAreIndependentStorage) {
    SmFixture f;
    MMParams mm = MMParams::from_single(FusionMode::SCTF, f.single, 2);
    mm.branches[1].projection.weight.mutable_data()[0] += 1.0;
    EXPECT_NE(mm.branches[0].projection.weight.data()[0], mm.branches[1].projection.weight.data()[0]);
    EXPECT_NE(f.single.branch.projection.weight.data()[0], mm.branches[1].projection.weight.data()[0]);
}

TEST(Permutation, SctfAndCafInvariantToModalityOrder) {
    const std::vector<std::size_t> channels{2, 3, 4};
    const auto samples = random_samples(channels, 21);
    for (auto mode : {FusionMode::SCTF, FusionMode::CAF}) {
        const MMParams p = random_mm(mode, channels, 22);
        const Tensor ref = mm_forward(samples, p);
        const std::vector<std::size_t> order{2, 0, 1};
        MMParams q = p;
        std::vector<SITSSample> permuted;
        for (std::size_t j = 0; j < order.size(); ++j) {
            q.branches[j] = p.branches[order[j]];
            permuted.push_back(samples[order[j]]);
        }
        EXPECT_LE(max_abs_diff(mm_forward(permuted, q), ref), 1e-10) << to_string(mode);
    }
}

TEST(Modes, ShapesSimplexAndPairwiseDifferences) {
    const std::vector<std::size_t> channels{2, 3};
    const auto samples = random_samples(channels, 31);
    std::vector<Tensor> outs;
    for (auto mode : {FusionMode::EF, FusionMode::SCTF, FusionMode::CAF}) {
        outs.push_back(mm_forward(samples, random_mm(mode, channels, 32 + static_cast<int>(mode))));
        EXPECT_EQ(outs.back().shape(), (Shape{4, 4, 3}));
        expect_simplex(outs.back());
    }
    for (std::size_t a = 0; a < outs.size(); ++a)
        for (std::size_t b = a + 1; b < outs.size(); ++b) EXPECT_GT(max_abs_diff(outs[a], outs[b]), 0.0);
}

TEST(Modes, SameWeightsDifferentModesDiffer) {
    // SCTF and CAF share a parameter layout, so the architectural difference is isolated here.
    const std::vector<std::size_t> channels{2, 3};
    const auto samples = random_samples(channels, 41);
    const MMParams p = random_mm(FusionMode::SCTF, channels, 42);
    EXPECT_GT(max_abs_diff(mm_forward(FusionMode::SCTF, samples, p), mm_forward(FusionMode::CAF, samples, p)), 1e-6);
}

TEST(Modes, PreconditionErrors) {
    const auto one = random_samples({3}, 51);
    EXPECT_THROW(random_mm(FusionMode::CAF, {3}, 52), ConfigError);
    const MMParams sctf1 = random_mm(FusionMode::SCTF, {3}, 53);
    EXPECT_THROW(mm_forward(FusionMode::CAF, one, sctf1), ConfigError);
    EXPECT_THROW(random_mm(FusionMode::SM, {2, 3}, 54), ConfigError);
    const MMParams sctf2 = random_mm(FusionMode::SCTF, {2, 3}, 55);
    EXPECT_THROW(mm_forward(one, sctf2), FusionError);

    auto two = random_samples({2, 3}, 56);
    Rng rng(57);
    two[1] = random_sample("m1", 6, 4, 4, 3, rng);
    EXPECT_THROW(mm_forward(two, sctf2), FusionError);
}

TEST(Sctf, PreLayerSyncFlagChangesOutput) {
    const std::vector<std::size_t> channels{2, 3};
    const auto samples = random_samples(channels, 61);
    MMParams p = random_mm(FusionMode::SCTF, channels, 62);
    const Tensor with = mm_forward(samples, p);
    p.sync_before_first_layer = false;
    EXPECT_GT(max_abs_diff(with, mm_forward(samples, p)), 0.0);
}

namespace {

void check_gradients(FusionMode mode, const std::vector<std::size_t>& channels) {
    const auto samples = random_samples(channels, 71);
    MMParams p = random_mm(mode, channels, 72);
    Rng rng(73);
    const LabelMap labels = random_labels(4, 4, 3, rng);
    auto loss = [&] { return cross_entropy_loss(mm_forward(samples, p), labels); };
    const auto report = grad_check(loss, p.named_parameters());
    for (const auto& e : report.entries) EXPECT_LT(e.relative_error, 1e-4) << to_string(mode) << " " << e.name;

    // Every branch tensor must receive signal.
    active_tape().clear();
    for (auto& [name, t] : p.named_parameters()) t.clear_grad();
    backward(loss());
    for (const auto& [name, t] : p.named_parameters()) {
        if (name.rfind("branch", 0) != 0) continue;
        ASSERT_TRUE(t.has_grad()) << name;
        double n = 0.0;
        for (double g : t.grad()) n += g * g;
        EXPECT_GT(n, 0.0) << to_string(mode) << " " << name;
    }
}

}  // namespace

TEST(FusionGradients, EarlyFusionPair) { check_gradients(FusionMode::EF, {2, 3}); }
TEST(FusionGradients, SctfPair) { check_gradients(FusionMode::SCTF, {2, 3}); }
TEST(FusionGradients, CafTriple) { check_gradients(FusionMode::CAF, {2, 3, 2}); }
