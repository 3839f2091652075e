#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mmtsvit/synthetic.hpp"
#include "mmtsvit/train.hpp"
#include "test_support.hpp"

using namespace mmtsvit;
using mmtsvit::test::random_tensor;
using mmtsvit::test::tiny_config;

namespace fs = std::filesystem;

namespace {

void set_grad(Tensor t, const std::vector<double>& g) {
    auto dst = t.mutable_grad();
    std::copy(g.begin(), g.end(), dst.begin());
}

LabelMap labels_of(std::vector<std::uint16_t> classes, std::size_t h, std::size_t w) {
    return {h, w, std::move(classes)};
}

/// Small co-registered data prepared the same way the CLI prepares it.
struct SmallData {
    DatasetManifest man;
    std::vector<CoRegisteredSet> train, val;

    explicit SmallData(std::uint64_t seed, std::size_t samples = 8) {
        SyntheticConfig cfg;
        cfg.seed = seed;
        cfg.samples = samples;
        cfg.fine_size = 6;
        cfg.time_steps = 4;
        cfg.val_fraction = 0.25;
        cfg.test_fraction = 0.0;
        cfg.modalities = default_modalities(2, 6);
        man = synthetic_manifest(cfg);
        const auto sets = generate_sets(cfg);
        for (std::size_t i = 0; i < sets.size(); ++i) {
            auto prepared = prepare_set(sets[i], man, man.modality_ids());
            (man.samples[i].split == "train" ? train : val).push_back(std::move(prepared));
        }
    }
};

RunConfig small_run(FusionMode mode) {
    RunConfig c;
    c.mode = mode;
    c.model = tiny_config();
    c.optim.lr = 1e-3;
    c.epochs = 3;
    c.batch_size = 2;
    c.seed = 5;
    return c;
}

std::vector<std::string> modalities_for(FusionMode mode) {
    return mode == FusionMode::SM ? std::vector<std::string>{"pf"} : std::vector<std::string>{"s2", "pf"};
}

std::vector<CoRegisteredSet> select(const std::vector<CoRegisteredSet>& sets, FusionMode mode) {
    if (mode != FusionMode::SM) return sets;
    std::vector<CoRegisteredSet> out = sets;
    for (auto& s : out) s.samples = {s.samples[1]};
    return out;
}

}  // namespace

TEST(CrossEntropy, UniformGivesLogK) {
    const Tensor p = Tensor::full({2, 3, 4}, 0.25);
    EXPECT_NEAR(cross_entropy_loss(p, labels_of({0, 1, 2, 3, 0, 1}, 2, 3)).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, HandEvaluatedPair) {
    const Tensor p({1, 2, 2}, {0.5, 0.5, 0.75, 0.25});
    EXPECT_NEAR(cross_entropy_loss(p, labels_of({0, 1}, 1, 2)).item(), (std::log(2.0) + std::log(4.0)) / 2.0, 1e-15);
}

TEST(CrossEntropy, PerfectPredictionAndClamp) {
    const Tensor p({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    EXPECT_EQ(cross_entropy_loss(p, labels_of({0, 1}, 1, 2)).item(), 0.0);
    EXPECT_NEAR(cross_entropy_loss(p, labels_of({1, 1}, 1, 2)).item(), -std::log(1e-12) / 2.0, 1e-9);
}

TEST(CrossEntropy, IgnoreSetAndAllIgnored) {
    const Tensor p({1, 2, 2}, {0.5, 0.5, 0.75, 0.25});
    EXPECT_NEAR(cross_entropy_loss(p, labels_of({0, 1}, 1, 2), {0}).item(), std::log(4.0), 1e-15);
    EXPECT_THROW(cross_entropy_loss(p, labels_of({0, 0}, 1, 2), {0}), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    Rng rng(1);
    Tensor logits = random_tensor({2, 2, 3}, rng);
    const LabelMap l = labels_of({0, 2, 1, 1}, 2, 2);
    const auto r = grad_check([&] { return cross_entropy_loss(softmax_lastdim(logits), l, {2}); }, {{"logits", logits}});
    EXPECT_TRUE(r.passed()) << r.worst()->relative_error;
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    Tensor p({4}, {0.0, 1.0, -2.0, 3.0}, true);
    set_grad(p, {0.5, -3.0, 0.1, -1e3});
    Adam adam;
    adam.step({{"p", p}});
    const std::vector<double> expect{-1e-4, 1.0 + 1e-4, -2.0 - 1e-4, 3.0 + 1e-4};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.data()[i], expect[i], 1e-6 * 1e-4);
}

TEST(Adam, ZeroGradientsLeaveParameters) {
    Tensor p({3}, {0.1, 0.2, 0.3}, true);
    set_grad(p, {0.0, 0.0, 0.0});
    Adam adam;
    for (int i = 0; i < 3; ++i) adam.step({{"p", p}});
    EXPECT_EQ(p.values(), (std::vector<double>{0.1, 0.2, 0.3}));
}

TEST(Adam, ScalarQuadraticRecurrence) {
    // f(x) = (x - 3)^2, three steps, against a hand-rolled recurrence.
    const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    Tensor x({}, {0.0}, true);
    Adam adam(cfg);
    double xr = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        set_grad(x, {2.0 * (x.item() - 3.0)});
        adam.step({{"x", x}});
        const double g = 2.0 * (xr - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        xr -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(x.item(), xr, 1e-12);
    }
}

TEST(Adam, MissingGradientIsContractError) {
    Tensor p({2}, {1.0, 2.0}, true);
    Adam adam;
    EXPECT_THROW(adam.step({{"p", p}}), ContractError);
}

TEST(Metrics, WorkedConfusionMatrix) {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 2);
    cm.add(0, 1, 1);
    cm.add(1, 0, 1);
    cm.add(1, 1, 2);
    const Metrics m = cm.metrics();
    EXPECT_EQ(m.oa, 4.0 / 6.0);
    EXPECT_EQ(m.ma, 2.0 / 3.0);
    EXPECT_EQ(m.miou, 0.5);
}

TEST(Metrics, PerfectPrediction) {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 5);
    cm.add(1, 1, 2);
    cm.add(2, 2, 7);
    const Metrics m = cm.metrics();
    EXPECT_EQ(m.oa, 1.0);
    EXPECT_EQ(m.ma, 1.0);
    EXPECT_EQ(m.miou, 1.0);
}

TEST(Metrics, AllOneClassOnBalancedPair) {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 10);
    cm.add(1, 0, 10);
    const Metrics m = cm.metrics();
    EXPECT_EQ(m.oa, 0.5);
    EXPECT_EQ(m.ma, 0.5);
    EXPECT_EQ(m.miou, 0.25);
}

TEST(Metrics, AbsentClassesAreSkipped) {
    ConfusionMatrix cm(4);
    cm.add(1, 1, 3);
    cm.add(1, 2, 1);
    const Metrics m = cm.metrics();
    EXPECT_FALSE(m.per_class[0].present);
    EXPECT_EQ(m.ma, 0.75);
    EXPECT_EQ(m.miou, 0.75);
    EXPECT_THROW(ConfusionMatrix(2).metrics(), ContractError);
}

TEST(Metrics, BruteForceAgreementOnRandomPairs) {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.index(5), n = 1 + rng.index(60);
        std::vector<std::uint16_t> truth(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<std::uint16_t>(rng.index(k));
            pred[i] = rng.uniform() < 0.6 ? truth[i] : static_cast<std::uint16_t>(rng.index(k));
        }
        ConfusionMatrix cm(k);
        cm.add(labels_of(truth, 1, n), pred);
        const Metrics m = cm.metrics();

        std::size_t correct = 0;
        double ma = 0.0, miou = 0.0;
        std::size_t present = 0;
        for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i];
        for (std::size_t c = 0; c < k; ++c) {
            std::size_t ref = 0, hit = 0, uni = 0;
            for (std::size_t i = 0; i < n; ++i) {
                ref += truth[i] == c;
                hit += truth[i] == c && pred[i] == c;
                uni += truth[i] == c || pred[i] == c;
            }
            if (ref == 0) continue;
            ++present;
            ma += static_cast<double>(hit) / static_cast<double>(ref);
            miou += static_cast<double>(hit) / static_cast<double>(uni);
            EXPECT_LE(m.per_class[c].iou, m.per_class[c].recall);
        }
        ASSERT_EQ(m.oa, static_cast<double>(correct) / static_cast<double>(n));
        ASSERT_EQ(m.ma, ma / static_cast<double>(present));
        ASSERT_EQ(m.miou, miou / static_cast<double>(present));
        for (double v : {m.oa, m.ma, m.miou}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Metrics, ArgmaxTiesGoToLowestIndex) {
    const Tensor p({1, 3, 3}, {0.4, 0.4, 0.2, 0.2, 0.4, 0.4, 1.0 / 3, 1.0 / 3, 1.0 / 3});
    EXPECT_EQ(argmax_map(p), (std::vector<std::uint16_t>{0, 1, 0}));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    ModelSpec spec;
    spec.mode = FusionMode::CAF;
    spec.config = tiny_config();
    spec.modalities = {"a", "b"};
    spec.channels = {2, 3};
    Rng rng(3);
    const MMParams p = spec.build(rng);
    const std::string bytes = encode_checkpoint(spec, p);
    EXPECT_EQ(bytes.substr(0, 4), "TSVC");
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_EQ(back.spec, spec);
    EXPECT_EQ(encode_checkpoint(back.spec, back.params), bytes);
    const auto a = p.named_parameters(), b = back.params.named_parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second.values(), b[i].second.values()) << a[i].first;
}

TEST(Checkpoint, CorruptionIsParseError) {
    ModelSpec spec;
    spec.config = tiny_config();
    spec.modalities = {"a"};
    spec.channels = {2};
    Rng rng(4);
    const std::string bytes = encode_checkpoint(spec, spec.build(rng));
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
    std::string bad = bytes;
    bad[1] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), ParseError);
    EXPECT_THROW(decode_checkpoint(bytes + "zz"), ParseError);
}

TEST(RunConfig, DottedAndNestedKeys) {
    const auto c = parse_run_config(nlohmann::json::parse(R"({
        "fusion.mode": "SCTF", "model": {"d": 16, "heads": 2}, "optim.lr": 0.001,
        "data.manifest": "m.json", "data.modalities": ["s2", "pf"], "train": {"epochs": 3}})"),
                                    "/base");
    EXPECT_EQ(c.mode, FusionMode::SCTF);
    EXPECT_EQ(c.model.d, 16u);
    EXPECT_EQ(c.model.heads, 2u);
    EXPECT_EQ(c.optim.lr, 1e-3);
    EXPECT_EQ(c.epochs, 3u);
    EXPECT_EQ(c.manifest, fs::path("/base/m.json"));
    EXPECT_EQ(c.modalities, (std::vector<std::string>{"s2", "pf"}));
}

TEST(RunConfig, DefaultsMatchReferenceProtocol) {
    const auto c = parse_run_config(nlohmann::json::parse(R"({"data.manifest": "m.json"})"));
    EXPECT_EQ(c.model.h, 2u);
    EXPECT_EQ(c.model.w, 2u);
    EXPECT_EQ(c.model.t, 1u);
    EXPECT_EQ(c.model.temporal_depth, 6u);
    EXPECT_EQ(c.model.spatial_depth, 2u);
    EXPECT_EQ(c.model.d, 128u);
    EXPECT_EQ(c.batch_size, 8u);
    EXPECT_EQ(c.epochs, 50u);
    EXPECT_EQ(c.optim.lr, 1e-4);
}

TEST(RunConfig, UnknownKeyAndBadTypeAreConfigErrors) {
    try {
        parse_run_config(nlohmann::json::parse(R"({"data.manifest": "m", "model.depth": 3})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.depth"), std::string::npos);
    }
    EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"data.manifest": "m", "model.d": "big"})")), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"fusion.mode": "LATE", "data.manifest": "m"})")), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({})")), ConfigError);
}

TEST(RunConfig, DivisibilityAndModalityCountChecked) {
    SmallData data(1, 2);
    RunConfig c = small_run(FusionMode::CAF);
    c.modalities = {"pf"};
    EXPECT_THROW(model_spec_for(c, data.man).build(*std::make_unique<Rng>(0)), ConfigError);
    c = small_run(FusionMode::SCTF);
    c.model.h = 4;
    EXPECT_THROW(model_spec_for(c, data.man), ConfigError);
}

class TrainEveryMode : public ::testing::TestWithParam<FusionMode> {};

TEST_P(TrainEveryMode, FirstEpochImprovesAndRunsAreDeterministic) {
    const FusionMode mode = GetParam();
    SmallData data(2);
    RunConfig cfg = small_run(mode);
    cfg.modalities = modalities_for(mode);
    const ModelSpec spec = model_spec_for(cfg, data.man);
    const auto train_sets = select(data.train, mode), val_sets = select(data.val, mode);

    Rng probe(cfg.seed);
    const MMParams initial = spec.build(probe);
    double initial_loss = 0.0;
    {
        NoGradGuard ng;
        for (const auto& s : train_sets) initial_loss += cross_entropy_loss(mm_forward(s.samples, initial), s.labels).item();
        initial_loss /= static_cast<double>(train_sets.size());
    }
    const auto a = train(cfg, spec, train_sets, val_sets);
    const auto b = train(cfg, spec, train_sets, val_sets);
    ASSERT_EQ(a.log.size(), 3u);
    EXPECT_LT(a.log[1].train_loss, initial_loss);
    for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(to_json(a.log[e]).dump(), to_json(b.log[e]).dump());
    EXPECT_EQ(encode_checkpoint(spec, a.params), encode_checkpoint(spec, b.params));
}

TEST_P(TrainEveryMode, LossStrictlyDecreasesOverFiveEpochsAtDefaults) {
    const FusionMode mode = GetParam();
    SmallData data(3, 10);
    RunConfig cfg;  // defaults: d=128, L_T=6, L_S=2, heads=4, batch 8, lr 1e-4, flips on
    cfg.mode = mode;
    cfg.epochs = 5;
    cfg.modalities = modalities_for(mode);
    const ModelSpec spec = model_spec_for(cfg, data.man);
    const auto r = train(cfg, spec, select(data.train, mode), select(data.val, mode));
    for (std::size_t e = 1; e < r.log.size(); ++e)
        EXPECT_LT(r.log[e].train_loss, r.log[e - 1].train_loss) << to_string(mode) << " epoch " << e + 1;
}

INSTANTIATE_TEST_SUITE_P(Modes, TrainEveryMode,
                         ::testing::Values(FusionMode::SM, FusionMode::EF, FusionMode::SCTF, FusionMode::CAF),
                         [](const auto& info) { return to_string(info.param); });

TEST(Train, ZeroLearningRateLeavesParametersBitIdentical) {
    SmallData data(4);
    RunConfig cfg = small_run(FusionMode::SCTF);
    cfg.optim.lr = 0.0;
    cfg.epochs = 2;
    const ModelSpec spec = model_spec_for(cfg, data.man);
    Rng rng(cfg.seed);
    const MMParams initial = spec.build(rng);
    const auto r = train(cfg, spec, data.train, data.val);
    EXPECT_EQ(encode_checkpoint(spec, r.params), encode_checkpoint(spec, initial));
}

TEST(Train, WritesLogAndCheckpointsThatEvaluateIdentically) {
    SyntheticConfig gen;
    gen.seed = 6;
    gen.samples = 6;
    gen.fine_size = 6;
    gen.time_steps = 4;
    gen.modalities = default_modalities(2, 6);
    const fs::path dir = fs::temp_directory_path() / "mmtsvit_test_train_run";
    fs::remove_all(dir);
    const fs::path manifest = gen_synthetic_dataset(gen, dir / "data");

    RunConfig cfg = small_run(FusionMode::EF);
    cfg.manifest = manifest;
    cfg.output_dir = dir / "out";
    const auto r = run_training(cfg);
    ASSERT_TRUE(fs::exists(cfg.output_dir / "best.tsvc"));
    ASSERT_TRUE(fs::exists(cfg.output_dir / "last.tsvc"));

    std::ifstream log(cfg.output_dir / "metrics.jsonl");
    std::string line, last;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        last = line;
        ++lines;
    }
    EXPECT_EQ(lines, 3u);
    const auto rec = nlohmann::json::parse(last);
    for (const char* key : {"epoch", "train_loss", "val_MA", "val_OA", "val_mIoU"}) EXPECT_TRUE(rec.contains(key)) << key;

    const auto report = evaluate_checkpoint(cfg.output_dir / "last.tsvc", manifest, "val");
    EXPECT_EQ(report["MA"].get<double>(), rec["val_MA"].get<double>());
    EXPECT_EQ(report["OA"].get<double>(), rec["val_OA"].get<double>());
    EXPECT_EQ(report["mIoU"].get<double>(), rec["val_mIoU"].get<double>());
    EXPECT_EQ(report["per_class"].size(), 4u);
    EXPECT_EQ(r.log.back().val.ma, rec["val_MA"].get<double>());
}
