#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "mmtsvit/synthetic.hpp"
#include "mmtsvit/train.hpp"
#include "mmtsvit/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct GenDataArgs {
    std::string out;
    std::uint64_t seed = 0;
    std::size_t samples = 16;
    std::size_t modalities = 3;
    std::size_t classes = 4;
    std::size_t size = 24;
    std::size_t time_steps = 12;
    double noise = 0.05;
    bool split_signatures = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    mmtsvit::SyntheticConfig cfg;
    cfg.seed = a.seed;
    cfg.samples = a.samples;
    cfg.classes = a.classes;
    cfg.fine_size = a.size;
    cfg.time_steps = a.time_steps;
    cfg.noise = a.noise;
    cfg.split_signatures = a.split_signatures;
    cfg.modalities = mmtsvit::default_modalities(a.modalities, a.size);
    std::cout << mmtsvit::gen_synthetic_dataset(cfg, a.out).string() << '\n';
    return kExitOk;
}

int cmd_train(const std::string& config_path) {
    const mmtsvit::RunConfig cfg = mmtsvit::load_run_config(config_path);
    const auto result = mmtsvit::run_training(cfg);
    const auto& last = result.log.back();
    nlohmann::json summary = mmtsvit::to_json(last);
    summary["best_epoch"] = result.best_epoch;
    summary["output_dir"] = cfg.output_dir.string();
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split) {
    std::cout << mmtsvit::evaluate_checkpoint(checkpoint, data, split).dump(2) << '\n';
    return kExitOk;
}

int cmd_grad_check(const std::string& arch, bool corrupt) {
    const mmtsvit::FusionMode mode = mmtsvit::parse_fusion_mode(arch);
    mmtsvit::testing_hooks::flip_gelu_adjoint() = corrupt;
    const auto start = std::chrono::steady_clock::now();
    const auto report = mmtsvit::architecture_grad_check(mode);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto* worst = report.worst();
    std::printf("grad-check %s: %zu tensors, worst %s rel err %.3e (abs %.3e), tol %.0e, %.1f s: %s\n", arch.c_str(),
                report.entries.size(), worst->name.c_str(), worst->relative_error, worst->max_abs_error, report.tolerance,
                seconds, report.passed() ? "PASS" : "FAIL");
    return report.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal TSViT: synthetic data, training, evaluation and gradient checks"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a seeded synthetic co-registered dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed");
    gen_cmd->add_option("--samples", gen.samples, "Number of co-registered sets");
    gen_cmd->add_option("--modalities", gen.modalities, "Modality count (1 to 3)");
    gen_cmd->add_option("--classes", gen.classes, "Class count K, background included");
    gen_cmd->add_option("--size", gen.size, "Label grid extent (divisible by 3)");
    gen_cmd->add_option("--time-steps", gen.time_steps, "Target dates on the 10-day grid");
    gen_cmd->add_option("--noise", gen.noise, "Gaussian noise standard deviation");
    gen_cmd->add_flag("--split-signatures", gen.split_signatures, "Make every modality ambiguous between class pairs");

    std::string config;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
    train_cmd->add_option("--config", config, "Run config path")->required();

    std::string checkpoint, data, split = "test";
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", checkpoint, "TSVC checkpoint")->required();
    eval_cmd->add_option("--data", data, "Dataset manifest")->required();
    eval_cmd->add_option("--split", split, "Split name");

    std::string arch;
    bool corrupt = false;
    auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of one architecture");
    gc_cmd->add_option("--arch", arch, "SM, EF, SCTF or CAF")->required()->check(CLI::IsMember({"SM", "EF", "SCTF", "CAF"}));
    gc_cmd->add_flag("--corrupt-adjoint", corrupt, "Flip the sign of the GELU adjoint (checker self-test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(config);
        if (*eval_cmd) return cmd_eval(checkpoint, data, split);
        if (*gc_cmd) return cmd_grad_check(arch, corrupt);
    } catch (const mmtsvit::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
