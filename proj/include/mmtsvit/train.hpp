#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "optim.hpp"

namespace mmtsvit {

/// Everything a training run needs. Class count and input extent come from
/// the dataset manifest.
struct RunConfig {
    FusionMode mode = FusionMode::EF;
    bool sync_before_first_layer = true;
    ModelConfig model;  // num_classes, height and width are overwritten from the data
    AdamConfig optim;
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool augment = true;
    bool ignore_background = false;
    std::filesystem::path manifest;
    std::vector<std::string> modalities;  // empty: every modality of the dataset
    std::string train_split = "train";
    std::string val_split = "val";
    std::filesystem::path output_dir = "run";
};

namespace detail {

inline void flatten_json(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
    for (const auto& [key, value] : j.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            flatten_json(value, name, out);
        } else {
            if (out.contains(name)) throw ConfigError("config key '" + name + "' given twice");
            out[name] = value;
        }
    }
}

}  // namespace detail

/// Reads a run config. Keys may be written dotted ("model.d") or nested
/// ({"model": {"d": ...}}); unknown keys are rejected. Relative paths are
/// resolved against `base_dir`. MMTSVIT_SEED, when set, overrides the seed.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    nlohmann::json flat = nlohmann::json::object();
    detail::flatten_json(j, "", flat);
    RunConfig c;
    auto& m = c.model;
    const std::map<std::string, std::function<void(const nlohmann::json&)>> setters{
        {"fusion.mode", [&](const auto& v) { c.mode = parse_fusion_mode(v.template get<std::string>()); }},
        {"fusion.sync_before_first_layer", [&](const auto& v) { c.sync_before_first_layer = v.template get<bool>(); }},
        {"model.t", [&](const auto& v) { m.t = v.template get<std::size_t>(); }},
        {"model.h", [&](const auto& v) { m.h = v.template get<std::size_t>(); }},
        {"model.w", [&](const auto& v) { m.w = v.template get<std::size_t>(); }},
        {"model.d", [&](const auto& v) { m.d = v.template get<std::size_t>(); }},
        {"model.temporal_depth", [&](const auto& v) { m.temporal_depth = v.template get<std::size_t>(); }},
        {"model.spatial_depth", [&](const auto& v) { m.spatial_depth = v.template get<std::size_t>(); }},
        {"model.heads", [&](const auto& v) { m.heads = v.template get<std::size_t>(); }},
        {"model.mlp_ratio", [&](const auto& v) { m.mlp_ratio = v.template get<std::size_t>(); }},
        {"optim.lr", [&](const auto& v) { c.optim.lr = v.template get<double>(); }},
        {"optim.beta1", [&](const auto& v) { c.optim.beta1 = v.template get<double>(); }},
        {"optim.beta2", [&](const auto& v) { c.optim.beta2 = v.template get<double>(); }},
        {"optim.eps", [&](const auto& v) { c.optim.eps = v.template get<double>(); }},
        {"train.epochs", [&](const auto& v) { c.epochs = v.template get<std::size_t>(); }},
        {"train.batch_size", [&](const auto& v) { c.batch_size = v.template get<std::size_t>(); }},
        {"train.seed", [&](const auto& v) { c.seed = v.template get<std::uint64_t>(); }},
        {"train.augment", [&](const auto& v) { c.augment = v.template get<bool>(); }},
        {"train.ignore_background", [&](const auto& v) { c.ignore_background = v.template get<bool>(); }},
        {"data.manifest", [&](const auto& v) { c.manifest = base_dir / v.template get<std::string>(); }},
        {"data.modalities", [&](const auto& v) { c.modalities = v.template get<std::vector<std::string>>(); }},
        {"data.train_split", [&](const auto& v) { c.train_split = v.template get<std::string>(); }},
        {"data.val_split", [&](const auto& v) { c.val_split = v.template get<std::string>(); }},
        {"output.dir", [&](const auto& v) { c.output_dir = base_dir / v.template get<std::string>(); }},
    };
    for (const auto& [key, value] : flat.items()) {
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        try {
            it->second(value);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
        }
    }
    if (c.manifest.empty()) throw ConfigError("config key 'data.manifest' is required");
    if (c.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(c.optim.lr >= 0.0) || !(c.optim.eps > 0.0)) throw ConfigError("optim.lr must be >= 0 and optim.eps > 0");
    if (const char* env = std::getenv("MMTSVIT_SEED"); env && *env) {
        char* end = nullptr;
        const unsigned long long s = std::strtoull(env, &end, 10);
        if (*end != '\0') throw ConfigError(std::string("MMTSVIT_SEED is not an unsigned integer: ") + env);
        c.seed = s;
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(j, path.parent_path());
}

/// Model structure implied by a run config on a given dataset.
inline ModelSpec model_spec_for(const RunConfig& cfg, const DatasetManifest& man) {
    ModelSpec spec;
    spec.mode = cfg.mode;
    spec.sync_before_first_layer = cfg.sync_before_first_layer;
    spec.config = cfg.model;
    spec.config.num_classes = man.num_classes;
    spec.config.height = man.height;
    spec.config.width = man.width;
    spec.modalities = cfg.modalities.empty() ? man.modality_ids() : cfg.modalities;
    for (const auto& id : spec.modalities) spec.channels.push_back(man.modality(id).channels);
    spec.config.validate();
    if (man.target_dates.size() % spec.config.t != 0) {
        throw ConfigError("time (T) " + std::to_string(man.target_dates.size()) + " is not divisible by patch extent " +
                          std::to_string(spec.config.t));
    }
    return spec;
}

inline ConfusionMatrix evaluate_sets(const MMParams& params, const std::vector<CoRegisteredSet>& sets) {
    if (sets.empty()) throw ContractError("evaluation split is empty");
    NoGradGuard no_grad;
    ConfusionMatrix cm(params.config.num_classes);
    for (const auto& s : sets) cm.add(s.labels, argmax_map(mm_forward(s.samples, params)));
    return cm;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    Metrics val;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_MA", r.val.ma}, {"val_OA", r.val.oa}, {"val_mIoU", r.val.miou}};
}

struct TrainOptions {
    /// Output directory for metrics.jsonl, best.tsvc and last.tsvc; empty
    /// keeps everything in memory.
    std::filesystem::path output_dir;
    /// Called after every epoch; returning false stops the run.
    std::function<bool(const EpochRecord&, const MMParams&)> on_epoch;
};

struct TrainResult {
    MMParams params;  // after the last epoch
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
};

/// Seeded minibatch training. Per epoch: shuffle, optional random flips,
/// per-sample forward/backward with loss / B accumulated into the gradients,
/// one Adam step per batch, then validation.
inline TrainResult train(const RunConfig& cfg, const ModelSpec& spec, const std::vector<CoRegisteredSet>& train_sets,
                         const std::vector<CoRegisteredSet>& val_sets, const TrainOptions& opts = {}) {
    if (train_sets.empty()) throw ContractError("training split is empty");
    Rng init_rng(cfg.seed);
    TrainResult result{spec.build(init_rng), {}, 0};
    MMParams& params = result.params;
    const auto named = params.named_parameters();
    Adam adam(cfg.optim);
    Rng data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::set<std::uint16_t> ignore;
    if (cfg.ignore_background) ignore.insert(0);

    std::ofstream log_file;
    if (!opts.output_dir.empty()) {
        std::filesystem::create_directories(opts.output_dir);
        log_file.open(opts.output_dir / "metrics.jsonl", std::ios::trunc);
        if (!log_file) throw DataError("cannot write '" + (opts.output_dir / "metrics.jsonl").string() + "'");
    }

    std::vector<std::size_t> order(train_sets.size());
    double best_ma = -1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        data_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (const auto& [name, p] : named) Tensor(p).clear_grad();
            for (std::size_t b = start; b < end; ++b) {
                const CoRegisteredSet& raw = train_sets[order[b]];
                const CoRegisteredSet s = cfg.augment ? random_flip(raw, data_rng) : raw;
                const Tensor loss = cross_entropy_loss(mm_forward(s.samples, params), s.labels, ignore);
                loss_sum += loss.item();
                backward(scale(loss, inv_batch));
            }
            adam.step(named);
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), evaluate_sets(params, val_sets).metrics()};
        result.log.push_back(rec);
        if (log_file.is_open()) {
            log_file << to_json(rec).dump() << '\n';
            log_file.flush();
        }
        if (rec.val.ma > best_ma) {
            best_ma = rec.val.ma;
            result.best_epoch = epoch;
            if (!opts.output_dir.empty()) save_checkpoint(spec, params, opts.output_dir / "best.tsvc");
        }
        if (opts.on_epoch && !opts.on_epoch(rec, params)) break;
    }
    if (!opts.output_dir.empty()) save_checkpoint(spec, params, opts.output_dir / "last.tsvc");
    return result;
}

/// Loads the dataset named by the config and trains into `cfg.output_dir`.
inline TrainResult run_training(const RunConfig& cfg) {
    const DatasetManifest man = load_manifest(cfg.manifest);
    const ModelSpec spec = model_spec_for(cfg, man);
    Rng probe(0);
    (void)spec.build(probe);  // surfaces mode/modality-count errors before any data is read
    const auto train_sets = load_split(man, cfg.train_split, spec.modalities);
    const auto val_sets = load_split(man, cfg.val_split, spec.modalities);
    return train(cfg, spec, train_sets, val_sets, {cfg.output_dir, {}});
}

/// Scores a checkpoint on one split of a dataset.
inline nlohmann::json evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                          const std::string& split) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const DatasetManifest man = load_manifest(manifest);
    const auto& spec = ck.spec;
    if (spec.config.num_classes != man.num_classes) {
        throw ConfigError("checkpoint predicts " + std::to_string(spec.config.num_classes) + " classes, dataset has " +
                          std::to_string(man.num_classes));
    }
    if (spec.config.height != man.height || spec.config.width != man.width) {
        throw ConfigError("checkpoint expects a " + std::to_string(spec.config.height) + "x" + std::to_string(spec.config.width) +
                          " grid, dataset is " + std::to_string(man.height) + "x" + std::to_string(man.width));
    }
    for (std::size_t j = 0; j < spec.modalities.size(); ++j) {
        if (man.modality(spec.modalities[j]).channels != spec.channels[j]) {
            throw ConfigError("modality '" + spec.modalities[j] + "' channel count differs between checkpoint and dataset");
        }
    }
    const auto sets = load_split(man, split, spec.modalities);
    nlohmann::json report = metrics_report(evaluate_sets(ck.params, sets), man.class_names);
    report["split"] = split;
    report["samples"] = sets.size();
    report["mode"] = to_string(spec.mode);
    return report;
}

}  // namespace mmtsvit
