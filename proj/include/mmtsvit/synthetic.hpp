#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "random.hpp"

namespace mmtsvit {

enum class DateSampling { Regular, Irregular, Daily };

struct SyntheticModality {
    std::string id;
    std::size_t channels = 1;
    std::size_t size = 8;  // square grid
    DateSampling dates = DateSampling::Regular;
};

/// Stock modality layouts: SAR-like (irregular dates), optical (regular
/// 10-day grid) and a daily high-resolution product at the fine grid.
inline std::vector<SyntheticModality> default_modalities(std::size_t count, std::size_t fine_size) {
    if (fine_size % 3 != 0) throw ConfigError("synthetic grid size must be divisible by 3, got " + std::to_string(fine_size));
    const std::size_t coarse = fine_size / 3;
    switch (count) {
        case 1: return {{"s2", 10, coarse, DateSampling::Regular}};
        case 2: return {{"s2", 10, coarse, DateSampling::Regular}, {"pf", 4, fine_size, DateSampling::Daily}};
        case 3:
            return {{"s1", 2, coarse, DateSampling::Irregular},
                    {"s2", 10, coarse, DateSampling::Regular},
                    {"pf", 4, fine_size, DateSampling::Daily}};
        default: throw ConfigError("stock synthetic layouts cover 1 to 3 modalities, got " + std::to_string(count));
    }
}

struct SyntheticConfig {
    std::uint64_t seed = 0;
    std::size_t samples = 16;
    std::size_t classes = 4;
    std::size_t fine_size = 24;
    std::size_t time_steps = 12;
    int first_day = 100;
    int interval = 10;
    double noise = 0.05;
    double val_fraction = 0.25;
    double test_fraction = 0.25;
    /// When set, modality m only sees bit (m mod 2) of the class index, so no
    /// single modality can tell every class apart.
    bool split_signatures = false;
    std::vector<SyntheticModality> modalities = default_modalities(3, 24);

    std::vector<int> target_dates() const {
        std::vector<int> d;
        for (std::size_t i = 0; i < time_steps; ++i) d.push_back(first_day + interval * static_cast<int>(i));
        return d;
    }

    void validate() const {
        if (classes < 2) throw ConfigError("at least 2 classes are required, got " + std::to_string(classes));
        if (classes > 65535) throw ConfigError("class count must fit u16");
        if (samples == 0) throw ConfigError("sample count must be positive");
        if (time_steps == 0) throw ConfigError("time step count must be positive");
        if (modalities.empty()) throw ConfigError("at least one modality is required");
        if (interval < 1 || first_day < 1 || target_dates().back() > 366) {
            throw ConfigError("target dates must lie within day-of-year [1, 366]");
        }
        if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0) {
            throw ConfigError("split fractions must be nonnegative and leave training samples");
        }
        for (const auto& m : modalities) {
            if (m.size == 0 || m.size > fine_size || fine_size % m.size != 0) {
                throw ConfigError("modality '" + m.id + "' grid " + std::to_string(m.size) + " must divide the label grid " +
                                  std::to_string(fine_size));
            }
            if (m.channels == 0) throw ConfigError("modality '" + m.id + "' needs at least one channel");
        }
    }
};

namespace detail {

struct Signature {
    double offset, amplitude, phase;
};

/// signatures[key][channel] for one modality.
using ModalitySignatures = std::vector<std::vector<Signature>>;

inline std::vector<ModalitySignatures> draw_signatures(const SyntheticConfig& cfg, Rng& rng) {
    const std::size_t keys = cfg.split_signatures ? 2 : cfg.classes;
    std::vector<ModalitySignatures> out;
    for (const auto& m : cfg.modalities) {
        ModalitySignatures sig(keys);
        for (auto& per_key : sig)
            for (std::size_t c = 0; c < m.channels; ++c)
                per_key.push_back({rng.uniform(-0.5, 0.5), rng.uniform(0.2, 0.6), rng.uniform(0.0, 2.0 * std::numbers::pi)});
        out.push_back(std::move(sig));
    }
    return out;
}

inline std::size_t signature_key(const SyntheticConfig& cfg, std::size_t modality, std::uint16_t cls) {
    return cfg.split_signatures ? (cls >> (modality % 2)) & 1u : cls;
}

inline LabelMap draw_labels(const SyntheticConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.fine_size;
    LabelMap l{n, n, std::vector<std::uint16_t>(n * n, 0)};
    const std::size_t rects = 3 + rng.index(4);
    const std::size_t lo = std::max<std::size_t>(1, n / 6), hi = std::max(lo, n / 2);
    for (std::size_t r = 0; r < rects; ++r) {
        const std::size_t h = lo + rng.index(hi - lo + 1), w = lo + rng.index(hi - lo + 1);
        const std::size_t y0 = rng.index(n - h + 1), x0 = rng.index(n - w + 1);
        const auto cls = static_cast<std::uint16_t>(1 + rng.index(cfg.classes - 1));
        for (std::size_t y = y0; y < y0 + h; ++y)
            for (std::size_t x = x0; x < x0 + w; ++x) l.at(y, x) = cls;
    }
    return l;
}

inline std::vector<int> draw_dates(const SyntheticConfig& cfg, DateSampling kind, Rng& rng) {
    const auto target = cfg.target_dates();
    std::vector<int> d;
    switch (kind) {
        case DateSampling::Regular: return target;
        case DateSampling::Daily:
            for (int day = target.front(); day <= target.back(); ++day) d.push_back(day);
            return d;
        case DateSampling::Irregular: {
            const int end = std::min(366, target.back() + 8);
            for (int day = std::max(1, target.front() - 8 + static_cast<int>(rng.index(6))); day <= end;
                 day += 4 + static_cast<int>(rng.index(12)))
                d.push_back(day);
            return d;
        }
    }
    return d;
}

}  // namespace detail

/// One co-registered set drawn from class-specific seasonal signatures.
///
/// Every modality is simulated on the fine label grid, block-averaged down to
/// its own resolution, then perturbed with Gaussian noise. Values are rounded
/// to float32 so the set survives the container unchanged.
inline CoRegisteredSet synth_sample(const SyntheticConfig& cfg, const std::vector<detail::ModalitySignatures>& sigs,
                                    Rng& rng) {
    CoRegisteredSet set;
    set.num_classes = cfg.classes;
    set.labels = detail::draw_labels(cfg, rng);
    const std::size_t n = cfg.fine_size;
    for (std::size_t j = 0; j < cfg.modalities.size(); ++j) {
        const auto& m = cfg.modalities[j];
        const std::vector<int> dates = detail::draw_dates(cfg, m.dates, rng);
        const std::size_t f = n / m.size, c = m.channels;
        std::vector<double> x(dates.size() * m.size * m.size * c, 0.0);
        for (std::size_t t = 0; t < dates.size(); ++t) {
            const double angle = 2.0 * std::numbers::pi * dates[t] / 365.0;
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t xx = 0; xx < n; ++xx) {
                    const auto& sig = sigs[j][detail::signature_key(cfg, j, set.labels.at(y, xx))];
                    double* dst = &x[((t * m.size + y / f) * m.size + xx / f) * c];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        dst[ch] += sig[ch].offset + sig[ch].amplitude * std::sin(angle + sig[ch].phase);
                }
        }
        const double inv = 1.0 / static_cast<double>(f * f);
        for (auto& v : x) v = static_cast<double>(static_cast<float>(v * inv + rng.normal(0.0, cfg.noise)));
        set.samples.push_back({m.id, Tensor({dates.size(), m.size, m.size, c}, std::move(x)), dates});
    }
    return set;
}

inline DatasetManifest synthetic_manifest(const SyntheticConfig& cfg) {
    DatasetManifest man;
    man.seed = cfg.seed;
    man.num_classes = cfg.classes;
    man.class_names.push_back("background");
    for (std::size_t k = 1; k < cfg.classes; ++k) man.class_names.push_back("crop_" + std::to_string(k));
    man.height = man.width = cfg.fine_size;
    man.target_dates = cfg.target_dates();
    for (const auto& m : cfg.modalities) {
        const auto temporal = m.dates == DateSampling::Regular ? TemporalResampling::None
                              : m.dates == DateSampling::Daily ? TemporalResampling::Align
                                                               : TemporalResampling::Rbf;
        man.modalities.push_back({m.id, m.channels, m.size, m.size, temporal});
    }
    const auto n = cfg.samples;
    const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
        char name[48];
        std::snprintf(name, sizeof name, "sample_%04zu.msit", i);
        const char* split = i + n_test >= n ? "test" : i + n_test + n_val >= n ? "val" : "train";
        man.samples.push_back({name, split});
    }
    return man;
}

/// Generates every sample in memory (manifest paths are not touched).
inline std::vector<CoRegisteredSet> generate_sets(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const auto sigs = detail::draw_signatures(cfg, rng);
    std::vector<CoRegisteredSet> sets;
    for (std::size_t i = 0; i < cfg.samples; ++i) sets.push_back(synth_sample(cfg, sigs, rng));
    return sets;
}

/// Writes the samples and `manifest.json` into `out_dir`; returns the manifest path.
inline std::filesystem::path gen_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw DataError("cannot create output directory '" + out_dir.string() + "'");
    }
    DatasetManifest man = synthetic_manifest(cfg);
    man.root = out_dir;
    const auto sets = generate_sets(cfg);
    for (std::size_t i = 0; i < sets.size(); ++i) write_container(sets[i], out_dir / man.samples[i].file);
    const auto path = out_dir / "manifest.json";
    write_manifest(man, path);
    return path;
}

}  // namespace mmtsvit
