#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "container.hpp"
#include "resample.hpp"

namespace mmtsvit {

/// How a modality's native dates are brought onto the shared target grid.
enum class TemporalResampling { None, Align, Rbf };

inline std::string to_string(TemporalResampling r) {
    switch (r) {
        case TemporalResampling::None: return "none";
        case TemporalResampling::Align: return "align";
        case TemporalResampling::Rbf: return "rbf";
    }
    return "?";
}

inline TemporalResampling parse_temporal_resampling(const std::string& s) {
    if (s == "none") return TemporalResampling::None;
    if (s == "align") return TemporalResampling::Align;
    if (s == "rbf") return TemporalResampling::Rbf;
    throw ConfigError("unknown temporal resampling '" + s + "' (expected none, align or rbf)");
}

struct ModalityInfo {
    std::string id;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    TemporalResampling temporal = TemporalResampling::None;
};

struct ManifestEntry {
    std::string file;  // relative to the manifest directory
    std::string split;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::uint64_t seed = 0;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> target_dates;
    std::vector<ModalityInfo> modalities;
    std::vector<ManifestEntry> samples;

    const ModalityInfo& modality(const std::string& id) const {
        for (const auto& m : modalities)
            if (m.id == id) return m;
        throw ConfigError("dataset has no modality '" + id + "'");
    }

    std::vector<std::string> modality_ids() const {
        std::vector<std::string> ids;
        for (const auto& m : modalities) ids.push_back(m.id);
        return ids;
    }

    std::vector<std::filesystem::path> split_files(const std::string& split) const {
        std::vector<std::filesystem::path> out;
        for (const auto& s : samples)
            if (s.split == split) out.push_back(root / s.file);
        return out;
    }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["format"] = "mmtsvit-dataset";
    j["version"] = 1;
    j["seed"] = m.seed;
    j["num_classes"] = m.num_classes;
    j["class_names"] = m.class_names;
    j["height"] = m.height;
    j["width"] = m.width;
    j["target_dates"] = m.target_dates;
    j["modalities"] = nlohmann::json::array();
    for (const auto& mod : m.modalities) {
        j["modalities"].push_back({{"id", mod.id},
                                   {"channels", mod.channels},
                                   {"height", mod.height},
                                   {"width", mod.width},
                                   {"temporal", to_string(mod.temporal)}});
    }
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) j["samples"].push_back({{"file", s.file}, {"split", s.split}});
    return j;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    io::write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

/// Parses a manifest and checks that every referenced sample file exists.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path.string() + "': " + e.what());
    }
    DatasetManifest m;
    m.root = path.parent_path();
    try {
        if (j.at("format") != "mmtsvit-dataset") throw DataError("manifest '" + path.string() + "': unknown format");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.height = j.at("height").get<std::size_t>();
        m.width = j.at("width").get<std::size_t>();
        m.target_dates = j.at("target_dates").get<std::vector<int>>();
        for (const auto& mod : j.at("modalities")) {
            m.modalities.push_back({mod.at("id").get<std::string>(), mod.at("channels").get<std::size_t>(),
                                    mod.at("height").get<std::size_t>(), mod.at("width").get<std::size_t>(),
                                    parse_temporal_resampling(mod.at("temporal").get<std::string>())});
        }
        for (const auto& s : j.at("samples")) m.samples.push_back({s.at("file").get<std::string>(), s.at("split").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path.string() + "': " + e.what());
    }
    if (m.class_names.size() != m.num_classes) throw DataError("manifest: class_names does not list num_classes names");
    for (const auto& s : m.samples) {
        if (!std::filesystem::exists(m.root / s.file)) {
            throw DataError("manifest '" + path.string() + "' references missing file '" + s.file + "'");
        }
    }
    return m;
}

/// Brings the selected modalities of a raw set onto the target date grid and
/// the label resolution, in the order given by `modality_ids`.
inline CoRegisteredSet prepare_set(const CoRegisteredSet& raw, const DatasetManifest& m,
                                   const std::vector<std::string>& modality_ids) {
    if (raw.num_classes != m.num_classes) {
        throw DataError("sample has " + std::to_string(raw.num_classes) + " classes, manifest declares " +
                        std::to_string(m.num_classes));
    }
    CoRegisteredSet out;
    out.num_classes = raw.num_classes;
    out.labels = raw.labels;
    for (const auto& id : modality_ids) {
        const ModalityInfo& info = m.modality(id);
        auto it = std::find_if(raw.samples.begin(), raw.samples.end(), [&](const SITSSample& s) { return s.modality_id == id; });
        if (it == raw.samples.end()) throw DataError("sample lacks modality '" + id + "'");
        SITSSample s;
        switch (info.temporal) {
            case TemporalResampling::None:
                if (it->dates != m.target_dates) throw DataError("modality '" + id + "' is not on the target date grid");
                s = *it;
                break;
            case TemporalResampling::Align: s = temporal_align(*it, m.target_dates); break;
            case TemporalResampling::Rbf: s = rbf_gapfill(*it, m.target_dates); break;
        }
        if (s.height() != raw.labels.height || s.width() != raw.labels.width) {
            s = bilinear_upsample(s, raw.labels.height, raw.labels.width);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

/// Reads and prepares every sample of one split.
inline std::vector<CoRegisteredSet> load_split(const DatasetManifest& m, const std::string& split,
                                               const std::vector<std::string>& modality_ids) {
    std::vector<CoRegisteredSet> out;
    for (const auto& path : m.split_files(split)) out.push_back(prepare_set(read_container(path), m, modality_ids));
    return out;
}

}  // namespace mmtsvit
