#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "binary_io.hpp"
#include "fusion.hpp"

namespace mmtsvit {

inline constexpr std::string_view kCheckpointMagic = "TSVC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// What is needed to rebuild a model skeleton before loading its weights.
struct ModelSpec {
    FusionMode mode = FusionMode::EF;
    ModelConfig config;
    std::vector<std::string> modalities;  // data modality ids, in branch order
    std::vector<std::size_t> channels;    // per data modality
    bool sync_before_first_layer = true;

    MMParams build(Rng& rng) const {
        MMParams p = MMParams::init(mode, config, channels, rng);
        p.sync_before_first_layer = sync_before_first_layer;
        return p;
    }

    bool operator==(const ModelSpec&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"t", c.t},
            {"h", c.h},
            {"w", c.w},
            {"d", c.d},
            {"num_classes", c.num_classes},
            {"temporal_depth", c.temporal_depth},
            {"spatial_depth", c.spatial_depth},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"height", c.height},
            {"width", c.width}};
}

inline nlohmann::json to_json(const ModelSpec& s) {
    return {{"mode", to_string(s.mode)},
            {"model", to_json(s.config)},
            {"modalities", s.modalities},
            {"channels", s.channels},
            {"sync_before_first_layer", s.sync_before_first_layer}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.mode = parse_fusion_mode(j.at("mode").get<std::string>());
    const auto& m = j.at("model");
    auto& c = s.config;
    c.t = m.at("t");
    c.h = m.at("h");
    c.w = m.at("w");
    c.d = m.at("d");
    c.num_classes = m.at("num_classes");
    c.temporal_depth = m.at("temporal_depth");
    c.spatial_depth = m.at("spatial_depth");
    c.heads = m.at("heads");
    c.mlp_ratio = m.at("mlp_ratio");
    c.height = m.at("height");
    c.width = m.at("width");
    s.modalities = j.at("modalities").get<std::vector<std::string>>();
    s.channels = j.at("channels").get<std::vector<std::size_t>>();
    s.sync_before_first_layer = j.at("sync_before_first_layer");
    return s;
}

/// Checkpoint layout:
///
///   "TSVC" | u32 version | u32 spec length | spec JSON
///   u32 tensor count, then per tensor: u16 name length, name, u32 rank,
///   rank x u64 extent, u64 byte offset into the data block
///   data block: every tensor as f64, in manifest order
inline std::string encode_checkpoint(const ModelSpec& spec, const MMParams& params) {
    io::Writer w;
    w.put_bytes(kCheckpointMagic);
    w.put<std::uint32_t>(kCheckpointVersion);
    const std::string meta = to_json(spec).dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta);
    const auto named = params.named_parameters();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : named) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_bytes(name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
        for (auto e : t.shape()) w.put<std::uint64_t>(e);
        w.put<std::uint64_t>(offset);
        offset += t.numel() * sizeof(double);
    }
    for (const auto& [name, t] : named)
        for (double v : t.data()) w.put<double>(v);
    return w.take();
}

struct Checkpoint {
    ModelSpec spec;
    MMParams params;
};

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "TSVC checkpoint") {
    io::Reader r(bytes, source);
    r.expect_magic(kCheckpointMagic);
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version), version_at);
    const std::size_t meta_at = r.offset();
    const auto meta_len = r.get<std::uint32_t>("spec length");
    Checkpoint ck;
    try {
        ck.spec = model_spec_from_json(nlohmann::json::parse(r.get_bytes(meta_len, "spec")));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad model spec: ") + e.what(), meta_at);
    }
    Rng rng(0);
    ck.params = ck.spec.build(rng);
    auto named = ck.params.named_parameters();

    const std::size_t count_at = r.offset();
    const auto count = r.get<std::uint32_t>("tensor count");
    if (count != named.size()) {
        r.fail("holds " + std::to_string(count) + " tensors, the model spec needs " + std::to_string(named.size()), count_at);
    }
    std::uint64_t expected_offset = 0;
    for (auto& [name, t] : named) {
        const std::size_t entry_at = r.offset();
        const auto len = r.get<std::uint16_t>("name length");
        const auto got = r.get_bytes(len, "tensor name");
        if (got != name) r.fail("tensor '" + std::string(got) + "' found where '" + name + "' was expected", entry_at);
        Shape shape(r.get<std::uint32_t>("tensor rank"));
        if (shape.size() > 8) r.fail("implausible rank for '" + name + "'", entry_at);
        for (auto& e : shape) e = r.get<std::uint64_t>("tensor extent");
        if (shape != t.shape()) {
            r.fail("tensor '" + name + "' has shape " + shape_str(shape) + ", the model spec needs " + shape_str(t.shape()),
                   entry_at);
        }
        if (r.get<std::uint64_t>("tensor offset") != expected_offset) r.fail("non-contiguous offset for '" + name + "'", entry_at);
        expected_offset += t.numel() * sizeof(double);
    }
    for (auto& [name, t] : named)
        for (auto& v : t.mutable_data()) v = r.get<double>("tensor value");
    r.expect_end();
    return ck;
}

inline void save_checkpoint(const ModelSpec& spec, const MMParams& params, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_checkpoint(spec, params));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace mmtsvit
