#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "sits.hpp"
#include "tsvit.hpp"

namespace mmtsvit {

/// SM runs a plain single-modality TSViT; the other three fuse M >= 1 modalities.
enum class FusionMode { SM, EF, SCTF, CAF };

inline std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::SM: return "SM";
        case FusionMode::EF: return "EF";
        case FusionMode::SCTF: return "SCTF";
        case FusionMode::CAF: return "CAF";
    }
    return "?";
}

inline FusionMode parse_fusion_mode(std::string_view name) {
    if (name == "SM") return FusionMode::SM;
    if (name == "EF") return FusionMode::EF;
    if (name == "SCTF") return FusionMode::SCTF;
    if (name == "CAF") return FusionMode::CAF;
    throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected SM, EF, SCTF or CAF)");
}

/// Learnable weights of one fused architecture.
///
/// SM and EF hold one branch (EF's tokenizer sees the summed channel count);
/// SCTF and CAF hold one branch per modality. All modes share a single
/// spatial encoder and head.
struct MMParams {
    FusionMode mode = FusionMode::EF;
    ModelConfig config;
    std::vector<BranchParams> branches;
    SpatialParams spatial;
    bool sync_before_first_layer = true;  // SCTF only

    static MMParams init(FusionMode mode, const ModelConfig& cfg, const std::vector<std::size_t>& channels, Rng& rng) {
        cfg.validate();
        if (channels.empty()) throw ConfigError("at least one modality is required");
        MMParams p;
        p.mode = mode;
        p.config = cfg;
        switch (mode) {
            case FusionMode::SM:
                if (channels.size() != 1) {
                    throw ConfigError("SM TSViT takes exactly one modality, got " + std::to_string(channels.size()));
                }
                p.branches.push_back(BranchParams::init(cfg, channels[0], rng));
                break;
            case FusionMode::EF:
                p.branches.push_back(
                    BranchParams::init(cfg, std::accumulate(channels.begin(), channels.end(), std::size_t{0}), rng));
                break;
            case FusionMode::CAF:
                if (channels.size() < 2) throw ConfigError("CAF requires >= 2 modalities");
                [[fallthrough]];
            case FusionMode::SCTF:
                for (auto c : channels) p.branches.push_back(BranchParams::init(cfg, c, rng));
                break;
        }
        p.spatial = SpatialParams::init(cfg, rng);
        return p;
    }

    /// Fused parameters built from deep copies of a single-modality model:
    /// every branch starts as a clone of `single.branch`.
    static MMParams from_single(FusionMode mode, const TSViTParams& single, std::size_t modalities) {
        MMParams p;
        p.mode = mode;
        p.config = single.config;
        const std::size_t copies = (mode == FusionMode::SM || mode == FusionMode::EF) ? 1 : modalities;
        for (std::size_t j = 0; j < copies; ++j) p.branches.push_back(deep_clone(single.branch));
        p.spatial = deep_clone(single.spatial);
        return p;
    }

    std::size_t modalities() const { return branches.size(); }

    template <typename F>
    void visit(F&& f) {
        for (std::size_t j = 0; j < branches.size(); ++j) branches[j].visit("branch" + std::to_string(j), f);
        spatial.visit("spatial", f);
    }

    std::vector<NamedTensor> named_parameters() const { return collect_parameters(*this); }
};

/// Stacks co-registered series along channels in list order.
inline SITSSample early_fusion_concat(const std::vector<SITSSample>& samples) {
    if (samples.empty()) throw FusionError("early fusion: no modalities");
    if (samples.size() == 1) return samples.front();
    const SITSSample& ref = samples.front();
    std::vector<Tensor> parts;
    std::string id = ref.modality_id;
    for (std::size_t j = 0; j < samples.size(); ++j) {
        const auto& s = samples[j];
        if (s.x.dim() != 4) throw FusionError("early fusion: modality '" + s.modality_id + "' is not [T, H, W, C]");
        const char* axes[] = {"T", "H", "W"};
        for (std::size_t a = 0; a < 3; ++a) {
            if (s.x.shape()[a] != ref.x.shape()[a]) {
                throw FusionError("early fusion: modality " + std::to_string(j) + " ('" + s.modality_id + "') has " +
                                  axes[a] + " = " + std::to_string(s.x.shape()[a]) + ", expected " +
                                  std::to_string(ref.x.shape()[a]));
            }
        }
        if (s.dates != ref.dates) {
            throw DataError("early fusion: modality " + std::to_string(j) + " ('" + s.modality_id +
                            "') acquisition dates differ from modality 0");
        }
        if (j > 0) id += "+" + s.modality_id;
        parts.push_back(s.x);
    }
    return {id, concat(parts, 3), ref.dates};
}

/// Class-wise arithmetic mean of the modality-specific class tokens.
inline Tensor sctf_sync(const std::vector<Tensor>& class_tokens) {
    if (class_tokens.empty()) throw FusionError("class-token sync: no modalities");
    for (std::size_t j = 1; j < class_tokens.size(); ++j) {
        if (class_tokens[j].shape() != class_tokens[0].shape()) {
            throw FusionError("class-token sync: modality " + std::to_string(j) + " tokens " +
                              shape_str(class_tokens[j].shape()) + " differ from " + shape_str(class_tokens[0].shape()));
        }
    }
    return mean_of(class_tokens);
}

namespace detail {

inline void require_branches(const std::vector<SITSSample>& samples, const MMParams& p) {
    if (samples.size() != p.branches.size()) {
        throw FusionError(to_string(p.mode) + ": " + std::to_string(samples.size()) + " modalities for " +
                          std::to_string(p.branches.size()) + " encoder branches");
    }
}

/// Tokenized, embedded sequences [N, K + N_T, d] of every modality, checked
/// to share one token grid.
inline std::vector<Tensor> embed_all(const std::vector<SITSSample>& samples, const MMParams& p) {
    std::vector<Tensor> z;
    for (std::size_t j = 0; j < samples.size(); ++j) {
        const auto& b = p.branches[j];
        z.push_back(embed_and_prepend(patchify(samples[j].x, b.tokenizer), patch_dates(samples[j].dates, b.tokenizer.t), b));
        if (z[j].shape() != z[0].shape()) {
            throw FusionError(to_string(p.mode) + ": modality " + std::to_string(j) + " token grid " +
                              shape_str(z[j].shape()) + " differs from modality 0 grid " + shape_str(z[0].shape()));
        }
        if (b.temporal_layers.size() != p.branches[0].temporal_layers.size()) {
            throw FusionError(to_string(p.mode) + ": temporal encoder depth differs between branches");
        }
    }
    return z;
}

inline std::vector<Tensor> class_slices(const std::vector<Tensor>& z, std::size_t k) {
    std::vector<Tensor> out;
    for (const auto& t : z) out.push_back(slice(t, 1, 0, k));
    return out;
}

}  // namespace detail

/// Synchronized class-token fusion: after every temporal layer (and, by
/// default, before the first) the class tokens of all modality encoders are
/// replaced by their class-wise mean.
inline Tensor sctf_forward(const std::vector<SITSSample>& samples, const MMParams& p) {
    detail::require_branches(samples, p);
    std::vector<Tensor> z = detail::embed_all(samples, p);
    const std::size_t k = p.config.num_classes;
    const std::size_t seq = z[0].shape()[1];
    Tensor synced;
    auto sync = [&] {
        synced = sctf_sync(detail::class_slices(z, k));
        for (auto& t : z) t = concat({synced, slice(t, 1, k, seq - k)}, 1);
    };
    if (p.sync_before_first_layer) sync();
    const std::size_t depth = p.branches[0].temporal_layers.size();
    for (std::size_t l = 0; l < depth; ++l) {
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = encoder_layer(z[j], p.branches[j].temporal_layers[l]);
        if (l + 1 < depth) {
            sync();
        } else {
            synced = sctf_sync(detail::class_slices(z, k));
        }
    }
    return segmentation_head(spatial_encode(synced, p.spatial), p.spatial);
}

/// Cross-attention fusion: every temporal layer of modality j attends with
/// the queries of all other modalities; final class tokens are averaged.
inline Tensor caf_forward(const std::vector<SITSSample>& samples, const MMParams& p) {
    if (samples.size() < 2 || p.branches.size() < 2) throw ConfigError("CAF requires >= 2 modalities");
    detail::require_branches(samples, p);
    std::vector<Tensor> z = detail::embed_all(samples, p);
    const std::size_t depth = p.branches[0].temporal_layers.size();
    for (std::size_t l = 0; l < depth; ++l) {
        std::vector<const EncoderLayerParams*> layer;
        for (const auto& b : p.branches) layer.push_back(&b.temporal_layers[l]);
        z = cross_encoder_layer(z, layer);
    }
    const Tensor aggregated = sctf_sync(detail::class_slices(z, p.config.num_classes));
    return segmentation_head(spatial_encode(aggregated, p.spatial), p.spatial);
}

inline Tensor mm_forward(FusionMode mode, const std::vector<SITSSample>& samples, const MMParams& p) {
    switch (mode) {
        case FusionMode::SM:
        case FusionMode::EF: {
            if (p.branches.size() != 1) throw FusionError(to_string(mode) + ": expects a single encoder branch");
            if (mode == FusionMode::SM && samples.size() != 1) {
                throw ConfigError("SM TSViT takes exactly one modality, got " + std::to_string(samples.size()));
            }
            const SITSSample fused = early_fusion_concat(samples);
            const auto& b = p.branches[0];
            if (fused.x.dim() == 4 && fused.dates.size() != fused.x.shape()[0]) {
                throw DataError(to_string(mode) + ": date count does not match time steps");
            }
            return segmentation_head(spatial_encode(branch_class_tokens(fused.x, fused.dates, b), p.spatial), p.spatial);
        }
        case FusionMode::SCTF: return sctf_forward(samples, p);
        case FusionMode::CAF: return caf_forward(samples, p);
    }
    throw ConfigError("unknown fusion mode");
}

inline Tensor mm_forward(const std::vector<SITSSample>& samples, const MMParams& p) {
    return mm_forward(p.mode, samples, p);
}

}  // namespace mmtsvit
