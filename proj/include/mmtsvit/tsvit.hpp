#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nn.hpp"

namespace mmtsvit {

/// Name/handle pairs of every learnable tensor of a parameter struct, in
/// visiting order. Handles share storage with the struct.
template <typename Params>
std::vector<NamedTensor> collect_parameters(const Params& params) {
    std::vector<NamedTensor> out;
    const_cast<Params&>(params).visit([&out](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

/// Copy of a parameter struct with freshly allocated tensors.
template <typename Params>
Params deep_clone(const Params& params) {
    Params copy = params;
    auto fresh = [](const std::string&, Tensor& t) { t = t.clone(); };
    if constexpr (requires { copy.visit(fresh); }) {
        copy.visit(fresh);
    } else {
        copy.visit(std::string(), fresh);
    }
    return copy;
}

/// Number of rows of the learnable day-of-year position table.
inline constexpr std::size_t kDaysPerYear = 366;

/// Patch extents and token width of one tokenizer.
struct TokenizerConfig {
    std::size_t t = 1;
    std::size_t h = 2;
    std::size_t w = 2;
    std::size_t d = 128;
    std::size_t channels = 1;

    std::size_t patch_size() const { return t * h * w * channels; }

    void validate() const {
        if (t == 0 || h == 0 || w == 0 || d == 0 || channels == 0) {
            throw ConfigError("tokenizer extents t, h, w, d and channel count must all be >= 1");
        }
    }

    /// Rejects input extents that do not split into whole patches.
    void check_divisible(std::size_t time, std::size_t height, std::size_t width) const {
        validate();
        auto check = [](std::size_t extent, std::size_t patch, const char* axis) {
            if (extent == 0 || extent % patch != 0) {
                throw ConfigError(std::string("input ") + axis + " extent " + std::to_string(extent) +
                                  " is not divisible by patch extent " + std::to_string(patch));
            }
        };
        check(time, t, "time (T)");
        check(height, h, "height (H)");
        check(width, w, "width (W)");
    }
};

/// Architecture hyperparameters shared by every branch of a model.
struct ModelConfig {
    std::size_t t = 1;
    std::size_t h = 2;
    std::size_t w = 2;
    std::size_t d = 128;
    std::size_t num_classes = 2;
    std::size_t temporal_depth = 6;
    std::size_t spatial_depth = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t height = 24;  // input grid the spatial position table is sized for
    std::size_t width = 24;

    std::size_t grid_rows() const { return height / h; }
    std::size_t grid_cols() const { return width / w; }
    std::size_t num_patches() const { return grid_rows() * grid_cols(); }

    TokenizerConfig tokenizer(std::size_t channels) const { return {t, h, w, d, channels}; }

    bool operator==(const ModelConfig&) const = default;

    void validate() const {
        if (t == 0 || h == 0 || w == 0 || d == 0) throw ConfigError("patch extents and d must be >= 1");
        if (num_classes == 0) throw ConfigError("number of classes must be >= 1");
        if (temporal_depth == 0 || spatial_depth == 0) throw ConfigError("encoder depths must be >= 1");
        if (mlp_ratio == 0) throw ConfigError("mlp ratio must be >= 1");
        if (heads == 0 || d % heads != 0) {
            throw ConfigError("token dimension " + std::to_string(d) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
        if (height == 0 || height % h != 0) {
            throw ConfigError("input height (H) " + std::to_string(height) + " is not divisible by patch extent " +
                              std::to_string(h));
        }
        if (width == 0 || width % w != 0) {
            throw ConfigError("input width (W) " + std::to_string(width) + " is not divisible by patch extent " +
                              std::to_string(w));
        }
    }
};

/// One temporal stream: tokenizer, day-of-year table, class tokens and the
/// temporal encoder.
struct BranchParams {
    TokenizerConfig tokenizer;
    Linear projection;        // t*h*w*C -> d
    Tensor temporal_position; // [366, d]
    Tensor class_tokens;      // [K, d]
    std::vector<EncoderLayerParams> temporal_layers;

    static BranchParams init(const ModelConfig& cfg, std::size_t channels, Rng& rng) {
        cfg.validate();
        BranchParams b;
        b.tokenizer = cfg.tokenizer(channels);
        b.tokenizer.validate();
        b.projection = Linear::init(b.tokenizer.patch_size(), cfg.d, rng);
        b.temporal_position = normal_init({kDaysPerYear, cfg.d}, 0.02, rng);
        b.class_tokens = normal_init({cfg.num_classes, cfg.d}, 0.02, rng);
        for (std::size_t l = 0; l < cfg.temporal_depth; ++l)
            b.temporal_layers.push_back(EncoderLayerParams::init(cfg.d, cfg.heads, cfg.mlp_ratio, rng));
        return b;
    }

    std::size_t num_classes() const { return class_tokens.shape()[0]; }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        projection.visit(prefix + ".projection", f);
        f(prefix + ".temporal_position", temporal_position);
        f(prefix + ".class_tokens", class_tokens);
        for (std::size_t l = 0; l < temporal_layers.size(); ++l)
            temporal_layers[l].visit(prefix + ".temporal." + std::to_string(l), f);
    }
};

/// Spatial position table, spatial encoder and segmentation head.
struct SpatialParams {
    std::size_t h = 2;
    std::size_t w = 2;
    std::size_t grid_rows = 1;
    std::size_t grid_cols = 1;
    Tensor spatial_position;  // [N_H * N_W, d]
    std::vector<EncoderLayerParams> layers;
    Linear head;  // d -> h*w, shared by every class channel; no bias (softmax over K would cancel it)

    static SpatialParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        SpatialParams s;
        s.h = cfg.h;
        s.w = cfg.w;
        s.grid_rows = cfg.grid_rows();
        s.grid_cols = cfg.grid_cols();
        s.spatial_position = normal_init({cfg.num_patches(), cfg.d}, 0.02, rng);
        for (std::size_t l = 0; l < cfg.spatial_depth; ++l)
            s.layers.push_back(EncoderLayerParams::init(cfg.d, cfg.heads, cfg.mlp_ratio, rng));
        s.head = Linear::init(cfg.d, cfg.h * cfg.w, rng, false);
        return s;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".spatial_position", spatial_position);
        for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + ".spatial." + std::to_string(l), f);
        head.visit(prefix + ".head", f);
    }
};

/// Parameters of a single-modality TSViT.
struct TSViTParams {
    ModelConfig config;
    BranchParams branch;
    SpatialParams spatial;

    static TSViTParams init(const ModelConfig& cfg, std::size_t channels, Rng& rng) {
        TSViTParams p;
        p.config = cfg;
        p.branch = BranchParams::init(cfg, channels, rng);
        p.spatial = SpatialParams::init(cfg, rng);
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        branch.visit("branch0", f);
        spatial.visit("spatial", f);
    }

    std::vector<NamedTensor> named_parameters() const { return collect_parameters(*this); }
};

/// [T, H, W, C] -> [N_H * N_W, N_T, t*h*w*C]: non-overlapping 3D patches,
/// spatial patches row-major, time-major along the second axis.
inline Tensor patchify(const Tensor& x, const TokenizerConfig& cfg) {
    if (x.dim() != 4) throw DimensionError("patchify: expected [T, H, W, C], got " + shape_str(x.shape()));
    const auto time = x.shape()[0], height = x.shape()[1], width = x.shape()[2], ch = x.shape()[3];
    cfg.check_divisible(time, height, width);
    if (ch != cfg.channels) {
        throw DimensionError("patchify: input has " + std::to_string(ch) + " channels, tokenizer expects " +
                             std::to_string(cfg.channels));
    }
    const auto nt = time / cfg.t, nh = height / cfg.h, nw = width / cfg.w;
    const Tensor blocks = reshape(x, {nt, cfg.t, nh, cfg.h, nw, cfg.w, ch});
    return reshape(transpose(blocks, {2, 4, 0, 1, 3, 5, 6}), {nh * nw, nt, cfg.patch_size()});
}

/// Inverse of patchify for an input of extents (time, height, width).
inline Tensor unpatchify(const Tensor& patches, std::size_t time, std::size_t height, std::size_t width,
                         const TokenizerConfig& cfg) {
    cfg.check_divisible(time, height, width);
    const auto nt = time / cfg.t, nh = height / cfg.h, nw = width / cfg.w;
    if (patches.shape() != Shape{nh * nw, nt, cfg.patch_size()}) {
        throw DimensionError("unpatchify: patch tensor " + shape_str(patches.shape()) +
                             " does not match the requested extents");
    }
    const Tensor blocks = reshape(patches, {nh, nw, nt, cfg.t, cfg.h, cfg.w, cfg.channels});
    return reshape(transpose(blocks, {2, 3, 0, 4, 1, 5, 6}), {time, height, width, cfg.channels});
}

/// Acquisition day of each temporal patch (its first frame).
inline std::vector<int> patch_dates(const std::vector<int>& dates, std::size_t t) {
    std::vector<int> out;
    for (std::size_t i = 0; i < dates.size(); i += t) out.push_back(dates[i]);
    return out;
}

/// Projects patches to d, adds the day-of-year embedding and prepends the
/// K class tokens (which carry no position embedding) to every sequence.
inline Tensor embed_and_prepend(const Tensor& patches, const std::vector<int>& dates, const BranchParams& p) {
    if (patches.dim() != 3) throw DimensionError("embed_and_prepend: expected [N, N_T, P], got " + shape_str(patches.shape()));
    const std::size_t n = patches.shape()[0];
    const std::size_t nt = patches.shape()[1];
    if (dates.size() != nt) {
        throw DataError("embed_and_prepend: " + std::to_string(dates.size()) + " dates for " + std::to_string(nt) +
                        " temporal tokens");
    }
    std::vector<std::size_t> rows(nt);
    for (std::size_t i = 0; i < nt; ++i) {
        if (dates[i] < 1 || dates[i] > static_cast<int>(kDaysPerYear)) {
            throw DataError("acquisition day-of-year " + std::to_string(dates[i]) + " outside [1, 366]");
        }
        rows[i] = static_cast<std::size_t>(dates[i] - 1);
    }
    const Tensor tokens = linear(patches, p.projection);
    const Tensor positioned = add(tokens, expand_leading(gather_rows(p.temporal_position, rows), {n}));
    return concat({expand_leading(p.class_tokens, {n}), positioned}, 1);
}

/// Runs the temporal encoder and keeps only the K class-token positions.
inline Tensor temporal_encode(const Tensor& z0, const BranchParams& p) {
    Tensor z = z0;
    for (const auto& layer : p.temporal_layers) z = encoder_layer(z, layer);
    return slice(z, 1, 0, p.num_classes());
}

/// [N, K, d] -> [K, N, d], adds the spatial position table and runs the
/// spatial encoder with each class channel as an independent sequence.
inline Tensor spatial_encode(const Tensor& class_tokens, const SpatialParams& p) {
    if (class_tokens.dim() != 3) {
        throw DimensionError("spatial_encode: expected [N, K, d], got " + shape_str(class_tokens.shape()));
    }
    const std::size_t k = class_tokens.shape()[1];
    Tensor z = transpose(class_tokens, {1, 0, 2});
    if (p.spatial_position.shape()[0] != z.shape()[1]) {
        throw DimensionError("spatial_encode: " + std::to_string(z.shape()[1]) + " spatial tokens but position table has " +
                             std::to_string(p.spatial_position.shape()[0]) + " rows");
    }
    z = add(z, expand_leading(p.spatial_position, {k}));
    for (const auto& layer : p.layers) z = encoder_layer(z, layer);
    return z;
}

/// [K, N, d] -> per-pixel class probabilities [H, W, K].
inline Tensor segmentation_head(const Tensor& spatial_tokens, const SpatialParams& p) {
    const std::size_t k = spatial_tokens.shape()[0];
    const std::size_t n = spatial_tokens.shape()[1];
    if (n != p.grid_rows * p.grid_cols) {
        throw DimensionError("segmentation_head: " + std::to_string(n) + " tokens for a " +
                             std::to_string(p.grid_rows) + "x" + std::to_string(p.grid_cols) + " patch grid");
    }
    const Tensor pixels = linear(spatial_tokens, p.head);  // [K, N, h*w]
    const Tensor grid = reshape(pixels, {k, p.grid_rows, p.grid_cols, p.h, p.w});
    const Tensor logits = reshape(transpose(grid, {1, 3, 2, 4, 0}), {p.grid_rows * p.h, p.grid_cols * p.w, k});
    return softmax_lastdim(logits);
}

/// Tokenization through temporal encoding for one branch: [N, K, d].
inline Tensor branch_class_tokens(const Tensor& x, const std::vector<int>& dates, const BranchParams& p) {
    return temporal_encode(embed_and_prepend(patchify(x, p.tokenizer), patch_dates(dates, p.tokenizer.t), p), p);
}

/// Single-modality TSViT: [T, H, W, C] plus T acquisition days -> [H, W, K].
inline Tensor sm_tsvit_forward(const Tensor& x, const std::vector<int>& dates, const TSViTParams& p) {
    if (x.dim() == 4 && dates.size() != x.shape()[0]) {
        throw DataError("sm_tsvit_forward: " + std::to_string(dates.size()) + " dates for " +
                        std::to_string(x.shape()[0]) + " time steps");
    }
    return segmentation_head(spatial_encode(branch_class_tokens(x, dates, p.branch), p.spatial), p.spatial);
}

}  // namespace mmtsvit
