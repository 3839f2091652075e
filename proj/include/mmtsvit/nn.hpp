#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "ops.hpp"
#include "random.hpp"

namespace mmtsvit {

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    return t;
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, stddev);
    return t;
}

/// y = x W + b over the last axis. `bias` may be left undefined.
struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
        Linear l;
        l.weight = uniform_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
        if (with_bias) l.bias = Tensor::zeros({out}, true);
        return l;
    }

    std::size_t in_features() const { return weight.shape()[0]; }
    std::size_t out_features() const { return weight.shape()[1]; }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        if (bias.defined()) f(prefix + ".bias", bias);
    }
};

inline Tensor linear(const Tensor& x, const Linear& l) {
    Tensor y = matmul(x, l.weight);
    if (!l.bias.defined()) return y;
    Shape lead(y.shape().begin(), y.shape().end() - 1);
    return add(y, expand_leading(l.bias, lead));
}

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    static LayerNormParams init(std::size_t d) { return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)}; }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gamma", gamma);
        f(prefix + ".beta", beta);
    }
};

inline Tensor layernorm(const Tensor& x, const LayerNormParams& p) { return layernorm(x, p.gamma, p.beta, 1e-5); }

/// Projections producing queries, keys and values, plus the output map.
struct AttentionParams {
    Tensor wq, wk, wv;  // [d, d]
    Linear out;         // d -> d
    std::size_t heads = 1;

    static AttentionParams init(std::size_t d, std::size_t heads, Rng& rng) {
        if (heads == 0 || d % heads != 0) {
            throw ConfigError("token dimension " + std::to_string(d) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        AttentionParams p;
        p.wq = uniform_init({d, d}, bound, rng);
        p.wk = uniform_init({d, d}, bound, rng);
        p.wv = uniform_init({d, d}, bound, rng);
        p.out = Linear::init(d, d, rng);
        p.heads = heads;
        return p;
    }

    std::size_t dim() const { return wq.shape()[0]; }

    void validate() const {
        if (heads == 0 || dim() % heads != 0) {
            throw ConfigError("token dimension " + std::to_string(dim()) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".wq", wq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        out.visit(prefix + ".out", f);
    }
};

/// Pre-norm transformer layer: x + Attn(LN(x)), then + MLP(LN(.)).
struct EncoderLayerParams {
    LayerNormParams norm1;
    AttentionParams attention;
    LayerNormParams norm2;
    Linear mlp_in;   // d -> r*d
    Linear mlp_out;  // r*d -> d

    static EncoderLayerParams init(std::size_t d, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
        EncoderLayerParams p;
        p.norm1 = LayerNormParams::init(d);
        p.attention = AttentionParams::init(d, heads, rng);
        p.norm2 = LayerNormParams::init(d);
        p.mlp_in = Linear::init(d, mlp_ratio * d, rng);
        p.mlp_out = Linear::init(mlp_ratio * d, d, rng);
        return p;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        norm1.visit(prefix + ".norm1", f);
        attention.visit(prefix + ".attn", f);
        norm2.visit(prefix + ".norm2", f);
        mlp_in.visit(prefix + ".mlp_in", f);
        mlp_out.visit(prefix + ".mlp_out", f);
    }
};

/// [B, S, d] -> [B, heads, S, d/heads]
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
    if (x.dim() != 3) throw DimensionError("split_heads: expected [B, S, d], got " + shape_str(x.shape()));
    const auto b = x.shape()[0], s = x.shape()[1], d = x.shape()[2];
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("token dimension " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    return transpose(reshape(x, {b, s, heads, d / heads}), {0, 2, 1, 3});
}

/// [B, heads, S, dh] -> [B, S, heads * dh]
inline Tensor merge_heads(const Tensor& x) {
    const auto b = x.shape()[0], h = x.shape()[1], s = x.shape()[2], dh = x.shape()[3];
    return reshape(transpose(x, {0, 2, 1, 3}), {b, s, h * dh});
}

/// softmax(Q K^T / sqrt(dk)) over matching leading dimensions; dk is the
/// last extent of Q (the per-head width).
inline Tensor cross_attention_weights(const Tensor& queries, const Tensor& keys) {
    if (queries.shape() != keys.shape()) {
        throw DimensionError("cross_attention_weights: query shape " + shape_str(queries.shape()) +
                             " does not match key shape " + shape_str(keys.shape()));
    }
    const std::size_t r = keys.dim();
    if (r < 2) throw DimensionError("cross_attention_weights: rank must be >= 2");
    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    std::swap(perm[r - 1], perm[r - 2]);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(queries.shape().back()));
    return softmax_lastdim(scale(matmul(queries, transpose(keys, perm)), inv_sqrt));
}

/// Self-attention weights are the cross weights of a modality with itself.
inline Tensor attention_weights(const Tensor& queries, const Tensor& keys) {
    return cross_attention_weights(queries, keys);
}

inline Tensor self_attention(const Tensor& tokens, const AttentionParams& p) {
    if (tokens.dim() != 3 || tokens.shape()[1] == 0) {
        throw DimensionError("self_attention: expected non-empty [B, S, d], got " + shape_str(tokens.shape()));
    }
    p.validate();
    const Tensor q = split_heads(matmul(tokens, p.wq), p.heads);
    const Tensor k = split_heads(matmul(tokens, p.wk), p.heads);
    const Tensor v = split_heads(matmul(tokens, p.wv), p.heads);
    return linear(merge_heads(matmul(attention_weights(q, k), v)), p.out);
}

/// Mean over senders i != j of softmax(Q_i K_j^T / sqrt(dk)), summed in
/// ascending modality order. Inputs are head-split [B, heads, S, dh].
inline Tensor averaged_cross_attention_weights(const std::vector<Tensor>& head_queries, const Tensor& head_keys,
                                               std::size_t j) {
    const std::size_t m = head_queries.size();
    if (m < 2) throw ConfigError("CAF requires >= 2 modalities");
    if (j >= m) throw ConfigError("cross attention: modality index out of range");
    std::vector<Tensor> weights;
    weights.reserve(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
        if (i == j) continue;
        weights.push_back(cross_attention_weights(head_queries[i], head_keys));
    }
    return mean_of(weights);
}

/// Cross attention for receiving modality j. `queries_all` holds the
/// projected queries [B, S, d] of every modality (entry j is ignored);
/// `keys` and `values` are modality j's projections.
inline Tensor cross_attention(const std::vector<Tensor>& queries_all, const Tensor& keys, const Tensor& values,
                              const AttentionParams& p, std::size_t j) {
    if (queries_all.size() < 2) throw ConfigError("CAF requires >= 2 modalities");
    p.validate();
    std::vector<Tensor> head_queries;
    head_queries.reserve(queries_all.size());
    for (const auto& q : queries_all) {
        if (q.shape() != keys.shape()) {
            throw DimensionError("cross_attention: query shape " + shape_str(q.shape()) + " does not match key shape " +
                                 shape_str(keys.shape()));
        }
        head_queries.push_back(split_heads(q, p.heads));
    }
    const Tensor weights = averaged_cross_attention_weights(head_queries, split_heads(keys, p.heads), j);
    return linear(merge_heads(matmul(weights, split_heads(values, p.heads))), p.out);
}

inline Tensor mlp_block(const Tensor& x, const EncoderLayerParams& p) {
    return linear(gelu(linear(x, p.mlp_in)), p.mlp_out);
}

inline Tensor encoder_layer(const Tensor& tokens, const EncoderLayerParams& p) {
    const Tensor h = add(tokens, self_attention(layernorm(tokens, p.norm1), p.attention));
    return add(h, mlp_block(layernorm(h, p.norm2), p));
}

/// One layer of M modality-specific encoders whose attention blocks are
/// replaced by cross attention: modality i's queries come from its own W_q
/// applied to its own normalized input, keys/values from the receiver.
inline std::vector<Tensor> cross_encoder_layer(const std::vector<Tensor>& tokens,
                                               const std::vector<const EncoderLayerParams*>& params) {
    const std::size_t m = tokens.size();
    if (m < 2) throw ConfigError("CAF requires >= 2 modalities");
    if (params.size() != m) throw ConfigError("cross_encoder_layer: one parameter set per modality required");
    std::vector<Tensor> normed(m), queries(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (tokens[i].shape() != tokens[0].shape()) {
            throw FusionError("cross attention: modality " + std::to_string(i) + " token shape " +
                              shape_str(tokens[i].shape()) + " differs from modality 0 shape " +
                              shape_str(tokens[0].shape()));
        }
        normed[i] = layernorm(tokens[i], params[i]->norm1);
        queries[i] = matmul(normed[i], params[i]->attention.wq);
    }
    std::vector<Tensor> out(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto& p = *params[j];
        const Tensor keys = matmul(normed[j], p.attention.wk);
        const Tensor values = matmul(normed[j], p.attention.wv);
        const Tensor h = add(tokens[j], cross_attention(queries, keys, values, p.attention, j));
        out[j] = add(h, mlp_block(layernorm(h, p.norm2), p));
    }
    return out;
}

}  // namespace mmtsvit
