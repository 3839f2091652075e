#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace mmtsvit {

namespace testing_hooks {
/// When set, the GELU adjoint is recorded with its sign flipped. Exists only
/// so the gradient checker can be shown to catch a broken backward pass.
inline bool& flip_gelu_adjoint() {
    static bool flag = false;
    return flag;
}
}  // namespace testing_hooks

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void accumulate(const Tensor& target, std::span<const double> delta) {
    if (!target.requires_grad()) return;
    auto g = target.node().grad_buffer();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

// C[m,n] += A[m,k] * B[k,n], all row-major and contiguous.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        const double* a0 = a + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = brow[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double v = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += v * brow[j];
        }
    }
}

// out[c,r] = in[r,c]
inline void transpose2d(const double* in, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

inline double gelu_value(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
        detail::accumulate(a, o.grad);
        detail::accumulate(b, o.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
        detail::accumulate(a, o.grad);
        if (b.requires_grad()) {
            auto g = b.node().grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

/// Elementwise (Hadamard) product of equal-shape tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
        if (a.requires_grad()) {
            auto g = a.node().grad_buffer();
            const auto y = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y[i];
        }
        if (b.requires_grad()) {
            auto g = b.node().grad_buffer();
            const auto x = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    return detail::make_result(a.shape(), std::move(out), {a}, [a, s](detail::Node& o) {
        auto g = a.node().grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(x[i]);
    const double sign = testing_hooks::flip_gelu_adjoint() ? -1.0 : 1.0;
    return detail::make_result(a.shape(), std::move(out), {a}, [a, sign](detail::Node& o) {
        auto g = a.node().grad_buffer();
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o.grad[i] * detail::gelu_derivative(x[i]);
    });
}

/// Batched matrix product. `a` is [..., m, k]; `b` is either [..., k, n] with
/// the same leading dimensions, or a plain [k, n] matrix shared by every batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || b.dim() < 2) {
        throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[a.dim() - 2];
    const std::size_t k = a.shape()[a.dim() - 1];
    const std::size_t kb = b.shape()[b.dim() - 2];
    const std::size_t n = b.shape()[b.dim() - 1];
    const bool shared_b = b.dim() == 2;
    bool ok = k == kb;
    if (ok && !shared_b) {
        ok = a.dim() == b.dim() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
    }
    if (!ok) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(batch * m * n, 0.0);
    if (shared_b) {
        detail::gemm_acc(a.data().data(), b.data().data(), out.data(), batch * m, k, n);
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            detail::gemm_acc(a.data().data() + s * m * k, b.data().data() + s * k * n, out.data() + s * m * n, m, k,
                             n);
        }
    }
    return detail::make_result(std::move(out_shape), std::move(out), {a, b},
                               [a, b, m, k, n, batch, shared_b](detail::Node& o) {
        const double* dc = o.grad.data();
        if (a.requires_grad()) {
            // dA = dC * B^T
            double* da = a.node().grad_buffer().data();
            std::vector<double> bt(k * n);
            if (shared_b) {
                detail::transpose2d(b.data().data(), bt.data(), k, n);
                detail::gemm_acc(dc, bt.data(), da, batch * m, n, k);
            } else {
                for (std::size_t s = 0; s < batch; ++s) {
                    detail::transpose2d(b.data().data() + s * k * n, bt.data(), k, n);
                    detail::gemm_acc(dc + s * m * n, bt.data(), da + s * m * k, m, n, k);
                }
            }
        }
        if (b.requires_grad()) {
            // dB = A^T * dC
            double* db = b.node().grad_buffer().data();
            if (shared_b) {
                std::vector<double> at(batch * m * k);
                detail::transpose2d(a.data().data(), at.data(), batch * m, k);
                detail::gemm_acc(at.data(), dc, db, k, batch * m, n);
            } else {
                std::vector<double> at(m * k);
                for (std::size_t s = 0; s < batch; ++s) {
                    detail::transpose2d(a.data().data() + s * m * k, at.data(), m, k);
                    detail::gemm_acc(at.data(), dc + s * m * n, db + s * k * n, k, m, n);
                }
            }
        }
    });
}

/// Softmax over the last axis, computed with per-slice max subtraction.
inline Tensor softmax_lastdim(const Tensor& x) {
    if (x.dim() == 0 || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last axis");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * n;
        double* dst = out.data() + r * n;
        double mx = src[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, src[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(src[j] - mx);
            total += dst[j];
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [x, n, rows](detail::Node& o) {
        auto g = x.node().grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * n;
            const double* dy = o.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

/// Layer normalization over the last axis with affine gamma/beta of length d.
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ConfigError("layernorm: eps must be positive");
    if (x.dim() == 0) throw DimensionError("layernorm: scalar input");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layernorm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " do not match last axis of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto in = x.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += src[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (src[j] - mean) * (src[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (src[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gm[j] + bt[j];
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                               [x, gamma, beta, d, rows, xhat = std::move(xhat),
                                inv_std = std::move(inv_std)](detail::Node& o) {
        const auto gm = gamma.data();
        if (gamma.requires_grad() || beta.requires_grad()) {
            std::vector<double> dg(d, 0.0), db(d, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < d; ++j) {
                    dg[j] += o.grad[r * d + j] * xhat[r * d + j];
                    db[j] += o.grad[r * d + j];
                }
            }
            detail::accumulate(gamma, dg);
            detail::accumulate(beta, db);
        }
        if (x.requires_grad()) {
            auto g = x.node().grad_buffer();
            std::vector<double> dh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dh[j] = o.grad[r * d + j] * gm[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * xhat[r * d + j];
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    g[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                }
            }
        }
    });
}

/// Sum of all elements, as a scalar.
inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return detail::make_result({}, {total}, {x}, [x](detail::Node& o) {
        auto g = x.node().grad_buffer();
        const double dy = o.grad[0];
        for (auto& v : g) v += dy;
    });
}

/// Mean over one axis; the axis is removed from the result shape.
inline Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.dim()) throw DimensionError("mean_over_axis: axis out of range for " + shape_str(x.shape()));
    const Shape& s = x.shape();
    const std::size_t len = s[axis];
    if (len == 0) throw DimensionError("mean_over_axis: empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::vector<double> out(outer * inner, 0.0);
    const auto in = x.data();
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * len + a) * inner + i];
    for (auto& v : out) v *= inv;
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [x, outer, len, inner, inv](detail::Node& n) {
        auto g = x.node().grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < len; ++a)
                for (std::size_t i = 0; i < inner; ++i) g[(o * len + a) * inner + i] += n.grad[o * inner + i] * inv;
    });
}

/// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t total = out_shape[axis];
    std::vector<double> out(numel_of(out_shape));
    std::size_t base = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[axis];
        const auto in = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(in.data() + o * len * inner, len * inner, out.data() + (o * total + base) * inner);
        base += len;
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts, [parts, axis, outer, inner, total](detail::Node& n) {
        std::size_t base = 0;
        for (const auto& p : parts) {
            const std::size_t len = p.shape()[axis];
            if (p.requires_grad()) {
                auto g = p.node().grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = n.grad.data() + (o * total + base) * inner;
                    double* dst = g.data() + o * len * inner;
                    for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            base += len;
        }
    });
}

/// Axis permutation: result axis i is input axis perm[i].
inline Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    if (perm.size() != s.size()) throw DimensionError("transpose: permutation rank mismatch for " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    for (auto p : perm) {
        if (p >= s.size() || seen[p]) throw DimensionError("transpose: invalid permutation for " + shape_str(s));
        seen[p] = true;
    }
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
    const auto in_strides = detail::strides_of(s);
    // Stride in the input for each output axis.
    std::vector<std::size_t> src_stride(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) src_stride[i] = in_strides[perm[i]];
    const std::size_t total = x.numel();
    // Maps each output flat index to its input flat index.
    std::vector<std::size_t> index_map(total);
    {
        std::vector<std::size_t> idx(s.size(), 0);
        std::size_t src = 0;
        for (std::size_t flat = 0; flat < total; ++flat) {
            index_map[flat] = src;
            for (std::size_t ax = s.size(); ax-- > 0;) {
                ++idx[ax];
                src += src_stride[ax];
                if (idx[ax] < out_shape[ax]) break;
                src -= src_stride[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
    }
    std::vector<double> out(total);
    const auto in = x.data();
    for (std::size_t i = 0; i < total; ++i) out[i] = in[index_map[i]];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [x, index_map = std::move(index_map)](detail::Node& n) {
        auto g = x.node().grad_buffer();
        for (std::size_t i = 0; i < index_map.size(); ++i) g[index_map[i]] += n.grad[i];
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return detail::make_result(std::move(shape), x.values(), {x}, [x](detail::Node& n) { detail::accumulate(x, n.grad); });
}

/// Contiguous range [start, start + length) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw DimensionError("slice: axis out of range for " + shape_str(s));
    if (start + length > s[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") exceeds axis " + std::to_string(axis) + " of " + shape_str(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<double> out(outer * length * inner);
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(in.data() + (o * len + start) * inner, length * inner, out.data() + o * length * inner);
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [x, outer, inner, len, start, length](detail::Node& n) {
        auto g = x.node().grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = n.grad.data() + o * length * inner;
            double* dst = g.data() + (o * len + start) * inner;
            for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
        }
    });
}

/// Rows of a [R, d] table selected by index, as [indices.size(), d].
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
    if (table.dim() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t rows = table.shape()[0];
    const std::size_t d = table.shape()[1];
    std::vector<double> out(indices.size() * d);
    const auto in = table.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                                 std::to_string(rows) + " rows");
        }
        std::copy_n(in.data() + indices[i] * d, d, out.data() + i * d);
    }
    return detail::make_result({indices.size(), d}, std::move(out), {table}, [table, indices, d](detail::Node& n) {
        auto g = table.node().grad_buffer();
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[indices[i] * d + j] += n.grad[i * d + j];
    });
}

/// Explicit broadcast: repeats `x` to shape `leading ++ x.shape()`.
inline Tensor expand_leading(const Tensor& x, const Shape& leading) {
    const std::size_t reps = numel_of(leading);
    Shape out_shape = leading;
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    const std::size_t n = x.numel();
    std::vector<double> out(reps * n);
    for (std::size_t r = 0; r < reps; ++r) std::copy_n(x.data().data(), n, out.data() + r * n);
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [x, reps, n](detail::Node& node) {
        auto g = x.node().grad_buffer();
        for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t i = 0; i < n; ++i) g[i] += node.grad[r * n + i];
    });
}

/// Arithmetic mean of equal-shape tensors, summed in list order.
inline Tensor mean_of(const std::vector<Tensor>& items) {
    if (items.empty()) throw DimensionError("mean_of: empty list");
    Tensor acc = items.front();
    for (std::size_t i = 1; i < items.size(); ++i) acc = add(acc, items[i]);
    return scale(acc, 1.0 / static_cast<double>(items.size()));
}

}  // namespace mmtsvit
