#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "sits.hpp"
#include "tensor.hpp"

namespace mmtsvit {

/// Probabilities below this are clamped before taking the log.
inline constexpr double kLogClamp = 1e-12;

/// Mean over non-ignored pixels of -log(probs[pixel, true class]).
///
/// `probs` is [H, W, K] with per-pixel simplex rows. Pixels whose reference
/// class is in `ignore` do not contribute.
inline Tensor cross_entropy_loss(const Tensor& probs, const LabelMap& labels, const std::set<std::uint16_t>& ignore = {}) {
    if (probs.dim() != 3 || probs.shape()[0] != labels.height || probs.shape()[1] != labels.width) {
        throw DimensionError("cross_entropy_loss: prediction " + shape_str(probs.shape()) + " does not cover a " +
                             std::to_string(labels.height) + "x" + std::to_string(labels.width) + " label map");
    }
    const std::size_t k = probs.shape()[2];
    std::vector<std::size_t> picked;  // flat index into probs
    for (std::size_t p = 0; p < labels.classes.size(); ++p) {
        const auto c = labels.classes[p];
        if (ignore.contains(c)) continue;
        if (c >= k) throw DataError("label " + std::to_string(c) + " outside the " + std::to_string(k) + " predicted classes");
        picked.push_back(p * k + c);
    }
    if (picked.empty()) throw ContractError("cross_entropy_loss: every pixel is ignored");
    const auto values = probs.data();
    double total = 0.0;
    for (auto idx : picked) total -= std::log(std::max(values[idx], kLogClamp));
    const double inv_count = 1.0 / static_cast<double>(picked.size());
    return detail::make_result({}, {total * inv_count}, {probs}, [probs, picked = std::move(picked), inv_count](detail::Node& o) {
        auto g = probs.node().grad_buffer();
        const auto values = probs.data();
        for (auto idx : picked) {
            if (values[idx] > kLogClamp) g[idx] -= o.grad[0] * inv_count / values[idx];
        }
    });
}

}  // namespace mmtsvit
