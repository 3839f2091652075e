#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <vector>

#include "random.hpp"
#include "sits.hpp"

namespace mmtsvit {

namespace detail {

/// Source sample positions and weights for one output axis under the
/// half-pixel-center convention.
struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

inline AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps taps;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double s = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(s));
        taps.lo.push_back(lo);
        taps.hi.push_back(std::min(lo + 1, in - 1));
        taps.frac.push_back(s - static_cast<double>(lo));
    }
    return taps;
}

/// a + f (b - a), kept inside [min(a, b), max(a, b)] despite rounding.
inline double lerp_clamped(double a, double b, double f) {
    const double v = a + f * (b - a);
    return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace detail

/// Bilinear upsampling of every time step and channel of X[T, H, W, C].
///
/// Output pixel i samples source coordinate (i + 0.5) * H / H_out - 0.5,
/// clamped to the border. Rows are interpolated first, then columns.
inline Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.dim() != 4) throw DimensionError("bilinear_upsample: expected [T, H, W, C], got " + shape_str(x.shape()));
    const std::size_t nt = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
    if (out_h < h || out_w < w) {
        throw ConfigError("bilinear_upsample: cannot downscale " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                          std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    const auto ty = detail::axis_taps(h, out_h);
    const auto tx = detail::axis_taps(w, out_w);
    const auto src = x.data();
    std::vector<double> out(nt * out_h * out_w * c);
    auto at = [&](std::size_t t, std::size_t y, std::size_t xx, std::size_t ch) { return src[((t * h + y) * w + xx) * c + ch]; };
    for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double top = detail::lerp_clamped(at(t, ty.lo[i], tx.lo[j], ch), at(t, ty.lo[i], tx.hi[j], ch), tx.frac[j]);
                    const double bot = detail::lerp_clamped(at(t, ty.hi[i], tx.lo[j], ch), at(t, ty.hi[i], tx.hi[j], ch), tx.frac[j]);
                    out[((t * out_h + i) * out_w + j) * c + ch] = detail::lerp_clamped(top, bot, ty.frac[i]);
                }
    return Tensor({nt, out_h, out_w, c}, std::move(out));
}

inline SITSSample bilinear_upsample(const SITSSample& s, std::size_t out_h, std::size_t out_w) {
    return {s.modality_id, bilinear_upsample(s.x, out_h, out_w), s.dates};
}

namespace detail {

inline Tensor gather_frames(const Tensor& x, const std::vector<std::size_t>& frames) {
    const std::size_t frame = x.numel() / x.shape()[0];
    std::vector<double> out;
    out.reserve(frames.size() * frame);
    const auto src = x.data();
    for (auto f : frames) out.insert(out.end(), src.begin() + f * frame, src.begin() + (f + 1) * frame);
    Shape shape = x.shape();
    shape[0] = frames.size();
    return Tensor(shape, std::move(out));
}

}  // namespace detail

/// Picks, for every target date, the frame nearest in time (ties go to the
/// earlier frame).
inline SITSSample temporal_align(const SITSSample& dense, const std::vector<int>& target_dates, int max_gap = 5) {
    if (dense.dates.empty()) throw DataError("temporal_align: modality '" + dense.modality_id + "' has no frames");
    std::vector<std::size_t> frames;
    for (int target : target_dates) {
        std::size_t best = 0;
        for (std::size_t f = 1; f < dense.dates.size(); ++f)
            if (std::abs(dense.dates[f] - target) < std::abs(dense.dates[best] - target)) best = f;
        const int gap = std::abs(dense.dates[best] - target);
        if (gap > max_gap) {
            throw DataError("temporal_align: modality '" + dense.modality_id + "' has no frame within " +
                            std::to_string(max_gap) + " days of day " + std::to_string(target) + " (nearest is " +
                            std::to_string(gap) + " days away)");
        }
        frames.push_back(best);
    }
    return {dense.modality_id, detail::gather_frames(dense.x, frames), target_dates};
}

inline constexpr std::array<int, 4> kRbfWindows{11, 23, 63, 127};

/// Normalized Gaussian weights of one RBF kernel for one target date, over
/// the observations within +-window days. Empty when none fall inside.
inline std::vector<std::pair<std::size_t, double>> rbf_kernel_weights(const std::vector<int>& dates, int target,
                                                                      int window) {
    const double sigma = window / 2.0;
    std::vector<std::pair<std::size_t, double>> w;
    double total = 0.0;
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const int dt = dates[i] - target;
        if (std::abs(dt) > window) continue;
        const double v = std::exp(-static_cast<double>(dt * dt) / (2.0 * sigma * sigma));
        w.emplace_back(i, v);
        total += v;
    }
    for (auto& [i, v] : w) v /= total;
    return w;
}

/// Gap-fills an irregular series onto `target_dates` with an ensemble of
/// truncated Gaussian kernels (sigma = window / 2). The result at each date
/// is the unweighted mean of the kernels holding at least one observation.
inline SITSSample rbf_gapfill(const SITSSample& irregular, const std::vector<int>& target_dates,
                              const std::vector<int>& windows = {kRbfWindows.begin(), kRbfWindows.end()}) {
    if (windows.empty()) throw ConfigError("rbf_gapfill: no kernel windows");
    const Tensor& x = irregular.x;
    const std::size_t frame = x.numel() / std::max<std::size_t>(x.shape()[0], 1);
    const auto src = x.data();
    std::vector<double> out(target_dates.size() * frame, 0.0);
    std::vector<double> acc(frame);
    for (std::size_t ti = 0; ti < target_dates.size(); ++ti) {
        std::size_t used = 0;
        double* dst = out.data() + ti * frame;
        for (int window : windows) {
            const auto w = rbf_kernel_weights(irregular.dates, target_dates[ti], window);
            if (w.empty()) continue;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (const auto& [i, v] : w)
                for (std::size_t e = 0; e < frame; ++e) acc[e] += v * src[i * frame + e];
            for (std::size_t e = 0; e < frame; ++e) dst[e] += acc[e];
            ++used;
        }
        if (used == 0) {
            throw DataError("rbf_gapfill: modality '" + irregular.modality_id + "' has no observation within " +
                            std::to_string(*std::max_element(windows.begin(), windows.end())) + " days of day " +
                            std::to_string(target_dates[ti]));
        }
        for (std::size_t e = 0; e < frame; ++e) dst[e] /= static_cast<double>(used);
    }
    Shape shape = x.shape();
    shape[0] = target_dates.size();
    return {irregular.modality_id, Tensor(shape, std::move(out)), target_dates};
}

namespace detail {

inline Tensor flip_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
    for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
    const std::size_t n = s[axis];
    const auto src = x.data();
    std::vector<double> out(src.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(src.begin() + (o * n + i) * inner, inner, out.begin() + (o * n + (n - 1 - i)) * inner);
    return Tensor(s, std::move(out));
}

}  // namespace detail

/// Mirrors every modality and the label map left-right.
inline CoRegisteredSet flip_horizontal(CoRegisteredSet set) {
    for (auto& s : set.samples) s.x = detail::flip_axis(s.x, 2);
    auto& l = set.labels;
    for (std::size_t y = 0; y < l.height; ++y) std::reverse(l.classes.begin() + y * l.width, l.classes.begin() + (y + 1) * l.width);
    return set;
}

/// Mirrors every modality and the label map top-bottom.
inline CoRegisteredSet flip_vertical(CoRegisteredSet set) {
    for (auto& s : set.samples) s.x = detail::flip_axis(s.x, 1);
    auto& l = set.labels;
    for (std::size_t y = 0; y < l.height / 2; ++y)
        std::swap_ranges(l.classes.begin() + y * l.width, l.classes.begin() + (y + 1) * l.width,
                         l.classes.begin() + (l.height - 1 - y) * l.width);
    return set;
}

/// Horizontal, then vertical flip, each drawn with probability 1/2.
inline CoRegisteredSet random_flip(CoRegisteredSet set, Rng& rng) {
    const bool h = rng.coin();
    const bool v = rng.coin();
    if (h) set = flip_horizontal(std::move(set));
    if (v) set = flip_vertical(std::move(set));
    return set;
}

}  // namespace mmtsvit
