#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace mmtsvit {

struct GradCheckEntry {
    std::string name;
    double relative_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool passed() const {
        for (const auto& e : entries)
            if (!(e.relative_error < tolerance)) return false;
        return true;
    }

    const GradCheckEntry* worst() const {
        const GradCheckEntry* w = nullptr;
        for (const auto& e : entries)
            if (!w || e.relative_error > w->relative_error || std::isnan(e.relative_error)) w = &e;
        return w;
    }
};

inline constexpr double kGradCheckFloor = 1e-6;

using NamedTensor = std::pair<std::string, Tensor>;

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences, one parameter tensor at a time.
///
/// The relative error of a tensor is ||g_analytic - g_numeric||_2 divided by
/// max(||g_analytic||_2 + ||g_numeric||_2, kGradCheckFloor); the floor keeps
/// parameters with an identically zero gradient from reporting round-off as
/// error. `loss_fn` must rebuild the graph from the current parameter values
/// on every call.
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                  double step = 1e-5, double tol = 1e-4) {
    if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
    active_tape().clear();
    for (auto [name, p] : params) {
        p.set_requires_grad(true);
        p.clear_grad();
    }
    backward(loss_fn());

    GradCheckReport report;
    report.tolerance = tol;
    NoGradGuard no_grad;
    for (auto [name, p] : params) {
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0, max_abs = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss_fn().item();
            values[i] = saved - step;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double d = analytic[i] - numeric;
            diff_sq += d * d;
            a_sq += analytic[i] * analytic[i];
            n_sq += numeric * numeric;
            max_abs = std::max(max_abs, std::abs(d));
        }
        const double denom = std::max(std::sqrt(a_sq) + std::sqrt(n_sq), kGradCheckFloor);
        report.entries.push_back({name, std::sqrt(diff_sq) / denom, max_abs});
    }
    return report;
}

}  // namespace mmtsvit
