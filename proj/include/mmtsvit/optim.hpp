#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "grad_check.hpp"

namespace mmtsvit {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and bound to the parameter order given then.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t steps() const { return step_; }

    void step(const std::vector<NamedTensor>& params) {
        if (m_.empty()) {
            for (const auto& [name, p] : params) {
                m_.emplace_back(p.numel(), 0.0);
                v_.emplace_back(p.numel(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
        for (const auto& [name, p] : params) {
            if (!p.has_grad()) throw ContractError("Adam: parameter '" + name + "' has no gradient");
        }
        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i].second;
            const auto g = p.grad();
            auto x = p.mutable_data();
            auto& m = m_[i];
            auto& v = v_[i];
            if (m.size() != x.size()) throw ContractError("Adam: parameter '" + params[i].first + "' changed size");
            for (std::size_t e = 0; e < x.size(); ++e) {
                m[e] = cfg_.beta1 * m[e] + (1.0 - cfg_.beta1) * g[e];
                v[e] = cfg_.beta2 * v[e] + (1.0 - cfg_.beta2) * g[e] * g[e];
                x[e] -= cfg_.lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mmtsvit
