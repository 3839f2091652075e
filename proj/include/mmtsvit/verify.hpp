#pragma once

#include "grad_check.hpp"
#include "fusion.hpp"
#include "loss.hpp"

namespace mmtsvit {

/// The fixed configuration used to gradient-check an architecture: T=4,
/// H=W=4, h=w=2, t=1, d=8, K=3, L_T=2, L_S=1, heads=2, and two modalities
/// (one for SM). Every weight, bias included, is drawn uniformly from
/// [-0.3, 0.3] so no term of the backward pass is trivially zero.
inline GradCheckReport architecture_grad_check(FusionMode mode, std::uint64_t seed = 7, double tol = 1e-4) {
    ModelConfig cfg;
    cfg.t = 1;
    cfg.h = cfg.w = 2;
    cfg.d = 8;
    cfg.num_classes = 3;
    cfg.temporal_depth = 2;
    cfg.spatial_depth = 1;
    cfg.heads = 2;
    cfg.height = cfg.width = 4;
    const std::vector<std::size_t> channels = mode == FusionMode::SM ? std::vector<std::size_t>{3} : std::vector<std::size_t>{2, 3};

    Rng rng(seed);
    MMParams p = MMParams::init(mode, cfg, channels, rng);
    for (auto& [name, t] : p.named_parameters())
        for (auto& v : t.mutable_data()) v = rng.uniform(-0.3, 0.3);
    std::vector<SITSSample> samples;
    for (std::size_t j = 0; j < channels.size(); ++j) {
        SITSSample s{"m" + std::to_string(j), Tensor::zeros({4, 4, 4, channels[j]}), {10, 40, 70, 100}};
        for (auto& v : s.x.mutable_data()) v = rng.uniform(-1.0, 1.0);
        samples.push_back(std::move(s));
    }
    LabelMap labels{4, 4, std::vector<std::uint16_t>(16)};
    for (auto& c : labels.classes) c = static_cast<std::uint16_t>(rng.index(3));
    return grad_check([&] { return cross_entropy_loss(mm_forward(samples, p), labels); }, p.named_parameters(), 1e-5, tol);
}

}  // namespace mmtsvit
