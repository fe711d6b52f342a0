#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"
#include "uattr/fisher.hpp"
#include "uattr/loss.hpp"

namespace uattr {

struct UnlearnConfig {
    double alpha = 0.01;
    int steps = 1;
    std::vector<std::string> mask = {"cond_key", "cond_value"};
    int stride = 10;
    std::optional<RegionMask> region;
    std::uint64_t seed = 0;

    // alpha is accepted at 0 as well so ablations can produce a bit-identical
    // copy of theta0 through the same code path.
    void validate(const ParamLayout& layout, std::size_t pixel_count, int timesteps) const;
};

// Fisher-preconditioned ascent on the query loss:
//   theta <- theta + alpha * precondition(grad strided_loss(zhat, theta), F, mask)
// for cfg.steps iterations. The per-step loss noise is re-keyed by step index.
// theta0 is untouched; parameters outside masked segments stay bit-identical.
ParamVector unlearn(const ParamVector& theta0, const FisherDiagonal& F, const Example& zhat,
                    const UnlearnConfig& cfg, const Denoiser& denoiser,
                    const NoiseSchedule& schedule);

// Same loop without preconditioning (F replaced by identity); ablation arm.
ParamVector unlearn_sgd_baseline(const ParamVector& theta0, const Example& zhat,
                                 const UnlearnConfig& cfg, const Denoiser& denoiser,
                                 const NoiseSchedule& schedule);

}  // namespace uattr
