#pragma once

#include <cstdint>
#include <vector>

#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"

namespace uattr {

// Ancestral DDPM sampling from pure noise, conditioned on a class label.
// All randomness is keyed by eps_seed: the initial x_T and every per-step
// noise draw, so the same seed walks the same trajectory under any theta.
// The final image is clamped to [-1, 1].
std::vector<double> sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                           const ParamVector& theta, int label, std::uint64_t eps_seed);

}  // namespace uattr
