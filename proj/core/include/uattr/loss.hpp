#pragma once

#include <cstdint>
#include <vector>

#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"

namespace uattr {

// Pixel mask over the image grid. The MSE is always normalized by the active
// pixel count, so a mask with every pixel active is bit-identical to passing
// no mask at all.
struct RegionMask {
    std::vector<std::uint8_t> active;

    static RegionMask all(const ImageShape& shape);
    static RegionMask rect(const ImageShape& shape, int row0, int col0, int rows, int cols);
    void validate(std::size_t pixel_count) const;
    std::size_t active_count() const;
};

// Mean squared error between prediction and target over active pixels.
double loss_core(const std::vector<double>& pred, const std::vector<double>& eps,
                 const RegionMask* region = nullptr);

void loss_core_grad(const std::vector<double>& pred, const std::vector<double>& eps,
                    const RegionMask* region, std::vector<double>& dpred);

// Noise used by strided loss evaluation, keyed by (seed, example id, t) so the
// same example sees the same noise under any two parameter vectors.
std::vector<double> loss_noise(std::uint64_t noise_seed, std::int64_t id, int t, std::size_t count);

// Denoising loss for one example at one timestep with explicit noise.
double ddpm_loss(const Denoiser& denoiser, const NoiseSchedule& schedule, const ParamVector& theta,
                 const Example& example, int t, const std::vector<double>& eps,
                 const RegionMask* region = nullptr);

// Same, additionally accumulating the parameter gradient into grad.
double ddpm_loss_grad(const Denoiser& denoiser, const NoiseSchedule& schedule,
                      const ParamVector& theta, const Example& example, int t,
                      const std::vector<double>& eps, const RegionMask* region,
                      std::vector<double>& grad);

// Deterministic strided timestep set {1, 1+stride, 1+2*stride, ...} within [1, T].
std::vector<int> strided_timesteps(const NoiseSchedule& schedule, int stride);

// Loss averaged over the strided timestep set with keyed noise.
double strided_loss(const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const ParamVector& theta, const Example& example, int stride,
                    std::uint64_t noise_seed, const RegionMask* region = nullptr);

// Gradient of strided_loss w.r.t. theta, accumulated into grad; returns the loss.
double strided_loss_grad(const Denoiser& denoiser, const NoiseSchedule& schedule,
                         const ParamVector& theta, const Example& example, int stride,
                         std::uint64_t noise_seed, const RegionMask* region,
                         std::vector<double>& grad);

}  // namespace uattr
