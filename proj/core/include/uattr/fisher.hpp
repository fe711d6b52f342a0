#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/param_vector.hpp"

namespace uattr {

// Diagonal Fisher estimate: values[i] is the mean over draws of the squared
// per-example single-timestep loss gradient. Values are kept in double; the
// on-disk payload is f32 like every other container.
struct FisherDiagonal {
    std::vector<double> values;
    LayoutPtr layout;
    std::uint64_t sample_count = 0;
    double damping = 1e-8;

    void validate() const;
    double mean_value() const;
};

// Generic accumulator: grad_fn(i, grad) must fill `grad` with draw i's
// gradient. Draw squares are combined with a binary-counter pairwise
// reduction, so an estimate over 2m draws (m a power of two) equals the exact
// average of the two m-draw half estimates.
FisherDiagonal fisher_from_draws(LayoutPtr layout, std::uint64_t draws,
                                 const std::function<void(std::uint64_t, std::vector<double>&)>& grad_fn,
                                 double damping);

// Per-draw sampling: example uniform over ids (sorted ascending, so the
// estimate is invariant to example reordering), timestep uniform in [1, T],
// fresh noise. Draw i is keyed by (seed, draw_offset + i); draw_offset lets
// two half runs reproduce the exact halves of a full run.
FisherDiagonal estimate_fisher(const Dataset& ds, const ParamVector& theta0,
                               const Denoiser& denoiser, const NoiseSchedule& schedule,
                               std::uint64_t draws, std::uint64_t seed, double damping = 1e-8,
                               std::uint64_t draw_offset = 0);

// out[i] = g[i] / (F[i] + damping * mean(F)) inside masked segments, 0
// elsewhere. An empty mask means every segment. When mean(F) is zero the
// damping falls back to its absolute value so the output stays finite.
std::vector<double> precondition(std::span<const double> g, const FisherDiagonal& F,
                                 const std::vector<std::string>& mask_names);
ParamVector precondition(const ParamVector& g, const FisherDiagonal& F,
                         const std::vector<std::string>& mask_names);

void save_fisher(const std::filesystem::path& path, const FisherDiagonal& F,
                 const std::string& meta_json);
struct LoadedFisher {
    FisherDiagonal fisher;
    std::string meta_json;
};
LoadedFisher load_fisher(const std::filesystem::path& path);

}  // namespace uattr
