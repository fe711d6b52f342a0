#pragma once

#include <cstdint>
#include <vector>

#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"

namespace uattr {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    bool flip_augment = true;
    std::uint64_t seed = 7;

    void validate() const;
};

struct TrainResult {
    ParamVector theta;
    std::vector<double> epoch_losses;        // mean per-example loss per epoch
    std::vector<std::int64_t> removed_ids;   // set by retrain_leave_k
};

// Deterministic SGD+momentum training. The shuffle order, per-example
// timestep, noise, and flip draws are keyed by (seed, epoch, id) over the full
// id universe [0, spec.n), so removing examples never reshuffles the rest:
// their batches shrink and the schedule stays aligned across leave-K-out runs.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const Denoiser& denoiser,
                  const NoiseSchedule& schedule);

TrainResult retrain_leave_k(const Dataset& ds, const std::vector<std::int64_t>& removed,
                            const TrainConfig& cfg, const Denoiser& denoiser,
                            const NoiseSchedule& schedule);

}  // namespace uattr
