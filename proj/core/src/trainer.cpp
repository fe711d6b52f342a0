#include "uattr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "uattr/common.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"

namespace uattr {

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorKind::validation, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::validation, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::validation, "learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorKind::validation, "momentum must be in [0, 1)");
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const Denoiser& denoiser,
                  const NoiseSchedule& schedule) {
    cfg.validate();
    if (ds.examples.empty()) fail(ErrorKind::validation, "train: dataset is empty");
    const int universe = ds.spec.n;
    if (universe < 1) fail(ErrorKind::validation, "train: dataset spec has no id universe");

    std::unordered_map<std::int64_t, std::size_t> index_of;
    index_of.reserve(ds.examples.size());
    for (std::size_t i = 0; i < ds.examples.size(); ++i) index_of[ds.examples[i].id] = i;

    TrainResult result;
    result.theta = denoiser.init_params(cfg.seed);
    const std::size_t dim = result.theta.size();
    const int T = schedule.timesteps();
    const std::size_t pixels = std::size_t(denoiser.pixel_count());

    std::vector<double> velocity(dim, 0.0);
    std::vector<double> batch_grad(dim);
    std::vector<double> example_grad(dim);
    std::vector<double> eps(pixels);
    std::vector<std::pair<std::uint64_t, std::int64_t>> order(static_cast<std::size_t>(universe));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // shuffle over the full id universe, removal-independent
        for (int id = 0; id < universe; ++id)
            order[std::size_t(id)] = {make_key(Stream::shuffle, cfg.seed, std::uint64_t(epoch), std::uint64_t(id)), id};
        std::sort(order.begin(), order.end());

        std::vector<double> epoch_example_losses;
        epoch_example_losses.reserve(ds.examples.size());

        const int batches = (universe + cfg.batch_size - 1) / cfg.batch_size;
        for (int b = 0; b < batches; ++b) {
            std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
            std::size_t present = 0;
            std::vector<double> batch_losses;
            const int lo = b * cfg.batch_size;
            const int hi = std::min(universe, lo + cfg.batch_size);
            for (int slot = lo; slot < hi; ++slot) {
                const std::int64_t id = order[std::size_t(slot)].second;
                auto it = index_of.find(id);
                if (it == index_of.end()) continue;
                const Example& base = ds.examples[it->second];

                const int t = 1 + int(uniform_index(
                                  make_key(Stream::train_timestep, cfg.seed, std::uint64_t(epoch), std::uint64_t(id)),
                                  0, std::uint64_t(T)));
                fill_normal(make_key(Stream::train_noise, cfg.seed, std::uint64_t(epoch), std::uint64_t(id)),
                            std::span<double>(eps));
                const bool use_flip =
                    cfg.flip_augment &&
                    uniform01(make_key(Stream::train_flip, cfg.seed, std::uint64_t(epoch), std::uint64_t(id)), 0) < 0.5;

                std::fill(example_grad.begin(), example_grad.end(), 0.0);
                double loss;
                if (use_flip) {
                    const Example flipped = flip(base, ds.shape);
                    loss = ddpm_loss_grad(denoiser, schedule, result.theta, flipped, t, eps, nullptr, example_grad);
                } else {
                    loss = ddpm_loss_grad(denoiser, schedule, result.theta, base, t, eps, nullptr, example_grad);
                }
                batch_losses.push_back(loss);
                epoch_example_losses.push_back(loss);
                for (std::size_t j = 0; j < dim; ++j) batch_grad[j] += example_grad[j];
                ++present;
            }
            if (present == 0) continue;

            const double batch_loss = mean_of(batch_losses);
            if (!std::isfinite(batch_loss))
                fail(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch) +
                                             " batch " + std::to_string(b));

            const double inv = 1.0 / double(present);
            float* theta = result.theta.values.data();
            for (std::size_t j = 0; j < dim; ++j) {
                velocity[j] = cfg.momentum * velocity[j] + batch_grad[j] * inv;
                theta[j] = float(double(theta[j]) - cfg.learning_rate * velocity[j]);
            }
        }
        result.epoch_losses.push_back(mean_of(epoch_example_losses));
    }
    result.theta.check_finite("training result");
    return result;
}

TrainResult retrain_leave_k(const Dataset& ds, const std::vector<std::int64_t>& removed,
                            const TrainConfig& cfg, const Denoiser& denoiser,
                            const NoiseSchedule& schedule) {
    const Dataset reduced = leave_out(ds, removed);
    if (reduced.examples.empty())
        fail(ErrorKind::validation, "retrain_leave_k: every example was removed");
    TrainResult result = train(reduced, cfg, denoiser, schedule);
    result.removed_ids = removed;
    std::sort(result.removed_ids.begin(), result.removed_ids.end());
    return result;
}

}  // namespace uattr
