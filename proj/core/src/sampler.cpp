#include "uattr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"

namespace uattr {

std::vector<double> sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                           const ParamVector& theta, int label, std::uint64_t eps_seed) {
    const int T = schedule.timesteps();
    std::vector<double> x(std::size_t(denoiser.pixel_count()));
    // counter tag 0 is the initial x_T draw; tags 2..T are the per-step noises
    fill_normal(make_key(Stream::sample_noise, eps_seed, 0), std::span<double>(x));

    std::vector<double> xi(x.size());
    for (int t = T; t >= 1; --t) {
        const auto eps_hat = denoiser.forward(theta, x, t, label);
        const double scale = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
        const double sigma = schedule.posterior_sigma(t);
        if (t > 1)
            fill_normal(make_key(Stream::sample_noise, eps_seed, std::uint64_t(t)), std::span<double>(xi));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double mean = (x[i] - scale * eps_hat[i]) * inv_sqrt_alpha;
            x[i] = (t > 1) ? mean + sigma * xi[i] : mean;
            if (!std::isfinite(x[i]))
                fail(ErrorKind::numeric, "non-finite sample state at t=" + std::to_string(t));
        }
    }
    for (auto& v : x) v = std::clamp(v, -1.0, 1.0);
    return x;
}

}  // namespace uattr
