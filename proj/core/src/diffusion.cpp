#include "uattr/diffusion.hpp"

#include <cmath>
#include <string>

#include "uattr/common.hpp"

namespace uattr {

void DiffusionConfig::validate() const {
    if (timesteps < 2) fail(ErrorKind::validation, "timesteps must be >= 2, got " + std::to_string(timesteps));
    if (!(beta_start > 0.0)) fail(ErrorKind::validation, "beta_start must be > 0");
    if (!(beta_end >= beta_start)) fail(ErrorKind::validation, "beta_end must be >= beta_start");
    if (!(beta_end < 1.0)) fail(ErrorKind::validation, "beta_end must be < 1");
    if (image_shape.channels != 1)
        fail(ErrorKind::validation, "image_shape must have a single channel");
    if (image_shape.height < 1 || image_shape.width < 1)
        fail(ErrorKind::validation, "image_shape must be positive");
    if (num_classes < 1) fail(ErrorKind::validation, "num_classes must be >= 1");
}

NoiseSchedule::NoiseSchedule(const DiffusionConfig& config) {
    config.validate();
    const int T = config.timesteps;
    betas_.resize(std::size_t(T));
    alpha_bars_.resize(std::size_t(T));
    double abar = 1.0;
    for (int i = 0; i < T; ++i) {
        betas_[std::size_t(i)] =
            config.beta_start + (config.beta_end - config.beta_start) * double(i) / double(T - 1);
        abar *= 1.0 - betas_[std::size_t(i)];
        alpha_bars_[std::size_t(i)] = abar;
    }
}

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > timesteps())
        fail(ErrorKind::range,
             "timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
}

double NoiseSchedule::beta(int t) const {
    check_t(t);
    return betas_[std::size_t(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bars_[std::size_t(t - 1)];
}

double NoiseSchedule::posterior_sigma(int t) const {
    check_t(t);
    if (t == 1) return 0.0;
    return std::sqrt((1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t));
}

std::vector<double> q_sample(const NoiseSchedule& schedule, const std::vector<double>& x0, int t,
                             const std::vector<double>& eps) {
    if (x0.size() != eps.size()) fail(ErrorKind::validation, "q_sample: x0 and eps size mismatch");
    if (t < 1 || t > schedule.timesteps())
        fail(ErrorKind::range, "q_sample: timestep " + std::to_string(t) + " outside [1, " +
                                   std::to_string(schedule.timesteps()) + "]");
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
    std::vector<double> xt(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * eps[i];
    return xt;
}

std::vector<double> flip_horizontal(const std::vector<double>& pixels, const ImageShape& shape) {
    if (pixels.size() != std::size_t(shape.size()))
        fail(ErrorKind::validation, "flip_horizontal: pixel count does not match image shape");
    std::vector<double> out(pixels.size());
    const int h = shape.height, w = shape.width;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out[std::size_t(r * w + c)] = pixels[std::size_t(r * w + (w - 1 - c))];
    return out;
}

}  // namespace uattr
