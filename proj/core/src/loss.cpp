#include "uattr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"

namespace uattr {

RegionMask RegionMask::all(const ImageShape& shape) {
    RegionMask m;
    m.active.assign(std::size_t(shape.size()), 1);
    return m;
}

RegionMask RegionMask::rect(const ImageShape& shape, int row0, int col0, int rows, int cols) {
    if (row0 < 0 || col0 < 0 || rows < 1 || cols < 1 || row0 + rows > shape.height ||
        col0 + cols > shape.width)
        fail(ErrorKind::range, "region rect outside the image grid");
    RegionMask m;
    m.active.assign(std::size_t(shape.size()), 0);
    for (int r = row0; r < row0 + rows; ++r)
        for (int c = col0; c < col0 + cols; ++c) m.active[std::size_t(r * shape.width + c)] = 1;
    return m;
}

void RegionMask::validate(std::size_t pixel_count) const {
    if (active.size() != pixel_count)
        fail(ErrorKind::validation, "region mask must cover all " + std::to_string(pixel_count) + " pixels");
    if (active_count() == 0) fail(ErrorKind::validation, "region mask has no active pixels");
}

std::size_t RegionMask::active_count() const {
    std::size_t n = 0;
    for (auto a : active) n += a ? 1 : 0;
    return n;
}

double loss_core(const std::vector<double>& pred, const std::vector<double>& eps,
                 const RegionMask* region) {
    if (pred.size() != eps.size()) fail(ErrorKind::validation, "loss: pred and eps size mismatch");
    if (region) region->validate(pred.size());
    std::vector<double> terms(pred.size(), 0.0);
    std::size_t active = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool on = !region || region->active[i];
        if (on) {
            const double d = pred[i] - eps[i];
            terms[i] = d * d;
            ++active;
        }
    }
    return tree_sum(terms) / double(active);
}

void loss_core_grad(const std::vector<double>& pred, const std::vector<double>& eps,
                    const RegionMask* region, std::vector<double>& dpred) {
    if (pred.size() != eps.size()) fail(ErrorKind::validation, "loss: pred and eps size mismatch");
    std::size_t active = pred.size();
    if (region) {
        region->validate(pred.size());
        active = region->active_count();
    }
    dpred.assign(pred.size(), 0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool on = !region || region->active[i];
        if (on) dpred[i] = 2.0 * (pred[i] - eps[i]) / double(active);
    }
}

std::vector<double> loss_noise(std::uint64_t noise_seed, std::int64_t id, int t, std::size_t count) {
    std::vector<double> eps(count);
    const std::uint64_t key = make_key(Stream::loss_noise, noise_seed, std::uint64_t(id), std::uint64_t(t));
    fill_normal(key, std::span<double>(eps));
    return eps;
}

double ddpm_loss(const Denoiser& denoiser, const NoiseSchedule& schedule, const ParamVector& theta,
                 const Example& example, int t, const std::vector<double>& eps,
                 const RegionMask* region) {
    const auto xt = q_sample(schedule, example.pixels, t, eps);
    const auto pred = denoiser.forward(theta, xt, t, example.label);
    return loss_core(pred, eps, region);
}

double ddpm_loss_grad(const Denoiser& denoiser, const NoiseSchedule& schedule,
                      const ParamVector& theta, const Example& example, int t,
                      const std::vector<double>& eps, const RegionMask* region,
                      std::vector<double>& grad) {
    Denoiser::Activations acts;
    const auto xt = q_sample(schedule, example.pixels, t, eps);
    const auto pred = denoiser.forward(theta, xt, t, example.label, &acts);
    const double loss = loss_core(pred, eps, region);
    std::vector<double> dpred;
    loss_core_grad(pred, eps, region, dpred);
    denoiser.backward(theta, acts, example.label, dpred, grad);
    return loss;
}

std::vector<int> strided_timesteps(const NoiseSchedule& schedule, int stride) {
    if (stride < 1 || stride > schedule.timesteps())
        fail(ErrorKind::range, "stride " + std::to_string(stride) + " outside [1, " +
                                   std::to_string(schedule.timesteps()) + "]");
    std::vector<int> ts;
    for (int t = 1; t <= schedule.timesteps(); t += stride) ts.push_back(t);
    return ts;
}

double strided_loss(const Denoiser& denoiser, const NoiseSchedule& schedule,
                    const ParamVector& theta, const Example& example, int stride,
                    std::uint64_t noise_seed, const RegionMask* region) {
    const auto ts = strided_timesteps(schedule, stride);
    const std::size_t pixels = example.pixels.size();
    std::vector<double> losses(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const auto eps = loss_noise(noise_seed, example.id, ts[i], pixels);
        losses[i] = ddpm_loss(denoiser, schedule, theta, example, ts[i], eps, region);
    }
    return tree_sum(losses) / double(ts.size());
}

double strided_loss_grad(const Denoiser& denoiser, const NoiseSchedule& schedule,
                         const ParamVector& theta, const Example& example, int stride,
                         std::uint64_t noise_seed, const RegionMask* region,
                         std::vector<double>& grad) {
    const auto ts = strided_timesteps(schedule, stride);
    if (grad.size() != theta.layout->total_size())
        fail(ErrorKind::validation, "strided_loss_grad: gradient buffer size mismatch");
    const std::size_t pixels = example.pixels.size();
    std::vector<std::vector<double>> grads(ts.size());
    std::vector<double> losses(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        grads[i].assign(grad.size(), 0.0);
        const auto eps = loss_noise(noise_seed, example.id, ts[i], pixels);
        losses[i] = ddpm_loss_grad(denoiser, schedule, theta, example, ts[i], eps, region, grads[i]);
    }
    std::vector<double> summed;
    tree_sum_rows(grads, summed);
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += summed[j] / double(ts.size());
    return tree_sum(losses) / double(ts.size());
}

}  // namespace uattr
