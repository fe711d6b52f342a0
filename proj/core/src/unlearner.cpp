#include "uattr/unlearner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"

namespace uattr {

void UnlearnConfig::validate(const ParamLayout& layout, std::size_t pixel_count, int timesteps) const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        fail(ErrorKind::validation, "alpha must be finite and >= 0");
    if (steps < 1) fail(ErrorKind::validation, "steps must be >= 1");
    if (stride < 1 || stride > timesteps)
        fail(ErrorKind::range, "stride " + std::to_string(stride) + " outside [1, " +
                                   std::to_string(timesteps) + "]");
    for (const auto& name : mask) (void)layout.segment(name);  // unknown names throw
    if (region) region->validate(pixel_count);
}

namespace {

const std::string& largest_update_segment(const ParamLayout& layout, const std::vector<double>& dir) {
    const SegmentSpec* best = &layout.segments().front();
    double best_mag = -1.0;
    for (const auto& seg : layout.segments()) {
        double mag = 0.0;
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
            const double a = std::fabs(dir[i]);
            if (!std::isfinite(a)) {
                mag = std::numeric_limits<double>::infinity();
                break;
            }
            mag = std::max(mag, a);
        }
        if (mag > best_mag) {
            best_mag = mag;
            best = &seg;
        }
    }
    return best->name;
}

ParamVector ascend(const ParamVector& theta0, const FisherDiagonal* F, const Example& zhat,
                   const UnlearnConfig& cfg, const Denoiser& denoiser,
                   const NoiseSchedule& schedule) {
    if (!theta0.layout || !(*theta0.layout == *denoiser.layout()))
        fail(ErrorKind::validation, "unlearn: parameter layout mismatch");
    if (F && !(*F->layout == *theta0.layout))
        fail(ErrorKind::validation, "unlearn: fisher layout mismatch");
    cfg.validate(*theta0.layout, std::size_t(denoiser.pixel_count()), schedule.timesteps());
    if (zhat.label < 0 || zhat.label >= denoiser.num_classes())
        fail(ErrorKind::range, "unlearn: query has an invalid condition label");

    const RegionMask* region = cfg.region ? &*cfg.region : nullptr;
    const auto mask = segment_mask(*theta0.layout, cfg.mask);
    const std::size_t dim = theta0.size();

    ParamVector theta = theta0;
    std::vector<double> grad(dim);
    for (int step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::uint64_t step_seed = make_key(Stream::unlearn_step, cfg.seed, std::uint64_t(step));
        strided_loss_grad(denoiser, schedule, theta, zhat, cfg.stride, step_seed, region, grad);

        std::vector<double> dir;
        if (F) {
            dir = precondition(std::span<const double>(grad), *F, cfg.mask);
        } else {
            dir.assign(dim, 0.0);
            for (std::size_t i = 0; i < dim; ++i)
                if (mask[i]) dir[i] = grad[i];
        }

        bool finite = true;
        for (std::size_t i = 0; i < dim; ++i) {
            const double updated = double(theta.values[i]) + cfg.alpha * dir[i];
            if (!std::isfinite(updated)) {
                finite = false;
                break;
            }
            theta.values[i] = float(updated);
        }
        if (!finite)
            fail(ErrorKind::numeric, "unlearning produced a non-finite update at step " +
                                         std::to_string(step) + "; largest update magnitude in segment '" +
                                         largest_update_segment(*theta0.layout, dir) + "'");
    }
    return theta;
}

}  // namespace

ParamVector unlearn(const ParamVector& theta0, const FisherDiagonal& F, const Example& zhat,
                    const UnlearnConfig& cfg, const Denoiser& denoiser,
                    const NoiseSchedule& schedule) {
    return ascend(theta0, &F, zhat, cfg, denoiser, schedule);
}

ParamVector unlearn_sgd_baseline(const ParamVector& theta0, const Example& zhat,
                                 const UnlearnConfig& cfg, const Denoiser& denoiser,
                                 const NoiseSchedule& schedule) {
    return ascend(theta0, nullptr, zhat, cfg, denoiser, schedule);
}

}  // namespace uattr
