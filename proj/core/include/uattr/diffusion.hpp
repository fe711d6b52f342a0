#pragma once

#include <cstdint>
#include <vector>

namespace uattr {

struct ImageShape {
    int channels = 1;
    int height = 8;
    int width = 8;

    int size() const { return channels * height * width; }
    bool operator==(const ImageShape&) const = default;
};

struct DiffusionConfig {
    int timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    ImageShape image_shape;
    int num_classes = 4;

    void validate() const;
};

// Precomputed linear beta schedule. Timesteps are 1-indexed: t runs over
// [1, T], and alpha_bar(t) is strictly decreasing with alpha_bar(0) == 1 by
// convention. All quantities are double.
class NoiseSchedule {
  public:
    explicit NoiseSchedule(const DiffusionConfig& config);

    int timesteps() const { return int(betas_.size()); }
    double beta(int t) const;
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const;  // t in [0, T], alpha_bar(0) == 1
    double posterior_sigma(int t) const;  // sqrt((1-abar_{t-1})/(1-abar_t) * beta_t), 0 at t=1

  private:
    void check_t(int t) const;

    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

// One example: a flat image in [-1, 1] plus a class label and a stable
// integer id used for all per-example random keying. Synthesized queries use
// negative ids so their noise keys never collide with training ids.
struct Example {
    std::int64_t id = 0;
    int label = 0;
    bool flipped = false;
    std::vector<double> pixels;
};

// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, t in [1, T]
std::vector<double> q_sample(const NoiseSchedule& schedule, const std::vector<double>& x0, int t,
                             const std::vector<double>& eps);

std::vector<double> flip_horizontal(const std::vector<double>& pixels, const ImageShape& shape);

}  // namespace uattr
