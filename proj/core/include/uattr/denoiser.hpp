#pragma once

#include <cstdint>
#include <vector>

#include "uattr/diffusion.hpp"
#include "uattr/param_vector.hpp"

namespace uattr {

struct DenoiserSpec {
    int hidden = 128;
    int temb_dim = 32;
    int embed_dim = 32;

    void validate() const;
};

LayoutPtr make_denoiser_layout(const DiffusionConfig& dcfg, const DenoiserSpec& spec);

// Epsilon-prediction MLP:
//   in = concat(x_t, sinusoidal_temb(t))          (pixels + temb_dim)
//   h1 = silu(W1 in + b1)
//   h1c = h1 + sigmoid(Wk e) * (Wv e)             e = class embedding row
//   h2 = silu(W2 h1c + b2)
//   out = W3 h2 + b3                              (pixels)
// The "cond_key" / "cond_value" segments hold Wk and Wv. Parameters live in
// an f32 ParamVector; all forward/backward math is double.
class Denoiser {
  public:
    Denoiser(const DiffusionConfig& dcfg, const DenoiserSpec& spec);

    const DenoiserSpec& spec() const { return spec_; }
    int num_classes() const { return num_classes_; }
    int pixel_count() const { return pixels_; }
    LayoutPtr layout() const { return layout_; }

    ParamVector init_params(std::uint64_t seed) const;

    std::vector<double> time_embedding(int t) const;

    struct Activations {
        std::vector<double> input, h1_pre, h1, gate, v, h1c, h2_pre, h2, out;
    };

    std::vector<double> forward(const ParamVector& theta, const std::vector<double>& xt, int t,
                                int label, Activations* cache = nullptr) const;

    // Accumulates d(loss)/d(theta) into grad (size layout->total_size()),
    // given d(loss)/d(out) for the activations captured by forward.
    void backward(const ParamVector& theta, const Activations& acts, int label,
                  const std::vector<double>& dout, std::vector<double>& grad) const;

  private:
    void check_inputs(const ParamVector& theta, const std::vector<double>& xt, int t, int label) const;

    DenoiserSpec spec_;
    int num_classes_ = 0;
    int pixels_ = 0;
    LayoutPtr layout_;
};

}  // namespace uattr
