#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uattr/dataset.hpp"
#include "uattr/diffusion.hpp"
#include "uattr/param_vector.hpp"

namespace uattr {

// Small convolutional classifier used only to embed images for the
// feature-space generation-shift metric. Architecture is fixed:
// conv 1->8 3x3 pad 1, SiLU, 2x2 average pool, conv 8->16 3x3 pad 1,
// SiLU, global average pool to a 16-dim embedding, then a linear head.
class Encoder {
public:
    Encoder(ImageShape shape, int num_classes);

    const ImageShape& shape() const { return shape_; }
    int num_classes() const { return num_classes_; }
    int embed_dim() const { return c2_; }
    LayoutPtr layout() const { return layout_; }

    ParamVector init_params(std::uint64_t seed) const;

    std::vector<double> embed(const ParamVector& theta, const std::vector<double>& pixels) const;
    std::vector<double> logits(const ParamVector& theta, const std::vector<double>& pixels) const;

    // softmax cross entropy; accumulates into grad (layout-sized)
    double loss_grad(const ParamVector& theta, const std::vector<double>& pixels, int label,
                     std::vector<double>& grad) const;

private:
    static constexpr int c1_ = 8;
    static constexpr int c2_ = 16;
    ImageShape shape_;
    int num_classes_;
    LayoutPtr layout_;
};

struct EncoderConfig {
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 5e-3;
    double momentum = 0.9;
    std::uint64_t seed = 11;

    void validate() const;
};

struct EncoderTrainResult {
    ParamVector theta;
    std::vector<double> epoch_losses;
    double train_accuracy = 0.0;
};

EncoderTrainResult train_encoder(const Dataset& ds, const EncoderConfig& cfg, const Encoder& enc);

// 1 - cosine similarity; zero-norm inputs count as maximally distant
double cosine_distance(std::span<const double> a, std::span<const double> b);

void save_encoder(const std::filesystem::path& path, const ParamVector& theta,
                  const std::string& meta_json);
ParamVector load_encoder(const std::filesystem::path& path, const Encoder& enc);

}  // namespace uattr
