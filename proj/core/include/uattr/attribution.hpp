#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/fisher.hpp"

namespace uattr {

struct ScoreRow {
    double score = 0.0;          // plain orientation
    double score_flipped = 0.0;  // flipped training example (equals score when flips are off)
    double score_final = 0.0;    // max of the two under flip augmentation
};

struct ScoreTable {
    std::string method;
    std::string query_hash;                   // hex of the query example hash
    std::map<std::int64_t, ScoreRow> scores;  // every live id exactly once
    std::string params_json;                  // method config snapshot

    void validate_finite() const;
};

std::uint64_t example_hash(const Example& e);

// tau(z) = strided_loss(z, theta_unlearned) - strided_loss(z, theta0) with the
// same (seed, id, t) noise keys on both sides; with flips on, the final score
// is max(tau(z), tau(flip z)).
ScoreTable score_unlearning(const Dataset& ds, const Denoiser& denoiser,
                            const NoiseSchedule& schedule, const ParamVector& theta0,
                            const ParamVector& theta_unlearned, const Example& zhat, int stride,
                            std::uint64_t noise_seed, bool flip_max);

// Cosine between flattened pixels; zero-norm images score 0 by convention.
ScoreTable score_pixel_cosine(const Dataset& ds, const Example& zhat, bool flip_max);

// Whitened-gradient features for the influence family. With proj_dim >= 1 the
// features are sign-random projections of F^(-1/2) grad L; proj_dim == 0 is
// the exact-mode sentinel handled by the scoring functions (no matrix here).
struct FeatureMatrix {
    std::vector<std::int64_t> ids;
    std::size_t dim = 0;
    std::vector<double> data;  // row r = features of ids[r]

    std::span<const double> row(std::size_t r) const { return {data.data() + r * dim, dim}; }
};

struct InfluenceContext {
    FeatureMatrix plain;
    FeatureMatrix flipped;  // present only when built with flips
};

InfluenceContext build_influence_context(const Dataset& ds, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const ParamVector& theta0,
                                         const FisherDiagonal& F, int proj_dim, int stride,
                                         std::uint64_t seed, bool flip_max,
                                         const std::vector<std::string>& mask_names = {});

// score = <P F^(-1/2) grad L(z, theta0), P F^(-1/2) grad L(zhat, theta0)>;
// proj_dim == 0 computes the exact (unprojected) closed form by streaming.
ScoreTable score_influence_projected(const Dataset& ds, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, const ParamVector& theta0,
                                     const FisherDiagonal& F, const Example& zhat, int proj_dim,
                                     int stride, std::uint64_t seed, bool flip_max,
                                     const std::vector<std::string>& mask_names = {},
                                     const InfluenceContext* cached = nullptr);

// Same but the query gradient uses only timestep t_fixed.
ScoreTable score_single_timestep_variant(const Dataset& ds, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const ParamVector& theta0,
                                         const FisherDiagonal& F, const Example& zhat, int t_fixed,
                                         std::uint64_t seed, bool flip_max, int proj_dim,
                                         int stride,
                                         const std::vector<std::string>& mask_names = {},
                                         const InfluenceContext* cached = nullptr);

// Ids of the k largest final scores; ties broken by ascending id.
std::vector<std::int64_t> top_k(const ScoreTable& table, std::size_t k);

// CSV `id,score,score_flipped,score_final` plus a JSON sidecar with
// method/params/provenance.
void save_score_table(const ScoreTable& table, const std::filesystem::path& csv_path,
                      const std::filesystem::path& sidecar_path);
ScoreTable load_score_table(const std::filesystem::path& csv_path,
                            const std::filesystem::path& sidecar_path);

}  // namespace uattr
