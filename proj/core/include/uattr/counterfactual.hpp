#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uattr/attribution.hpp"
#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/encoder.hpp"
#include "uattr/trainer.hpp"

namespace uattr {

// A synthesized query: the image being attributed plus the noise seed that
// generated it, so leave-K-out models can regenerate from the same seed.
// Query ids are negative so they can never collide with training ids in the
// keyed-noise streams.
struct Query {
    Example example;
    std::uint64_t eps_seed = 0;
};

void save_queries(const std::filesystem::path& path, const std::vector<Query>& queries,
                  const ImageShape& shape, const std::string& meta_json);
std::vector<Query> load_queries(const std::filesystem::path& path, const ImageShape& shape);

struct CounterfactualReport {
    std::string query_hash;
    std::string method;
    std::size_t k = 0;
    double delta_loss = 0.0;
    double delta_gen_mse = 0.0;
    double delta_gen_feat = 0.0;
    std::vector<std::int64_t> removed_ids;
    std::string base_ref;     // provenance of theta0
    std::string retrain_ref;  // provenance of theta_minus_k

    void validate() const;
};

// Retrains one leave-K-out model per query (tables[i] scores queries[i]) and
// measures the query loss change at stride 1 with paired noise plus the
// generation deviation from the query's own eps_seed. k = 0 short-circuits to
// the base model: retraining is deterministic, so the result is identical.
// Without an encoder delta_gen_feat is reported as 0.
std::vector<CounterfactualReport> eval_leave_k(
    const Dataset& ds, const ParamVector& theta0, const std::vector<ScoreTable>& tables,
    std::size_t k, const std::vector<Query>& queries, const TrainConfig& tcfg,
    const Denoiser& denoiser, const NoiseSchedule& schedule, std::uint64_t loss_noise_seed,
    const Encoder* enc = nullptr, const ParamVector* enc_theta = nullptr);

// Uniformly sampled removal set: the first k ids of a keyed ordering of the
// dataset, so set m for size k is reproducible and independent of call order.
std::vector<std::int64_t> random_removal_ids(const Dataset& ds, std::size_t k, std::uint64_t seed,
                                             std::uint64_t model_index);

struct RandomCurvePoint {
    std::size_t k = 0;
    double mean_delta_loss = 0.0;
    double stderr_delta_loss = 0.0;
    double mean_delta_gen = 0.0;
};

struct RandomReferenceCurve {
    std::vector<RandomCurvePoint> points;  // ascending k
    int models_per_k = 1;
};

RandomReferenceCurve random_reference(const Dataset& ds, const ParamVector& theta0,
                                      const std::vector<std::size_t>& k_grid, int models_per_k,
                                      const std::vector<Query>& queries, std::uint64_t seed,
                                      const TrainConfig& tcfg, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, std::uint64_t loss_noise_seed,
                                      const Encoder* enc = nullptr,
                                      const ParamVector* enc_theta = nullptr);

struct EquivalentK {
    double k = 0.0;
    bool out_of_range = false;
};

// Piecewise-linear inverse of the curve's mean delta-loss onto k; values
// outside the curve's range clamp to the nearest endpoint and set the flag.
EquivalentK equivalent_random_k(const RandomReferenceCurve& curve, double delta_loss);

void save_reports_csv(const std::filesystem::path& csv_path,
                      const std::vector<CounterfactualReport>& reports);
std::vector<CounterfactualReport> load_reports_csv(const std::filesystem::path& csv_path);
void append_reports_csv(const std::filesystem::path& csv_path,
                        const std::vector<CounterfactualReport>& reports);

void save_curve_csv(const std::filesystem::path& csv_path, const RandomReferenceCurve& curve);
RandomReferenceCurve load_curve_csv(const std::filesystem::path& csv_path);

}  // namespace uattr
