#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"
#include "uattr/encoder.hpp"
#include "uattr/trainer.hpp"
#include "uattr/unlearner.hpp"

namespace uattr {

struct FisherSection {
    std::uint64_t draws = 10000;
    std::uint64_t seed = 3;
    double damping = 1e-8;
};

struct QuerySection {
    int count = 20;
    std::uint64_t seed = 5;
    int candidate_seeds = 4;
};

struct AttributionSection {
    int stride = 10;
    std::uint64_t noise_seed = 17;
    bool flip_max = true;
    int proj_dim = 256;
    int t_fixed = 80;
    std::vector<std::string> methods = {"unlearning", "pixel_cosine", "influence_projected",
                                        "influence_single_t"};
};

struct EvaluationSection {
    std::vector<std::size_t> k_grid = {10, 25, 50, 100};
    std::vector<std::string> full_methods = {"unlearning"};
    std::vector<std::string> spot_methods = {"pixel_cosine", "influence_projected",
                                             "influence_single_t"};
    std::size_t spot_k = 100;
    int random_models_per_k = 3;
    std::uint64_t random_seed = 13;
};

// Full run configuration. diffusion.num_classes always mirrors
// dataset.num_classes; the optional unlearn region is kept as a rect
// (row0, col0, rows, cols) so the config serializes canonically.
struct RunConfig {
    DatasetSpec dataset;
    DiffusionConfig diffusion;
    DenoiserSpec denoiser;
    TrainConfig train;
    FisherSection fisher;
    UnlearnConfig unlearn;
    std::optional<std::array<int, 4>> unlearn_region_rect;
    QuerySection queries;
    AttributionSection attribution;
    EvaluationSection evaluation;
    EncoderConfig encoder;

    void validate() const;
};

// Strict parser: an unknown key anywhere in the document is a validation
// error. Every field is optional; "{}" yields the defaults above.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical serialization; used verbatim in manifests and for equality.
std::string run_config_json(const RunConfig& cfg);

// Dotted-path overrides ("unlearn.alpha" -> "0.02") applied to the raw JSON
// before parsing. Values that parse as JSON are inserted as such, anything
// else becomes a string.
std::string apply_overrides_json(const std::string& json_text,
                                 const std::vector<std::pair<std::string, std::string>>& sets);

// Precedence: explicit flag > UATTR_WORKSPACE env var > current directory.
std::filesystem::path resolve_workspace(const std::string& flag_value);

// Each command validates its upstream manifests (missing artifact -> a
// "dependency missing" error naming the expected path; artifact or config
// drift -> "provenance conflict"), writes its artifacts, then writes its own
// manifest with input/output hashes. Reruns with identical configuration
// produce byte-identical files. jobs > 1 fans independent work items out to
// that many threads; results are aggregated in deterministic order.
void cmd_generate(const std::filesystem::path& ws, const RunConfig& cfg);
void cmd_train(const std::filesystem::path& ws, const RunConfig& cfg);
void cmd_fisher(const std::filesystem::path& ws, const RunConfig& cfg);
void cmd_unlearn(const std::filesystem::path& ws, const RunConfig& cfg, int jobs = 1);
void cmd_attribute(const std::filesystem::path& ws, const RunConfig& cfg, int jobs = 1);
void cmd_evaluate(const std::filesystem::path& ws, const RunConfig& cfg, int jobs = 1);
void cmd_report(const std::filesystem::path& ws, const RunConfig& cfg);

// Workspace-relative artifact paths shared by the commands and the tests.
std::string dataset_csv_rel();
std::string dataset_bin_rel();
std::string base_checkpoint_rel();
std::string fisher_rel();
std::string queries_rel();
std::string unlearn_checkpoint_rel(int query_index);
std::string score_csv_rel(const std::string& method, int query_index);
std::string score_sidecar_rel(const std::string& method, int query_index);
std::string encoder_rel();
std::string reports_csv_rel();
std::string random_curve_rel();
std::string report_dir_rel();

}  // namespace uattr
