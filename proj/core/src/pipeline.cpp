#include "uattr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "uattr/attribution.hpp"
#include "uattr/common.hpp"
#include "uattr/counterfactual.hpp"
#include "uattr/fisher.hpp"
#include "uattr/report.hpp"
#include "uattr/rng.hpp"
#include "uattr/sampler.hpp"
#include "uattr/storage.hpp"

namespace uattr {

using nlohmann::json;

namespace {

constexpr const char* kDatasetCsv = "data/dataset.csv";
constexpr const char* kDatasetBin = "data/dataset.bin";
constexpr const char* kDatasetManifest = "data/manifest.json";
constexpr const char* kBaseCkpt = "runs/base/checkpoint.bin";
constexpr const char* kTrainLog = "runs/base/train_log.csv";
constexpr const char* kTrainManifest = "runs/base/manifest.json";
constexpr const char* kFisherBin = "runs/base/fisher.bin";
constexpr const char* kFisherManifest = "runs/base/fisher_manifest.json";
constexpr const char* kQueriesBin = "queries/queries.bin";
constexpr const char* kQueriesManifest = "queries/manifest.json";
constexpr const char* kUnlearnManifest = "runs/unlearn/manifest.json";
constexpr const char* kScoresManifest = "scores/manifest.json";
constexpr const char* kEncoderBin = "runs/encoder.bin";
constexpr const char* kReportsCsv = "eval/reports.csv";
constexpr const char* kCurveCsv = "eval/random_curve.csv";
constexpr const char* kEvalManifest = "eval/manifest.json";
constexpr const char* kReportManifest = "report/manifest.json";

const std::set<std::string> kKnownMethods = {"unlearning", "pixel_cosine", "influence_projected",
                                             "influence_single_t"};

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ErrorKind::validation, path + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            if (it.key() == a) known = true;
        if (!known) fail(ErrorKind::validation, "unknown key '" + it.key() + "' in " + path);
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        fail(ErrorKind::validation, "bad value for " + path + "." + key + ": " + e.what());
    }
}

void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (first_error) return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(std::size_t(jobs), count);
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void RunConfig::validate() const {
    dataset.validate();
    diffusion.validate();
    denoiser.validate();
    train.validate();
    encoder.validate();
    if (diffusion.num_classes != dataset.num_classes)
        fail(ErrorKind::validation, "diffusion.num_classes must mirror dataset.num_classes");
    if (fisher.draws < 1) fail(ErrorKind::validation, "fisher.draws must be >= 1");
    if (!(fisher.damping > 0.0)) fail(ErrorKind::validation, "fisher.damping must be > 0");
    if (queries.count < 1) fail(ErrorKind::validation, "queries.count must be >= 1");
    if (queries.candidate_seeds < 1) fail(ErrorKind::validation, "queries.candidate_seeds must be >= 1");

    const Denoiser den(diffusion, denoiser);
    unlearn.validate(*den.layout(), std::size_t(diffusion.image_shape.size()), diffusion.timesteps);

    if (attribution.stride < 1 || attribution.stride > diffusion.timesteps)
        fail(ErrorKind::range, "attribution.stride outside [1, timesteps]");
    if (attribution.t_fixed < 1 || attribution.t_fixed > diffusion.timesteps)
        fail(ErrorKind::range, "attribution.t_fixed outside [1, timesteps]");
    if (attribution.proj_dim < 0) fail(ErrorKind::validation, "attribution.proj_dim must be >= 0");
    if (attribution.methods.empty()) fail(ErrorKind::validation, "attribution.methods must not be empty");
    std::set<std::string> seen;
    for (const auto& m : attribution.methods) {
        if (!kKnownMethods.count(m)) fail(ErrorKind::validation, "unknown attribution method: " + m);
        if (!seen.insert(m).second) fail(ErrorKind::validation, "duplicate attribution method: " + m);
    }
    if (evaluation.k_grid.empty()) fail(ErrorKind::validation, "evaluation.k_grid must not be empty");
    if (!std::is_sorted(evaluation.k_grid.begin(), evaluation.k_grid.end()))
        fail(ErrorKind::validation, "evaluation.k_grid must be ascending");
    for (std::size_t i = 1; i < evaluation.k_grid.size(); ++i)
        if (evaluation.k_grid[i] == evaluation.k_grid[i - 1])
            fail(ErrorKind::validation, "evaluation.k_grid must not repeat values");
    for (const std::size_t k : evaluation.k_grid)
        if (k > std::size_t(dataset.n)) fail(ErrorKind::range, "evaluation.k_grid exceeds dataset size");
    if (evaluation.spot_k > std::size_t(dataset.n))
        fail(ErrorKind::range, "evaluation.spot_k exceeds dataset size");
    if (evaluation.random_models_per_k < 1)
        fail(ErrorKind::validation, "evaluation.random_models_per_k must be >= 1");
    for (const auto& m : evaluation.full_methods)
        if (!kKnownMethods.count(m)) fail(ErrorKind::validation, "unknown evaluation method: " + m);
    for (const auto& m : evaluation.spot_methods)
        if (!kKnownMethods.count(m)) fail(ErrorKind::validation, "unknown evaluation method: " + m);
}

RunConfig parse_run_config(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::validation, "run config is not valid JSON");
    check_keys(j, "config",
               {"dataset", "diffusion", "denoiser", "train", "fisher", "unlearn", "queries",
                "attribution", "evaluation", "encoder"});

    RunConfig cfg;
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        check_keys(d, "dataset", {"n", "num_classes", "seed", "groups"});
        get_to(d, "n", cfg.dataset.n, "dataset");
        get_to(d, "num_classes", cfg.dataset.num_classes, "dataset");
        get_to(d, "seed", cfg.dataset.seed, "dataset");
        if (d.contains("groups")) {
            if (!d["groups"].is_array()) fail(ErrorKind::validation, "dataset.groups must be an array");
            cfg.dataset.groups.clear();
            for (std::size_t gi = 0; gi < d["groups"].size(); ++gi) {
                const json& g = d["groups"][gi];
                const std::string path = "dataset.groups[" + std::to_string(gi) + "]";
                check_keys(g, path, {"group_id", "label", "count", "jitter_std"});
                PlantedGroup pg;
                get_to(g, "group_id", pg.group_id, path);
                get_to(g, "label", pg.label, path);
                get_to(g, "count", pg.count, path);
                get_to(g, "jitter_std", pg.jitter_std, path);
                cfg.dataset.groups.push_back(pg);
            }
        }
    }
    if (j.contains("diffusion")) {
        const json& d = j["diffusion"];
        check_keys(d, "diffusion", {"timesteps", "beta_start", "beta_end", "height", "width"});
        get_to(d, "timesteps", cfg.diffusion.timesteps, "diffusion");
        get_to(d, "beta_start", cfg.diffusion.beta_start, "diffusion");
        get_to(d, "beta_end", cfg.diffusion.beta_end, "diffusion");
        get_to(d, "height", cfg.diffusion.image_shape.height, "diffusion");
        get_to(d, "width", cfg.diffusion.image_shape.width, "diffusion");
    }
    cfg.diffusion.num_classes = cfg.dataset.num_classes;
    if (j.contains("denoiser")) {
        const json& d = j["denoiser"];
        check_keys(d, "denoiser", {"hidden", "temb_dim", "embed_dim"});
        get_to(d, "hidden", cfg.denoiser.hidden, "denoiser");
        get_to(d, "temb_dim", cfg.denoiser.temb_dim, "denoiser");
        get_to(d, "embed_dim", cfg.denoiser.embed_dim, "denoiser");
    }
    if (j.contains("train")) {
        const json& d = j["train"];
        check_keys(d, "train", {"epochs", "batch_size", "learning_rate", "momentum", "flip_augment", "seed"});
        get_to(d, "epochs", cfg.train.epochs, "train");
        get_to(d, "batch_size", cfg.train.batch_size, "train");
        get_to(d, "learning_rate", cfg.train.learning_rate, "train");
        get_to(d, "momentum", cfg.train.momentum, "train");
        get_to(d, "flip_augment", cfg.train.flip_augment, "train");
        get_to(d, "seed", cfg.train.seed, "train");
    }
    if (j.contains("fisher")) {
        const json& d = j["fisher"];
        check_keys(d, "fisher", {"draws", "seed", "damping"});
        get_to(d, "draws", cfg.fisher.draws, "fisher");
        get_to(d, "seed", cfg.fisher.seed, "fisher");
        get_to(d, "damping", cfg.fisher.damping, "fisher");
    }
    if (j.contains("unlearn")) {
        const json& d = j["unlearn"];
        check_keys(d, "unlearn", {"alpha", "steps", "mask", "stride", "seed", "region"});
        get_to(d, "alpha", cfg.unlearn.alpha, "unlearn");
        get_to(d, "steps", cfg.unlearn.steps, "unlearn");
        get_to(d, "mask", cfg.unlearn.mask, "unlearn");
        get_to(d, "stride", cfg.unlearn.stride, "unlearn");
        get_to(d, "seed", cfg.unlearn.seed, "unlearn");
        if (d.contains("region") && !d["region"].is_null()) {
            const json& r = d["region"];
            check_keys(r, "unlearn.region", {"row0", "col0", "rows", "cols"});
            std::array<int, 4> rect{0, 0, 0, 0};
            get_to(r, "row0", rect[0], "unlearn.region");
            get_to(r, "col0", rect[1], "unlearn.region");
            get_to(r, "rows", rect[2], "unlearn.region");
            get_to(r, "cols", rect[3], "unlearn.region");
            cfg.unlearn_region_rect = rect;
        }
    }
    if (j.contains("queries")) {
        const json& d = j["queries"];
        check_keys(d, "queries", {"count", "seed", "candidate_seeds"});
        get_to(d, "count", cfg.queries.count, "queries");
        get_to(d, "seed", cfg.queries.seed, "queries");
        get_to(d, "candidate_seeds", cfg.queries.candidate_seeds, "queries");
    }
    if (j.contains("attribution")) {
        const json& d = j["attribution"];
        check_keys(d, "attribution",
                   {"stride", "noise_seed", "flip_max", "proj_dim", "t_fixed", "methods"});
        get_to(d, "stride", cfg.attribution.stride, "attribution");
        get_to(d, "noise_seed", cfg.attribution.noise_seed, "attribution");
        get_to(d, "flip_max", cfg.attribution.flip_max, "attribution");
        get_to(d, "proj_dim", cfg.attribution.proj_dim, "attribution");
        get_to(d, "t_fixed", cfg.attribution.t_fixed, "attribution");
        get_to(d, "methods", cfg.attribution.methods, "attribution");
    }
    if (j.contains("evaluation")) {
        const json& d = j["evaluation"];
        check_keys(d, "evaluation",
                   {"k_grid", "full_methods", "spot_methods", "spot_k", "random_models_per_k", "random_seed"});
        get_to(d, "k_grid", cfg.evaluation.k_grid, "evaluation");
        get_to(d, "full_methods", cfg.evaluation.full_methods, "evaluation");
        get_to(d, "spot_methods", cfg.evaluation.spot_methods, "evaluation");
        get_to(d, "spot_k", cfg.evaluation.spot_k, "evaluation");
        get_to(d, "random_models_per_k", cfg.evaluation.random_models_per_k, "evaluation");
        get_to(d, "random_seed", cfg.evaluation.random_seed, "evaluation");
    }
    if (j.contains("encoder")) {
        const json& d = j["encoder"];
        check_keys(d, "encoder", {"epochs", "batch_size", "learning_rate", "momentum", "seed"});
        get_to(d, "epochs", cfg.encoder.epochs, "encoder");
        get_to(d, "batch_size", cfg.encoder.batch_size, "encoder");
        get_to(d, "learning_rate", cfg.encoder.learning_rate, "encoder");
        get_to(d, "momentum", cfg.encoder.momentum, "encoder");
        get_to(d, "seed", cfg.encoder.seed, "encoder");
    }

    if (cfg.unlearn_region_rect) {
        const auto& r = *cfg.unlearn_region_rect;
        cfg.unlearn.region = RegionMask::rect(cfg.diffusion.image_shape, r[0], r[1], r[2], r[3]);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
    json j;
    json groups = json::array();
    for (const auto& g : cfg.dataset.groups)
        groups.push_back({{"group_id", g.group_id},
                          {"label", g.label},
                          {"count", g.count},
                          {"jitter_std", g.jitter_std}});
    j["dataset"] = {{"n", cfg.dataset.n},
                    {"num_classes", cfg.dataset.num_classes},
                    {"seed", cfg.dataset.seed},
                    {"groups", groups}};
    j["diffusion"] = {{"timesteps", cfg.diffusion.timesteps},
                      {"beta_start", cfg.diffusion.beta_start},
                      {"beta_end", cfg.diffusion.beta_end},
                      {"height", cfg.diffusion.image_shape.height},
                      {"width", cfg.diffusion.image_shape.width}};
    j["denoiser"] = {{"hidden", cfg.denoiser.hidden},
                     {"temb_dim", cfg.denoiser.temb_dim},
                     {"embed_dim", cfg.denoiser.embed_dim}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"momentum", cfg.train.momentum},
                  {"flip_augment", cfg.train.flip_augment},
                  {"seed", cfg.train.seed}};
    j["fisher"] = {{"draws", cfg.fisher.draws}, {"seed", cfg.fisher.seed}, {"damping", cfg.fisher.damping}};
    json region;
    if (cfg.unlearn_region_rect)
        region = {{"row0", (*cfg.unlearn_region_rect)[0]},
                  {"col0", (*cfg.unlearn_region_rect)[1]},
                  {"rows", (*cfg.unlearn_region_rect)[2]},
                  {"cols", (*cfg.unlearn_region_rect)[3]}};
    j["unlearn"] = {{"alpha", cfg.unlearn.alpha},
                    {"steps", cfg.unlearn.steps},
                    {"mask", cfg.unlearn.mask},
                    {"stride", cfg.unlearn.stride},
                    {"seed", cfg.unlearn.seed},
                    {"region", region}};
    j["queries"] = {{"count", cfg.queries.count},
                    {"seed", cfg.queries.seed},
                    {"candidate_seeds", cfg.queries.candidate_seeds}};
    j["attribution"] = {{"stride", cfg.attribution.stride},
                        {"noise_seed", cfg.attribution.noise_seed},
                        {"flip_max", cfg.attribution.flip_max},
                        {"proj_dim", cfg.attribution.proj_dim},
                        {"t_fixed", cfg.attribution.t_fixed},
                        {"methods", cfg.attribution.methods}};
    j["evaluation"] = {{"k_grid", cfg.evaluation.k_grid},
                       {"full_methods", cfg.evaluation.full_methods},
                       {"spot_methods", cfg.evaluation.spot_methods},
                       {"spot_k", cfg.evaluation.spot_k},
                       {"random_models_per_k", cfg.evaluation.random_models_per_k},
                       {"random_seed", cfg.evaluation.random_seed}};
    j["encoder"] = {{"epochs", cfg.encoder.epochs},
                    {"batch_size", cfg.encoder.batch_size},
                    {"learning_rate", cfg.encoder.learning_rate},
                    {"momentum", cfg.encoder.momentum},
                    {"seed", cfg.encoder.seed}};
    return j.dump();
}

std::string apply_overrides_json(const std::string& json_text,
                                 const std::vector<std::pair<std::string, std::string>>& sets) {
    json j = json::parse(json_text.empty() ? "{}" : json_text, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::validation, "run config is not valid JSON");
    for (const auto& [dotted, value] : sets) {
        if (dotted.empty()) fail(ErrorKind::validation, "empty override path");
        std::vector<std::string> parts;
        std::stringstream ss(dotted);
        std::string part;
        while (std::getline(ss, part, '.')) {
            if (part.empty()) fail(ErrorKind::validation, "bad override path: " + dotted);
            parts.push_back(part);
        }
        json* cur = &j;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object()) (*cur)[parts[i]] = json::object();
            cur = &(*cur)[parts[i]];
        }
        json parsed = json::parse(value, nullptr, false);
        (*cur)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
    }
    return j.dump();
}

std::filesystem::path resolve_workspace(const std::string& flag_value) {
    if (!flag_value.empty()) return std::filesystem::path(flag_value);
    if (const char* env = std::getenv("UATTR_WORKSPACE"); env && *env)
        return std::filesystem::path(env);
    return std::filesystem::current_path();
}

std::string dataset_csv_rel() { return kDatasetCsv; }
std::string dataset_bin_rel() { return kDatasetBin; }
std::string base_checkpoint_rel() { return kBaseCkpt; }
std::string fisher_rel() { return kFisherBin; }
std::string queries_rel() { return kQueriesBin; }
std::string unlearn_checkpoint_rel(int query_index) {
    return "runs/unlearn/q" + std::to_string(query_index) + "/checkpoint.bin";
}
std::string score_csv_rel(const std::string& method, int query_index) {
    return "scores/" + method + "_q" + std::to_string(query_index) + ".csv";
}
std::string score_sidecar_rel(const std::string& method, int query_index) {
    return "scores/" + method + "_q" + std::to_string(query_index) + ".json";
}
std::string encoder_rel() { return kEncoderBin; }
std::string reports_csv_rel() { return kReportsCsv; }
std::string random_curve_rel() { return kCurveCsv; }
std::string report_dir_rel() { return "report"; }

namespace {

std::string rel_hash(const std::filesystem::path& ws, const std::string& rel) {
    return hash_hex(file_hash(ws / rel));
}

void write_manifest(const std::filesystem::path& ws, const std::string& rel, const json& manifest) {
    const auto path = ws / rel;
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open for writing: " + path.string());
    out << manifest.dump(2) << '\n';
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

json make_manifest(const std::string& command, const json& cfg_json,
                   const std::vector<std::string>& sections,
                   const std::vector<std::string>& input_rels,
                   const std::vector<std::string>& output_rels, const std::filesystem::path& ws) {
    json m;
    m["command"] = command;
    json secs = json::object();
    for (const auto& s : sections) secs[s] = cfg_json.at(s);
    m["sections"] = secs;
    json inputs = json::object();
    for (const auto& rel : input_rels) inputs[rel] = rel_hash(ws, rel);
    m["inputs"] = inputs;
    json outputs = json::object();
    for (const auto& rel : output_rels) outputs[rel] = rel_hash(ws, rel);
    m["outputs"] = outputs;
    return m;
}

// Loads an upstream manifest, reverifies every recorded output hash, and
// checks that the config sections it was produced under match the current
// configuration.
json check_upstream(const std::filesystem::path& ws, const json& cfg_json,
                    const std::string& manifest_rel, const std::string& expected_command) {
    const auto path = ws / manifest_rel;
    if (!std::filesystem::exists(path))
        fail(ErrorKind::dependency_missing,
             "missing manifest: " + path.string() + " (run '" + expected_command + "' first)");
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open for reading: " + path.string());
    json m = json::parse(in, nullptr, false);
    if (m.is_discarded()) fail(ErrorKind::validation, "invalid manifest JSON: " + path.string());
    if (m.value("command", "") != expected_command)
        fail(ErrorKind::validation, "manifest " + manifest_rel + " was not written by '" +
                                        expected_command + "'");
    const json outputs = m.value("outputs", json::object());
    for (const auto& [rel, hash] : outputs.items()) {
        const auto apath = ws / rel;
        if (!std::filesystem::exists(apath))
            fail(ErrorKind::dependency_missing, "missing artifact: " + apath.string());
        if (rel_hash(ws, rel) != hash.get<std::string>())
            fail(ErrorKind::provenance_conflict,
                 "artifact " + rel + " does not match the hash recorded in " + manifest_rel);
    }
    const json sections = m.value("sections", json::object());
    for (const auto& [name, sec] : sections.items()) {
        if (!cfg_json.contains(name)) continue;
        if (cfg_json.at(name) != sec)
            fail(ErrorKind::provenance_conflict, "config section '" + name +
                                                     "' differs from the one recorded in " + manifest_rel);
    }
    return m;
}

struct Stack {
    Denoiser denoiser;
    NoiseSchedule schedule;

    explicit Stack(const RunConfig& cfg)
        : denoiser(cfg.diffusion, cfg.denoiser), schedule(cfg.diffusion) {}
};

Dataset load_ws_dataset(const std::filesystem::path& ws) {
    return load_dataset(ws / kDatasetCsv, ws / kDatasetBin);
}

double pixel_mse(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> sq(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq[i] = d * d;
    }
    return tree_sum(sq) / double(a.size());
}

std::vector<Query> make_queries(const Dataset& ds, const RunConfig& cfg, const Stack& st,
                                const ParamVector& theta0) {
    std::vector<Query> out;
    out.reserve(std::size_t(cfg.queries.count));
    for (int q = 0; q < cfg.queries.count; ++q) {
        int label = q % ds.spec.num_classes;
        std::vector<double> base;
        if (!ds.spec.groups.empty()) {
            const auto& g = ds.spec.groups[std::size_t(q) % ds.spec.groups.size()];
            label = g.label;
            base = planted_base(ds.spec, g.group_id, ds.shape);
        }
        // a handful of candidate seeds; keep the sample closest to the planted
        // base so group-seeded queries actually look like the group
        const int candidates = base.empty() ? 1 : cfg.queries.candidate_seeds;
        Query best;
        double best_mse = 0.0;
        for (int c = 0; c < candidates; ++c) {
            const std::uint64_t eps_seed =
                make_key(Stream::query, cfg.queries.seed, std::uint64_t(q), std::uint64_t(c));
            auto img = sample(st.denoiser, st.schedule, theta0, label, eps_seed);
            const double m = base.empty() ? 0.0 : pixel_mse(img, base);
            if (c == 0 || m < best_mse) {
                best_mse = m;
                best.eps_seed = eps_seed;
                best.example.pixels = std::move(img);
            }
        }
        best.example.id = -std::int64_t(q) - 1;
        best.example.label = label;
        best.example.flipped = false;
        out.push_back(std::move(best));
    }
    return out;
}

}  // namespace

void cmd_generate(const std::filesystem::path& ws, const RunConfig& cfg) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    const Dataset ds = generate(cfg.dataset, cfg.diffusion.image_shape);
    save_dataset(ds, ws / kDatasetCsv, ws / kDatasetBin);
    json m = make_manifest("generate", cfg_json, {"dataset", "diffusion"}, {},
                           {kDatasetCsv, kDatasetBin}, ws);
    m["content_hash"] = hash_hex(ds.content_hash());
    write_manifest(ws, kDatasetManifest, m);
}

void cmd_train(const std::filesystem::path& ws, const RunConfig& cfg) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kDatasetManifest, "generate");
    const Dataset ds = load_ws_dataset(ws);
    const Stack st(cfg);

    const TrainResult res = train(ds, cfg.train, st.denoiser, st.schedule);
    json meta;
    meta["role"] = "base";
    meta["dataset_hash"] = hash_hex(ds.content_hash());
    save_checkpoint(ws / kBaseCkpt, res.theta, meta.dump());

    std::ofstream log(ws / kTrainLog, std::ios::trunc);
    if (!log) fail(ErrorKind::io, "cannot open for writing: " + (ws / kTrainLog).string());
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < res.epoch_losses.size(); ++e)
        log << e << ',' << format_double(res.epoch_losses[e]) << '\n';
    log.flush();
    if (!log) fail(ErrorKind::io, "write failed: " + (ws / kTrainLog).string());

    write_manifest(ws, kTrainManifest,
                   make_manifest("train", cfg_json, {"dataset", "diffusion", "denoiser", "train"},
                                 {kDatasetCsv, kDatasetBin}, {kBaseCkpt, kTrainLog}, ws));
}

void cmd_fisher(const std::filesystem::path& ws, const RunConfig& cfg) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kDatasetManifest, "generate");
    check_upstream(ws, cfg_json, kTrainManifest, "train");
    const Dataset ds = load_ws_dataset(ws);
    const Stack st(cfg);
    const ParamVector theta0 = load_checkpoint(ws / kBaseCkpt).theta;

    const FisherDiagonal F = estimate_fisher(ds, theta0, st.denoiser, st.schedule, cfg.fisher.draws,
                                             cfg.fisher.seed, cfg.fisher.damping);
    json meta;
    meta["role"] = "fisher";
    meta["checkpoint_hash"] = rel_hash(ws, kBaseCkpt);
    save_fisher(ws / kFisherBin, F, meta.dump());

    write_manifest(ws, kFisherManifest,
                   make_manifest("fisher", cfg_json,
                                 {"dataset", "diffusion", "denoiser", "train", "fisher"},
                                 {kDatasetCsv, kDatasetBin, kBaseCkpt}, {kFisherBin}, ws));
}

void cmd_unlearn(const std::filesystem::path& ws, const RunConfig& cfg, int jobs) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kDatasetManifest, "generate");
    check_upstream(ws, cfg_json, kTrainManifest, "train");
    check_upstream(ws, cfg_json, kFisherManifest, "fisher");
    const Dataset ds = load_ws_dataset(ws);
    const Stack st(cfg);
    const ParamVector theta0 = load_checkpoint(ws / kBaseCkpt).theta;
    const FisherDiagonal F = load_fisher(ws / kFisherBin).fisher;

    if (!std::filesystem::exists(ws / kQueriesBin)) {
        const auto queries = make_queries(ds, cfg, st, theta0);
        json meta;
        meta["role"] = "queries";
        save_queries(ws / kQueriesBin, queries, ds.shape, meta.dump());
        write_manifest(ws, kQueriesManifest,
                       make_manifest("unlearn", cfg_json,
                                     {"dataset", "diffusion", "denoiser", "train", "queries"},
                                     {kDatasetCsv, kDatasetBin, kBaseCkpt}, {kQueriesBin}, ws));
    } else {
        check_upstream(ws, cfg_json, kQueriesManifest, "unlearn");
    }
    // always consumed from disk so generated and preexisting queries follow
    // the identical code path
    const auto queries = load_queries(ws / kQueriesBin, ds.shape);

    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < queries.size(); ++i) outputs.push_back(unlearn_checkpoint_rel(int(i)));
    run_jobs(queries.size(), jobs, [&](std::size_t i) {
        const ParamVector theta_u =
            unlearn(theta0, F, queries[i].example, cfg.unlearn, st.denoiser, st.schedule);
        json meta;
        meta["role"] = "unlearn";
        meta["query_index"] = i;
        meta["query_hash"] = hash_hex(example_hash(queries[i].example));
        save_checkpoint(ws / unlearn_checkpoint_rel(int(i)), theta_u, meta.dump());
    });

    write_manifest(ws, kUnlearnManifest,
                   make_manifest("unlearn", cfg_json,
                                 {"dataset", "diffusion", "denoiser", "train", "fisher", "unlearn", "queries"},
                                 {kDatasetCsv, kDatasetBin, kBaseCkpt, kFisherBin, kQueriesBin},
                                 outputs, ws));
}

void cmd_attribute(const std::filesystem::path& ws, const RunConfig& cfg, int jobs) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kDatasetManifest, "generate");
    check_upstream(ws, cfg_json, kTrainManifest, "train");
    check_upstream(ws, cfg_json, kQueriesManifest, "unlearn");

    const auto& methods = cfg.attribution.methods;
    const bool wants_unlearning = std::count(methods.begin(), methods.end(), "unlearning") > 0;
    const bool wants_influence = std::count(methods.begin(), methods.end(), "influence_projected") > 0 ||
                                 std::count(methods.begin(), methods.end(), "influence_single_t") > 0;
    if (wants_unlearning) check_upstream(ws, cfg_json, kUnlearnManifest, "unlearn");
    if (wants_influence) check_upstream(ws, cfg_json, kFisherManifest, "fisher");

    const Dataset ds = load_ws_dataset(ws);
    const Stack st(cfg);
    const ParamVector theta0 = load_checkpoint(ws / kBaseCkpt).theta;
    const auto queries = load_queries(ws / kQueriesBin, ds.shape);
    FisherDiagonal F;
    if (wants_influence) F = load_fisher(ws / kFisherBin).fisher;

    const auto& at = cfg.attribution;
    InfluenceContext ctx;
    const InfluenceContext* ctx_ptr = nullptr;
    if (wants_influence && at.proj_dim >= 1) {
        ctx = build_influence_context(ds, st.denoiser, st.schedule, theta0, F, at.proj_dim,
                                      at.stride, at.noise_seed, at.flip_max);
        ctx_ptr = &ctx;
    }

    std::vector<std::string> inputs = {kDatasetCsv, kDatasetBin, kBaseCkpt, kQueriesBin};
    if (wants_influence) inputs.push_back(kFisherBin);
    std::vector<std::string> outputs;
    struct Task {
        std::string method;
        int query;
    };
    std::vector<Task> tasks;
    for (const auto& m : methods)
        for (std::size_t i = 0; i < queries.size(); ++i) {
            tasks.push_back({m, int(i)});
            outputs.push_back(score_csv_rel(m, int(i)));
            outputs.push_back(score_sidecar_rel(m, int(i)));
            if (m == "unlearning") inputs.push_back(unlearn_checkpoint_rel(int(i)));
        }

    run_jobs(tasks.size(), jobs, [&](std::size_t ti) {
        const Task& task = tasks[ti];
        const Example& zhat = queries[std::size_t(task.query)].example;
        ScoreTable table;
        if (task.method == "unlearning") {
            const ParamVector theta_u = load_checkpoint(ws / unlearn_checkpoint_rel(task.query)).theta;
            table = score_unlearning(ds, st.denoiser, st.schedule, theta0, theta_u, zhat, at.stride,
                                     at.noise_seed, at.flip_max);
        } else if (task.method == "pixel_cosine") {
            table = score_pixel_cosine(ds, zhat, at.flip_max);
        } else if (task.method == "influence_projected") {
            table = score_influence_projected(ds, st.denoiser, st.schedule, theta0, F, zhat,
                                              at.proj_dim, at.stride, at.noise_seed, at.flip_max, {},
                                              ctx_ptr);
        } else {
            table = score_single_timestep_variant(ds, st.denoiser, st.schedule, theta0, F, zhat,
                                                  at.t_fixed, at.noise_seed, at.flip_max, at.proj_dim,
                                                  at.stride, {}, ctx_ptr);
        }
        save_score_table(table, ws / score_csv_rel(task.method, task.query),
                         ws / score_sidecar_rel(task.method, task.query));
    });

    write_manifest(ws, kScoresManifest,
                   make_manifest("attribute", cfg_json,
                                 {"dataset", "diffusion", "denoiser", "train", "queries", "attribution"},
                                 inputs, outputs, ws));
}

void cmd_evaluate(const std::filesystem::path& ws, const RunConfig& cfg, int jobs) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kDatasetManifest, "generate");
    check_upstream(ws, cfg_json, kTrainManifest, "train");
    check_upstream(ws, cfg_json, kQueriesManifest, "unlearn");
    check_upstream(ws, cfg_json, kScoresManifest, "attribute");

    const Dataset ds = load_ws_dataset(ws);
    const Stack st(cfg);
    const ParamVector theta0 = load_checkpoint(ws / kBaseCkpt).theta;
    const auto queries = load_queries(ws / kQueriesBin, ds.shape);
    const Encoder enc(ds.shape, ds.spec.num_classes);

    if (!std::filesystem::exists(ws / kEncoderBin)) {
        const EncoderTrainResult er = train_encoder(ds, cfg.encoder, enc);
        json meta;
        meta["role"] = "encoder";
        meta["encoder"] = cfg_json.at("encoder");
        meta["train_accuracy"] = er.train_accuracy;
        save_encoder(ws / kEncoderBin, er.theta, meta.dump());
    } else {
        const Container c = read_container(ws / kEncoderBin, kEncoderMagic);
        const json header = json::parse(c.header_json, nullptr, false);
        if (header.is_discarded() || !header.contains("meta") ||
            header["meta"].value("encoder", json()) != cfg_json.at("encoder"))
            fail(ErrorKind::provenance_conflict,
                 "encoder artifact was trained under a different encoder configuration");
    }
    const ParamVector enc_theta = load_encoder(ws / kEncoderBin, enc);

    const auto& ev = cfg.evaluation;
    std::vector<std::string> needed = ev.full_methods;
    for (const auto& m : ev.spot_methods)
        if (!std::count(needed.begin(), needed.end(), m)) needed.push_back(m);

    std::map<std::string, std::vector<ScoreTable>> tables;
    std::vector<std::string> inputs = {kDatasetCsv, kDatasetBin, kBaseCkpt, kQueriesBin};
    for (const auto& m : needed) {
        auto& list = tables[m];
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto csv = ws / score_csv_rel(m, int(i));
            if (!std::filesystem::exists(csv))
                fail(ErrorKind::dependency_missing, "missing artifact: " + csv.string());
            list.push_back(load_score_table(csv, ws / score_sidecar_rel(m, int(i))));
            inputs.push_back(score_csv_rel(m, int(i)));
        }
    }

    struct Task {
        std::string method;
        std::size_t k;
        std::size_t query;
    };
    std::vector<Task> plan;
    std::set<std::pair<std::string, std::size_t>> planned;
    for (const auto& m : ev.full_methods)
        for (const std::size_t k : ev.k_grid)
            if (planned.insert({m, k}).second)
                for (std::size_t qi = 0; qi < queries.size(); ++qi) plan.push_back({m, k, qi});
    for (const auto& m : ev.spot_methods)
        if (planned.insert({m, ev.spot_k}).second)
            for (std::size_t qi = 0; qi < queries.size(); ++qi) plan.push_back({m, ev.spot_k, qi});

    std::vector<CounterfactualReport> reports(plan.size());
    run_jobs(plan.size(), jobs, [&](std::size_t pi) {
        const Task& t = plan[pi];
        reports[pi] = eval_leave_k(ds, theta0, {tables.at(t.method)[t.query]}, t.k,
                                   {queries[t.query]}, cfg.train, st.denoiser, st.schedule,
                                   cfg.attribution.noise_seed, &enc, &enc_theta)[0];
    });

    std::vector<std::size_t> curve_grid = ev.k_grid;
    if (curve_grid.empty() || curve_grid.front() != 0) curve_grid.insert(curve_grid.begin(), 0);
    const RandomReferenceCurve curve =
        random_reference(ds, theta0, curve_grid, ev.random_models_per_k, queries, ev.random_seed,
                         cfg.train, st.denoiser, st.schedule, cfg.attribution.noise_seed, &enc,
                         &enc_theta);

    save_reports_csv(ws / kReportsCsv, reports);
    save_curve_csv(ws / kCurveCsv, curve);

    write_manifest(
        ws, kEvalManifest,
        make_manifest("evaluate", cfg_json,
                      {"dataset", "diffusion", "denoiser", "train", "queries", "attribution",
                       "evaluation", "encoder"},
                      inputs, {kReportsCsv, kCurveCsv, kEncoderBin}, ws));
}

void cmd_report(const std::filesystem::path& ws, const RunConfig& cfg) {
    cfg.validate();
    const json cfg_json = json::parse(run_config_json(cfg));
    check_upstream(ws, cfg_json, kEvalManifest, "evaluate");

    const auto reports = load_reports_csv(ws / kReportsCsv);
    const auto curve = load_curve_csv(ws / kCurveCsv);

    std::vector<std::string> header;
    header.push_back("Dataset: " + std::to_string(cfg.dataset.n) + " examples, " +
                     std::to_string(cfg.dataset.num_classes) + " classes, " +
                     std::to_string(cfg.dataset.groups.size()) + " planted groups.");
    header.push_back("Queries: " + std::to_string(cfg.queries.count) +
                     " synthesized images; attribution stride " +
                     std::to_string(cfg.attribution.stride) + ".");
    header.push_back("Random reference: " + std::to_string(cfg.evaluation.random_models_per_k) +
                     " models per k.");
    write_report(ws / report_dir_rel(), reports, curve, header);

    const std::string dir = report_dir_rel();
    write_manifest(ws, kReportManifest,
                   make_manifest("report", cfg_json, {"evaluation"}, {kReportsCsv, kCurveCsv},
                                 {dir + "/report.md", dir + "/delta_loss_vs_k.svg",
                                  dir + "/delta_gen_vs_k.svg"},
                                 ws));
}

}  // namespace uattr
