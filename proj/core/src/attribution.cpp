#include "uattr/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"

namespace uattr {

using nlohmann::json;

void ScoreTable::validate_finite() const {
    for (const auto& [id, row] : scores) {
        if (!std::isfinite(row.score) || !std::isfinite(row.score_flipped) ||
            !std::isfinite(row.score_final))
            fail(ErrorKind::numeric, "non-finite score for id " + std::to_string(id));
    }
}

std::uint64_t example_hash(const Example& e) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a64(&e.label, sizeof(e.label), h);
    for (double v : e.pixels) {
        const float f = float(v);
        h = fnv1a64(&f, sizeof(f), h);
    }
    return h;
}

namespace {

double finalize(double score, double score_flipped, bool flip_max) {
    return flip_max ? std::max(score, score_flipped) : score;
}

void check_layouts(const ParamVector& a, const Denoiser& denoiser, const char* what) {
    if (!a.layout || !(*a.layout == *denoiser.layout()))
        fail(ErrorKind::validation, std::string(what) + ": parameter layout mismatch");
}

}  // namespace

ScoreTable score_unlearning(const Dataset& ds, const Denoiser& denoiser,
                            const NoiseSchedule& schedule, const ParamVector& theta0,
                            const ParamVector& theta_unlearned, const Example& zhat, int stride,
                            std::uint64_t noise_seed, bool flip_max) {
    check_layouts(theta0, denoiser, "score_unlearning");
    check_layouts(theta_unlearned, denoiser, "score_unlearning");
    if (!theta0.same_layout(theta_unlearned))
        fail(ErrorKind::validation, "score_unlearning: checkpoints do not share a layout");

    ScoreTable table;
    table.method = "unlearning";
    table.query_hash = hash_hex(example_hash(zhat));
    json params;
    params["stride"] = stride;
    params["noise_seed"] = noise_seed;
    params["flip_max"] = flip_max;
    table.params_json = params.dump();

    for (const auto& z : ds.examples) {
        ScoreRow row;
        const double before = strided_loss(denoiser, schedule, theta0, z, stride, noise_seed);
        const double after = strided_loss(denoiser, schedule, theta_unlearned, z, stride, noise_seed);
        row.score = after - before;
        if (flip_max) {
            const Example zf = flip(z, ds.shape);
            const double before_f = strided_loss(denoiser, schedule, theta0, zf, stride, noise_seed);
            const double after_f = strided_loss(denoiser, schedule, theta_unlearned, zf, stride, noise_seed);
            row.score_flipped = after_f - before_f;
        } else {
            row.score_flipped = row.score;
        }
        row.score_final = finalize(row.score, row.score_flipped, flip_max);
        table.scores[z.id] = row;
    }
    table.validate_finite();
    return table;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail(ErrorKind::validation, "cosine: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

ScoreTable score_pixel_cosine(const Dataset& ds, const Example& zhat, bool flip_max) {
    ScoreTable table;
    table.method = "pixel_cosine";
    table.query_hash = hash_hex(example_hash(zhat));
    json params;
    params["flip_max"] = flip_max;
    table.params_json = params.dump();

    for (const auto& z : ds.examples) {
        ScoreRow row;
        row.score = cosine(zhat.pixels, z.pixels);
        row.score_flipped =
            flip_max ? cosine(zhat.pixels, flip_horizontal(z.pixels, ds.shape)) : row.score;
        row.score_final = finalize(row.score, row.score_flipped, flip_max);
        table.scores[z.id] = row;
    }
    table.validate_finite();
    return table;
}

namespace {

// Whitening shares the precondition denominator so the influence closed form
// matches the one-step unlearning limit: u[i] = g[i] / sqrt(F[i] + lambda).
std::vector<double> whiten(const std::vector<double>& g, const FisherDiagonal& F,
                           const std::vector<bool>& mask) {
    const double mean = F.mean_value();
    const double lambda = mean > 0.0 ? F.damping * mean : F.damping;
    std::vector<double> u(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) u[i] = g[i] / std::sqrt(F.values[i] + lambda);
    return u;
}

std::vector<float> build_projection(std::uint64_t seed, std::size_t proj_dim, std::size_t dim) {
    std::vector<float> P(proj_dim * dim);
    const float scale = float(1.0 / std::sqrt(double(proj_dim)));
    for (std::size_t r = 0; r < proj_dim; ++r) {
        const std::uint64_t key = make_key(Stream::projection, seed, r);
        float* row = P.data() + r * dim;
        for (std::size_t c = 0; c < dim; ++c)
            row[c] = uniform01(key, c) < 0.5 ? scale : -scale;
    }
    return P;
}

std::vector<double> project(const std::vector<float>& P, std::size_t proj_dim,
                            const std::vector<double>& u) {
    const std::size_t dim = u.size();
    std::vector<double> out(proj_dim, 0.0);
    for (std::size_t r = 0; r < proj_dim; ++r) {
        const float* row = P.data() + r * dim;
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) acc += double(row[c]) * u[c];
        out[r] = acc;
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

std::vector<double> whitened_strided_grad(const Dataset& ds, const Denoiser& denoiser,
                                          const NoiseSchedule& schedule, const ParamVector& theta0,
                                          const FisherDiagonal& F, const Example& z, int stride,
                                          std::uint64_t seed, const std::vector<bool>& mask) {
    std::vector<double> grad(theta0.size(), 0.0);
    strided_loss_grad(denoiser, schedule, theta0, z, stride, seed, nullptr, grad);
    (void)ds;
    return whiten(grad, F, mask);
}

json influence_params(int proj_dim, int stride, std::uint64_t seed, bool flip_max,
                      const std::vector<std::string>& mask_names) {
    json params;
    params["proj_dim"] = proj_dim;
    params["stride"] = stride;
    params["seed"] = seed;
    params["flip_max"] = flip_max;
    params["mask"] = mask_names;
    return params;
}

}  // namespace

InfluenceContext build_influence_context(const Dataset& ds, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const ParamVector& theta0,
                                         const FisherDiagonal& F, int proj_dim, int stride,
                                         std::uint64_t seed, bool flip_max,
                                         const std::vector<std::string>& mask_names) {
    check_layouts(theta0, denoiser, "influence features");
    if (proj_dim < 1) fail(ErrorKind::validation, "influence context requires proj_dim >= 1");
    const auto mask = segment_mask(*theta0.layout, mask_names);
    const auto P = build_projection(seed, std::size_t(proj_dim), theta0.size());

    InfluenceContext ctx;
    ctx.plain.dim = std::size_t(proj_dim);
    if (flip_max) ctx.flipped.dim = std::size_t(proj_dim);
    for (const auto& z : ds.examples) {
        const auto u = whitened_strided_grad(ds, denoiser, schedule, theta0, F, z, stride, seed, mask);
        const auto f = project(P, std::size_t(proj_dim), u);
        ctx.plain.ids.push_back(z.id);
        ctx.plain.data.insert(ctx.plain.data.end(), f.begin(), f.end());
        if (flip_max) {
            const Example zf = flip(z, ds.shape);
            const auto uf = whitened_strided_grad(ds, denoiser, schedule, theta0, F, zf, stride, seed, mask);
            const auto ff = project(P, std::size_t(proj_dim), uf);
            ctx.flipped.ids.push_back(z.id);
            ctx.flipped.data.insert(ctx.flipped.data.end(), ff.begin(), ff.end());
        }
    }
    return ctx;
}

namespace {

ScoreTable score_influence_impl(const Dataset& ds, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, const ParamVector& theta0,
                                const FisherDiagonal& F, const Example& zhat,
                                const std::vector<double>& query_grad, const char* method,
                                json params, int proj_dim, int stride, std::uint64_t seed,
                                bool flip_max, const std::vector<std::string>& mask_names,
                                const InfluenceContext* cached) {
    check_layouts(theta0, denoiser, "score_influence");
    if (proj_dim < 0) fail(ErrorKind::validation, "proj_dim must be >= 0");
    const auto mask = segment_mask(*theta0.layout, mask_names);
    const auto u_query = whiten(query_grad, F, mask);

    ScoreTable table;
    table.method = method;
    table.query_hash = hash_hex(example_hash(zhat));
    table.params_json = params.dump();

    if (proj_dim == 0) {
        // exact closed form, streamed per example
        for (const auto& z : ds.examples) {
            ScoreRow row;
            const auto u = whitened_strided_grad(ds, denoiser, schedule, theta0, F, z, stride, seed, mask);
            row.score = dot(u, u_query);
            if (flip_max) {
                const Example zf = flip(z, ds.shape);
                const auto uf = whitened_strided_grad(ds, denoiser, schedule, theta0, F, zf, stride, seed, mask);
                row.score_flipped = dot(uf, u_query);
            } else {
                row.score_flipped = row.score;
            }
            row.score_final = finalize(row.score, row.score_flipped, flip_max);
            table.scores[z.id] = row;
        }
        table.validate_finite();
        return table;
    }

    InfluenceContext local;
    const InfluenceContext* ctx = cached;
    if (!ctx) {
        local = build_influence_context(ds, denoiser, schedule, theta0, F, proj_dim, stride, seed,
                                        flip_max, mask_names);
        ctx = &local;
    }
    if (ctx->plain.dim != std::size_t(proj_dim) || ctx->plain.ids.size() != ds.examples.size())
        fail(ErrorKind::validation, "cached influence features do not match this call");
    if (flip_max && ctx->flipped.ids.size() != ds.examples.size())
        fail(ErrorKind::validation, "cached influence features lack flipped rows");

    const auto P = build_projection(seed, std::size_t(proj_dim), theta0.size());
    const auto q = project(P, std::size_t(proj_dim), u_query);
    for (std::size_t r = 0; r < ctx->plain.ids.size(); ++r) {
        ScoreRow row;
        row.score = dot(ctx->plain.row(r), std::span<const double>(q));
        row.score_flipped = flip_max ? dot(ctx->flipped.row(r), std::span<const double>(q)) : row.score;
        row.score_final = finalize(row.score, row.score_flipped, flip_max);
        table.scores[ctx->plain.ids[r]] = row;
    }
    table.validate_finite();
    return table;
}

}  // namespace

ScoreTable score_influence_projected(const Dataset& ds, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, const ParamVector& theta0,
                                     const FisherDiagonal& F, const Example& zhat, int proj_dim,
                                     int stride, std::uint64_t seed, bool flip_max,
                                     const std::vector<std::string>& mask_names,
                                     const InfluenceContext* cached) {
    std::vector<double> query_grad(theta0.size(), 0.0);
    strided_loss_grad(denoiser, schedule, theta0, zhat, stride, seed, nullptr, query_grad);
    json params = influence_params(proj_dim, stride, seed, flip_max, mask_names);
    return score_influence_impl(ds, denoiser, schedule, theta0, F, zhat, query_grad,
                                "influence_projected", std::move(params), proj_dim, stride, seed,
                                flip_max, mask_names, cached);
}

ScoreTable score_single_timestep_variant(const Dataset& ds, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const ParamVector& theta0,
                                         const FisherDiagonal& F, const Example& zhat, int t_fixed,
                                         std::uint64_t seed, bool flip_max, int proj_dim,
                                         int stride, const std::vector<std::string>& mask_names,
                                         const InfluenceContext* cached) {
    if (t_fixed < 1 || t_fixed > schedule.timesteps())
        fail(ErrorKind::range, "t_fixed " + std::to_string(t_fixed) + " outside [1, " +
                                   std::to_string(schedule.timesteps()) + "]");
    std::vector<double> query_grad(theta0.size(), 0.0);
    const auto eps = loss_noise(seed, zhat.id, t_fixed, zhat.pixels.size());
    ddpm_loss_grad(denoiser, schedule, theta0, zhat, t_fixed, eps, nullptr, query_grad);
    json params = influence_params(proj_dim, stride, seed, flip_max, mask_names);
    params["t_fixed"] = t_fixed;
    return score_influence_impl(ds, denoiser, schedule, theta0, F, zhat, query_grad,
                                "influence_single_t", std::move(params), proj_dim, stride, seed,
                                flip_max, mask_names, cached);
}

std::vector<std::int64_t> top_k(const ScoreTable& table, std::size_t k) {
    if (k < 1 || k > table.scores.size())
        fail(ErrorKind::range, "top_k: k=" + std::to_string(k) + " outside [1, " +
                                   std::to_string(table.scores.size()) + "]");
    std::vector<std::pair<double, std::int64_t>> rows;
    rows.reserve(table.scores.size());
    for (const auto& [id, row] : table.scores) {
        if (!std::isfinite(row.score_final))
            fail(ErrorKind::numeric, "top_k: non-finite score for id " + std::to_string(id));
        rows.emplace_back(row.score_final, id);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::int64_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(rows[i].second);
    return out;
}

void save_score_table(const ScoreTable& table, const std::filesystem::path& csv_path,
                      const std::filesystem::path& sidecar_path) {
    table.validate_finite();
    if (csv_path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(csv_path.parent_path(), ec);
    }
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) fail(ErrorKind::io, "cannot open for writing: " + csv_path.string());
    csv << "id,score,score_flipped,score_final\n";
    for (const auto& [id, row] : table.scores)
        csv << id << ',' << format_double(row.score) << ',' << format_double(row.score_flipped)
            << ',' << format_double(row.score_final) << '\n';
    csv.flush();
    if (!csv) fail(ErrorKind::io, "write failed: " + csv_path.string());

    json side;
    side["method"] = table.method;
    side["query_hash"] = table.query_hash;
    json params = json::parse(table.params_json, nullptr, false);
    side["params"] = params.is_discarded() ? json::object() : params;
    std::ofstream out(sidecar_path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open for writing: " + sidecar_path.string());
    out << side.dump(2) << '\n';
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + sidecar_path.string());
}

ScoreTable load_score_table(const std::filesystem::path& csv_path,
                            const std::filesystem::path& sidecar_path) {
    ScoreTable table;
    std::ifstream side_in(sidecar_path);
    if (!side_in) fail(ErrorKind::io, "cannot open for reading: " + sidecar_path.string());
    json side = json::parse(side_in, nullptr, false);
    if (side.is_discarded()) fail(ErrorKind::validation, "invalid JSON in " + sidecar_path.string());
    table.method = side.value("method", "");
    table.query_hash = side.value("query_hash", "");
    table.params_json = side.value("params", json::object()).dump();

    std::ifstream csv(csv_path);
    if (!csv) fail(ErrorKind::io, "cannot open for reading: " + csv_path.string());
    std::string line;
    if (!std::getline(csv, line) || line != "id,score,score_flipped,score_final")
        fail(ErrorKind::validation, "unexpected score header in " + csv_path.string());
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id_s, a, b, c;
        if (!std::getline(ss, id_s, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
            !std::getline(ss, c))
            fail(ErrorKind::validation, "malformed score row in " + csv_path.string());
        ScoreRow row{std::stod(a), std::stod(b), std::stod(c)};
        table.scores[std::stoll(id_s)] = row;
    }
    table.validate_finite();
    return table;
}

}  // namespace uattr
