#include "uattr/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"
#include "uattr/sampler.hpp"
#include "uattr/storage.hpp"

namespace uattr {

using nlohmann::json;

void save_queries(const std::filesystem::path& path, const std::vector<Query>& queries,
                  const ImageShape& shape, const std::string& meta_json) {
    std::vector<float> pixels;
    pixels.reserve(queries.size() * shape.size());
    json ids = json::array(), labels = json::array(), seeds = json::array();
    for (const auto& q : queries) {
        if (q.example.pixels.size() != shape.size())
            fail(ErrorKind::validation, "query image size does not match shape");
        for (double v : q.example.pixels) pixels.push_back(float(v));
        ids.push_back(q.example.id);
        labels.push_back(q.example.label);
        seeds.push_back(q.eps_seed);
    }
    json meta = json::parse(meta_json, nullptr, false);
    if (meta.is_discarded()) meta = json::object();
    meta["ids"] = ids;
    meta["labels"] = labels;
    meta["eps_seeds"] = seeds;
    save_images(path, shape, pixels, meta.dump());
}

std::vector<Query> load_queries(const std::filesystem::path& path, const ImageShape& shape) {
    const LoadedImages blob = load_images(path);
    if (!(blob.shape == shape))
        fail(ErrorKind::validation, "query blob shape does not match configuration");
    json meta = json::parse(blob.meta_json, nullptr, false);
    if (meta.is_discarded() || !meta.contains("ids") || !meta.contains("labels") ||
        !meta.contains("eps_seeds"))
        fail(ErrorKind::validation, "query blob is missing ids/labels/eps_seeds metadata");
    const auto& ids = meta["ids"];
    const auto& labels = meta["labels"];
    const auto& seeds = meta["eps_seeds"];
    if (ids.size() != blob.count || labels.size() != blob.count || seeds.size() != blob.count)
        fail(ErrorKind::validation, "query metadata does not match image count");

    std::vector<Query> queries(blob.count);
    for (std::size_t i = 0; i < blob.count; ++i) {
        Query& q = queries[i];
        q.example.id = ids[i].get<std::int64_t>();
        q.example.label = labels[i].get<int>();
        q.eps_seed = seeds[i].get<std::uint64_t>();
        q.example.pixels.resize(shape.size());
        for (std::size_t p = 0; p < shape.size(); ++p)
            q.example.pixels[p] = double(blob.pixels[i * shape.size() + p]);
    }
    return queries;
}

void CounterfactualReport::validate() const {
    if (!std::isfinite(delta_loss) || !std::isfinite(delta_gen_mse) || !std::isfinite(delta_gen_feat))
        fail(ErrorKind::numeric, "non-finite counterfactual metrics for query " + query_hash);
    if (removed_ids.size() != k)
        fail(ErrorKind::validation, "report removed set size does not match k");
}

namespace {

double image_mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail(ErrorKind::validation, "image_mse: size mismatch");
    std::vector<double> sq(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq[i] = d * d;
    }
    return tree_sum(sq) / double(a.size());
}

CounterfactualReport measure(const Dataset& ds, const ParamVector& theta0,
                             const ParamVector& theta_mk, const Query& q,
                             const Denoiser& denoiser, const NoiseSchedule& schedule,
                             std::uint64_t loss_noise_seed, const Encoder* enc,
                             const ParamVector* enc_theta) {
    (void)ds;
    CounterfactualReport r;
    r.query_hash = hash_hex(example_hash(q.example));
    const double before = strided_loss(denoiser, schedule, theta0, q.example, 1, loss_noise_seed);
    const double after = strided_loss(denoiser, schedule, theta_mk, q.example, 1, loss_noise_seed);
    r.delta_loss = after - before;

    const auto img0 = sample(denoiser, schedule, theta0, q.example.label, q.eps_seed);
    const auto img1 = sample(denoiser, schedule, theta_mk, q.example.label, q.eps_seed);
    r.delta_gen_mse = image_mse(img0, img1);
    if (enc && enc_theta)
        r.delta_gen_feat = cosine_distance(enc->embed(*enc_theta, img0), enc->embed(*enc_theta, img1));
    return r;
}

}  // namespace

std::vector<CounterfactualReport> eval_leave_k(
    const Dataset& ds, const ParamVector& theta0, const std::vector<ScoreTable>& tables,
    std::size_t k, const std::vector<Query>& queries, const TrainConfig& tcfg,
    const Denoiser& denoiser, const NoiseSchedule& schedule, std::uint64_t loss_noise_seed,
    const Encoder* enc, const ParamVector* enc_theta) {
    if (tables.size() != queries.size())
        fail(ErrorKind::validation, "eval_leave_k: one score table per query required");
    if (k > ds.examples.size())
        fail(ErrorKind::range, "eval_leave_k: k exceeds dataset size");

    std::vector<CounterfactualReport> reports;
    reports.reserve(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        std::vector<std::int64_t> removed;
        ParamVector theta_mk;
        if (k == 0) {
            theta_mk = theta0;  // deterministic retraining of the intact set reproduces theta0
        } else {
            removed = top_k(tables[qi], k);
            theta_mk = retrain_leave_k(ds, removed, tcfg, denoiser, schedule).theta;
        }
        CounterfactualReport r = measure(ds, theta0, theta_mk, queries[qi], denoiser, schedule,
                                         loss_noise_seed, enc, enc_theta);
        r.method = tables[qi].method;
        r.k = k;
        r.removed_ids = std::move(removed);
        r.validate();
        reports.push_back(std::move(r));
    }
    return reports;
}

std::vector<std::int64_t> random_removal_ids(const Dataset& ds, std::size_t k, std::uint64_t seed,
                                             std::uint64_t model_index) {
    if (k > ds.examples.size()) fail(ErrorKind::range, "random removal: k exceeds dataset size");
    std::vector<std::pair<std::uint64_t, std::int64_t>> order;
    order.reserve(ds.examples.size());
    for (const auto& z : ds.examples)
        order.emplace_back(
            make_key(Stream::random_removal, seed, std::uint64_t(k), model_index, std::uint64_t(z.id)),
            z.id);
    std::sort(order.begin(), order.end());
    std::vector<std::int64_t> removed;
    removed.reserve(k);
    for (std::size_t i = 0; i < k; ++i) removed.push_back(order[i].second);
    std::sort(removed.begin(), removed.end());
    return removed;
}

RandomReferenceCurve random_reference(const Dataset& ds, const ParamVector& theta0,
                                      const std::vector<std::size_t>& k_grid, int models_per_k,
                                      const std::vector<Query>& queries, std::uint64_t seed,
                                      const TrainConfig& tcfg, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, std::uint64_t loss_noise_seed,
                                      const Encoder* enc, const ParamVector* enc_theta) {
    if (models_per_k < 1) fail(ErrorKind::validation, "random reference needs models_per_k >= 1");
    if (queries.empty()) fail(ErrorKind::validation, "random reference needs at least one query");
    if (!std::is_sorted(k_grid.begin(), k_grid.end()))
        fail(ErrorKind::validation, "random reference k grid must be ascending");

    RandomReferenceCurve curve;
    curve.models_per_k = models_per_k;
    for (const std::size_t k : k_grid) {
        std::vector<double> losses, gens;
        for (int m = 0; m < models_per_k; ++m) {
            ParamVector theta_mk;
            if (k == 0) {
                theta_mk = theta0;
            } else {
                const auto removed = random_removal_ids(ds, k, seed, std::uint64_t(m));
                theta_mk = retrain_leave_k(ds, removed, tcfg, denoiser, schedule).theta;
            }
            for (const auto& q : queries) {
                const CounterfactualReport r = measure(ds, theta0, theta_mk, q, denoiser, schedule,
                                                       loss_noise_seed, enc, enc_theta);
                losses.push_back(r.delta_loss);
                gens.push_back(r.delta_gen_mse);
            }
        }
        RandomCurvePoint pt;
        pt.k = k;
        pt.mean_delta_loss = mean_of(losses);
        pt.mean_delta_gen = mean_of(gens);
        if (losses.size() > 1) {
            std::vector<double> sq(losses.size());
            for (std::size_t i = 0; i < losses.size(); ++i) {
                const double d = losses[i] - pt.mean_delta_loss;
                sq[i] = d * d;
            }
            const double var = tree_sum(sq) / double(losses.size() - 1);
            pt.stderr_delta_loss = std::sqrt(var / double(losses.size()));
        }
        curve.points.push_back(pt);
    }
    return curve;
}

EquivalentK equivalent_random_k(const RandomReferenceCurve& curve, double delta_loss) {
    const auto& pts = curve.points;
    if (pts.size() < 2)
        fail(ErrorKind::validation, "equivalent_random_k needs a curve with at least 2 points");
    if (!std::isfinite(delta_loss)) fail(ErrorKind::numeric, "equivalent_random_k: non-finite input");

    for (const auto& pt : pts)
        if (delta_loss == pt.mean_delta_loss) return {double(pt.k), false};
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double lo = pts[i].mean_delta_loss, hi = pts[i + 1].mean_delta_loss;
        const bool inside = (lo <= delta_loss && delta_loss <= hi) || (hi <= delta_loss && delta_loss <= lo);
        if (!inside || lo == hi) continue;
        const double t = (delta_loss - lo) / (hi - lo);
        return {double(pts[i].k) + t * (double(pts[i + 1].k) - double(pts[i].k)), false};
    }
    double mn = pts.front().mean_delta_loss, mx = pts.front().mean_delta_loss;
    std::size_t k_at_mn = pts.front().k, k_at_mx = pts.front().k;
    for (const auto& pt : pts) {
        if (pt.mean_delta_loss < mn) { mn = pt.mean_delta_loss; k_at_mn = pt.k; }
        if (pt.mean_delta_loss > mx) { mx = pt.mean_delta_loss; k_at_mx = pt.k; }
    }
    return delta_loss > mx ? EquivalentK{double(k_at_mx), true} : EquivalentK{double(k_at_mn), true};
}

namespace {

constexpr const char* kReportHeader = "query,method,k,delta_loss,delta_gen_mse,delta_gen_feat";

void write_report_rows(std::ofstream& out, const std::vector<CounterfactualReport>& reports) {
    for (const auto& r : reports) {
        r.validate();
        out << r.query_hash << ',' << r.method << ',' << r.k << ',' << format_double(r.delta_loss)
            << ',' << format_double(r.delta_gen_mse) << ',' << format_double(r.delta_gen_feat)
            << '\n';
    }
}

}  // namespace

void save_reports_csv(const std::filesystem::path& csv_path,
                      const std::vector<CounterfactualReport>& reports) {
    if (csv_path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(csv_path.parent_path(), ec);
    }
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open for writing: " + csv_path.string());
    out << kReportHeader << '\n';
    write_report_rows(out, reports);
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + csv_path.string());
}

void append_reports_csv(const std::filesystem::path& csv_path,
                        const std::vector<CounterfactualReport>& reports) {
    const bool fresh = !std::filesystem::exists(csv_path);
    if (fresh) {
        save_reports_csv(csv_path, reports);
        return;
    }
    std::ofstream out(csv_path, std::ios::app);
    if (!out) fail(ErrorKind::io, "cannot open for appending: " + csv_path.string());
    write_report_rows(out, reports);
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + csv_path.string());
}

std::vector<CounterfactualReport> load_reports_csv(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(ErrorKind::io, "cannot open for reading: " + csv_path.string());
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        fail(ErrorKind::validation, "unexpected report header in " + csv_path.string());
    std::vector<CounterfactualReport> reports;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string q, m, k, dl, dg, df;
        if (!std::getline(ss, q, ',') || !std::getline(ss, m, ',') || !std::getline(ss, k, ',') ||
            !std::getline(ss, dl, ',') || !std::getline(ss, dg, ',') || !std::getline(ss, df))
            fail(ErrorKind::validation, "malformed report row in " + csv_path.string());
        CounterfactualReport r;
        r.query_hash = q;
        r.method = m;
        r.k = std::stoull(k);
        r.delta_loss = std::stod(dl);
        r.delta_gen_mse = std::stod(dg);
        r.delta_gen_feat = std::stod(df);
        r.removed_ids.assign(r.k, -1);  // ids are not stored in the CSV
        reports.push_back(std::move(r));
    }
    return reports;
}

void save_curve_csv(const std::filesystem::path& csv_path, const RandomReferenceCurve& curve) {
    if (csv_path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(csv_path.parent_path(), ec);
    }
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open for writing: " + csv_path.string());
    out << "k,mean_delta_loss,stderr_delta_loss,mean_delta_gen,models_per_k\n";
    for (const auto& pt : curve.points)
        out << pt.k << ',' << format_double(pt.mean_delta_loss) << ','
            << format_double(pt.stderr_delta_loss) << ',' << format_double(pt.mean_delta_gen)
            << ',' << curve.models_per_k << '\n';
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + csv_path.string());
}

RandomReferenceCurve load_curve_csv(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(ErrorKind::io, "cannot open for reading: " + csv_path.string());
    std::string line;
    if (!std::getline(in, line) || line != "k,mean_delta_loss,stderr_delta_loss,mean_delta_gen,models_per_k")
        fail(ErrorKind::validation, "unexpected curve header in " + csv_path.string());
    RandomReferenceCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string k, ml, se, mg, mpk;
        if (!std::getline(ss, k, ',') || !std::getline(ss, ml, ',') || !std::getline(ss, se, ',') ||
            !std::getline(ss, mg, ',') || !std::getline(ss, mpk))
            fail(ErrorKind::validation, "malformed curve row in " + csv_path.string());
        RandomCurvePoint pt;
        pt.k = std::stoull(k);
        pt.mean_delta_loss = std::stod(ml);
        pt.stderr_delta_loss = std::stod(se);
        pt.mean_delta_gen = std::stod(mg);
        curve.points.push_back(pt);
        curve.models_per_k = std::stoi(mpk);
    }
    if (curve.points.empty()) fail(ErrorKind::validation, "empty curve in " + csv_path.string());
    return curve;
}

}  // namespace uattr
