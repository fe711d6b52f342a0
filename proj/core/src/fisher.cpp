#include "uattr/fisher.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"
#include "uattr/storage.hpp"

namespace uattr {

using nlohmann::json;

void FisherDiagonal::validate() const {
    if (!layout) fail(ErrorKind::validation, "fisher has no layout");
    if (values.size() != layout->total_size())
        fail(ErrorKind::validation, "fisher value count does not match layout");
    if (sample_count < 1) fail(ErrorKind::validation, "fisher sample_count must be >= 1");
    if (!(damping > 0.0)) fail(ErrorKind::validation, "fisher damping must be > 0");
    for (double v : values)
        if (!(v >= 0.0)) fail(ErrorKind::validation, "fisher values must be nonnegative and finite");
}

double FisherDiagonal::mean_value() const { return mean_of(values); }

namespace {

// Binary-counter pairwise reduction: level L holds the sum of a aligned block
// of 2^L draws. Adding the 2m-th draw collapses levels exactly like the two
// independent m-draw runs would, which makes half-run averages exact.
class PairwiseAccumulator {
  public:
    explicit PairwiseAccumulator(std::size_t dim) : dim_(dim) {}

    void add(std::vector<double>& incoming) {
        std::size_t level = 0;
        for (;;) {
            if (level == levels_.size()) {
                levels_.push_back(incoming);
                occupied_.push_back(true);
                return;
            }
            if (!occupied_[level]) {
                levels_[level] = incoming;
                occupied_[level] = true;
                return;
            }
            // earlier block on the left
            for (std::size_t j = 0; j < dim_; ++j) incoming[j] = levels_[level][j] + incoming[j];
            occupied_[level] = false;
            ++level;
        }
    }

    std::vector<double> total() const {
        std::vector<double> result;
        for (std::size_t level = 0; level < levels_.size(); ++level) {
            if (!occupied_[level]) continue;
            if (result.empty()) {
                result = levels_[level];
            } else {
                for (std::size_t j = 0; j < dim_; ++j) result[j] = levels_[level][j] + result[j];
            }
        }
        if (result.empty()) result.assign(dim_, 0.0);
        return result;
    }

  private:
    std::size_t dim_;
    std::vector<std::vector<double>> levels_;
    std::vector<bool> occupied_;
};

}  // namespace

FisherDiagonal fisher_from_draws(LayoutPtr layout, std::uint64_t draws,
                                 const std::function<void(std::uint64_t, std::vector<double>&)>& grad_fn,
                                 double damping) {
    if (!layout) fail(ErrorKind::validation, "fisher_from_draws: layout required");
    if (draws < 1) fail(ErrorKind::validation, "fisher draws must be >= 1");
    if (!(damping > 0.0)) fail(ErrorKind::validation, "fisher damping must be > 0");
    const std::size_t dim = layout->total_size();

    PairwiseAccumulator acc(dim);
    std::vector<double> grad(dim);
    std::vector<double> squared(dim);
    for (std::uint64_t i = 0; i < draws; ++i) {
        std::fill(grad.begin(), grad.end(), 0.0);
        grad_fn(i, grad);
        for (std::size_t j = 0; j < dim; ++j) {
            if (!std::isfinite(grad[j]))
                fail(ErrorKind::numeric, "non-finite gradient in fisher draw " + std::to_string(i));
            squared[j] = grad[j] * grad[j];
        }
        acc.add(squared);
    }

    FisherDiagonal F;
    F.layout = std::move(layout);
    F.values = acc.total();
    const double inv = 1.0 / double(draws);
    for (auto& v : F.values) v *= inv;
    F.sample_count = draws;
    F.damping = damping;
    return F;
}

FisherDiagonal estimate_fisher(const Dataset& ds, const ParamVector& theta0,
                               const Denoiser& denoiser, const NoiseSchedule& schedule,
                               std::uint64_t draws, std::uint64_t seed, double damping,
                               std::uint64_t draw_offset) {
    if (ds.examples.empty()) fail(ErrorKind::validation, "estimate_fisher: dataset is empty");
    if (!theta0.layout || !(*theta0.layout == *denoiser.layout()))
        fail(ErrorKind::validation, "estimate_fisher: parameter layout mismatch");

    std::vector<const Example*> by_id;
    by_id.reserve(ds.examples.size());
    for (const auto& e : ds.examples) by_id.push_back(&e);
    std::sort(by_id.begin(), by_id.end(),
              [](const Example* a, const Example* b) { return a->id < b->id; });

    const int T = schedule.timesteps();
    const std::size_t pixels = std::size_t(denoiser.pixel_count());
    std::vector<double> eps(pixels);

    auto grad_fn = [&](std::uint64_t i, std::vector<double>& grad) {
        const std::uint64_t pick = make_key(Stream::fisher_draw, seed, draw_offset + i, 0);
        const Example& z = *by_id[uniform_index(pick, 0, by_id.size())];
        const int t = 1 + int(uniform_index(pick, 1, std::uint64_t(T)));
        fill_normal(make_key(Stream::fisher_draw, seed, draw_offset + i, 1), std::span<double>(eps));
        ddpm_loss_grad(denoiser, schedule, theta0, z, t, eps, nullptr, grad);
    };
    return fisher_from_draws(denoiser.layout(), draws, grad_fn, damping);
}

std::vector<double> precondition(std::span<const double> g, const FisherDiagonal& F,
                                 const std::vector<std::string>& mask_names) {
    F.validate();
    if (g.size() != F.values.size())
        fail(ErrorKind::validation, "precondition: gradient length does not match fisher");
    const auto mask = segment_mask(*F.layout, mask_names);
    const double mean = F.mean_value();
    const double lambda = mean > 0.0 ? F.damping * mean : F.damping;
    std::vector<double> out(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i]) out[i] = g[i] / (F.values[i] + lambda);
    return out;
}

ParamVector precondition(const ParamVector& g, const FisherDiagonal& F,
                         const std::vector<std::string>& mask_names) {
    std::vector<double> gd(g.values.begin(), g.values.end());
    const auto out = precondition(std::span<const double>(gd), F, mask_names);
    ParamVector result(g.layout);
    for (std::size_t i = 0; i < out.size(); ++i) result.values[i] = float(out[i]);
    return result;
}

void save_fisher(const std::filesystem::path& path, const FisherDiagonal& F,
                 const std::string& meta_json) {
    F.validate();
    json header;
    header["format"] = "fisher";
    json segs = json::array();
    for (const auto& s : F.layout->segments()) segs.push_back(json::array({s.name, s.offset, s.length}));
    header["layout"] = segs;
    header["sample_count"] = F.sample_count;
    header["damping"] = F.damping;
    json meta = meta_json.empty() ? json::object() : json::parse(meta_json, nullptr, false);
    if (meta.is_discarded() || !meta.is_object())
        fail(ErrorKind::validation, "meta must be a JSON object");
    header["meta"] = meta;
    std::vector<float> payload(F.values.size());
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = float(F.values[i]);
    write_container(path, kFisherMagic, header.dump(), payload);
}

LoadedFisher load_fisher(const std::filesystem::path& path) {
    Container c = read_container(path, kFisherMagic);
    json header = json::parse(c.header_json, nullptr, false);
    if (header.is_discarded()) fail(ErrorKind::validation, "invalid JSON header in " + path.string());
    const auto segs = header.value("layout", json());
    if (!segs.is_array()) fail(ErrorKind::validation, "layout missing in " + path.string());
    std::vector<SegmentSpec> out_segs;
    for (const auto& s : segs)
        out_segs.push_back({s[0].get<std::string>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()});

    LoadedFisher out;
    out.fisher.layout = std::make_shared<const ParamLayout>(std::move(out_segs));
    if (c.payload.size() != out.fisher.layout->total_size())
        fail(ErrorKind::validation, "payload length does not match layout in " + path.string());
    out.fisher.values.assign(c.payload.begin(), c.payload.end());
    out.fisher.sample_count = header.value("sample_count", std::uint64_t(0));
    out.fisher.damping = header.value("damping", 0.0);
    out.fisher.validate();
    out.meta_json = header.value("meta", json::object()).dump();
    return out;
}

}  // namespace uattr
