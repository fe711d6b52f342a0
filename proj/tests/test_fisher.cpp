#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/fisher.hpp"
#include "uattr/rng.hpp"
#include "uattr/trainer.hpp"

using namespace uattr;

namespace {

LayoutPtr scalar_layout(std::size_t extra = 0) {
    std::vector<SegmentSpec> segs;
    segs.push_back(SegmentSpec{"w", 0, 1 + extra});
    return std::make_shared<const ParamLayout>(std::move(segs));
}

}  // namespace

// For x ~ N(0, sigma^2) and score d/dmu log p = x / sigma^2 at mu = 0, the
// Fisher information is E[x^2] / sigma^4 = 1 / sigma^2. Feeding the raw score
// as the draw gradient makes the diagonal estimate converge to exactly that.
TEST_CASE("linear-Gaussian model recovers the analytic Fisher information") {
    const double sigma = 1.7;
    const auto layout = scalar_layout();
    const auto key = make_key(Stream::fisher_draw, 51);
    const auto grad_fn = [&](std::uint64_t i, std::vector<double>& g) {
        const double x = sigma * normal(key, i);
        g[0] = x / (sigma * sigma);
    };
    const auto F = fisher_from_draws(layout, 20000, grad_fn, 1e-8);
    CHECK(F.sample_count == 20000);
    const double expect = 1.0 / (sigma * sigma);
    CHECK(std::abs(F.values[0] - expect) / expect < 0.05);
}

TEST_CASE("two half runs average exactly into the full run") {
    const auto dcfg = testutil::tiny_diffusion(20, 2);
    const DenoiserSpec spec = testutil::tiny_denoiser_spec();
    const Denoiser den(dcfg, spec);
    const NoiseSchedule schedule(dcfg);
    const auto ds = generate(testutil::tiny_dataset_spec(16, 2, 1));
    const auto theta = den.init_params(3);

    const auto full = estimate_fisher(ds, theta, den, schedule, 512, 9, 1e-8, 0);
    const auto lo = estimate_fisher(ds, theta, den, schedule, 256, 9, 1e-8, 0);
    const auto hi = estimate_fisher(ds, theta, den, schedule, 256, 9, 1e-8, 256);
    REQUIRE(full.values.size() == lo.values.size());
    for (std::size_t i = 0; i < full.values.size(); ++i)
        CHECK(full.values[i] == 0.5 * (lo.values[i] + hi.values[i]));
    CHECK(full.sample_count == 512);
}

TEST_CASE("the estimate is invariant to example storage order") {
    const auto dcfg = testutil::tiny_diffusion(20, 2);
    const Denoiser den(dcfg, testutil::tiny_denoiser_spec());
    const NoiseSchedule schedule(dcfg);
    const auto ds = generate(testutil::tiny_dataset_spec(12, 2, 4));
    const auto theta = den.init_params(5);

    Dataset reordered = ds;
    std::reverse(reordered.examples.begin(), reordered.examples.end());
    std::reverse(reordered.sources.begin(), reordered.sources.end());

    const auto a = estimate_fisher(ds, theta, den, schedule, 64, 2);
    const auto b = estimate_fisher(reordered, theta, den, schedule, 64, 2);
    CHECK(a.values == b.values);
}

TEST_CASE("preconditioning follows g / (F + damping * mean(F))") {
    const auto layout = scalar_layout(1);  // one segment, two coords
    FisherDiagonal F;
    F.layout = layout;
    F.values = {1.0, 3.0};  // mean 2
    F.damping = 0.5;        // lambda = 1
    F.sample_count = 4;
    const std::vector<double> g = {4.0, -8.0};
    const auto out = precondition(g, F, {});
    CHECK(out[0] == doctest::Approx(4.0 / 2.0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-8.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("an all-zero Fisher falls back to absolute damping") {
    const auto layout = scalar_layout(1);
    FisherDiagonal F;
    F.layout = layout;
    F.values = {0.0, 0.0};
    F.damping = 0.5;
    F.sample_count = 1;
    const std::vector<double> g = {1.0, 2.0};
    const auto out = precondition(g, F, {});
    CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("segment masks zero everything outside the named segments") {
    std::vector<SegmentSpec> segs;
    segs.push_back(SegmentSpec{"a", 0, 2});
    segs.push_back(SegmentSpec{"b", 2, 2});
    const auto layout = std::make_shared<const ParamLayout>(std::move(segs));
    FisherDiagonal F;
    F.layout = layout;
    F.values = {1.0, 1.0, 1.0, 1.0};
    F.damping = 1.0;  // lambda = 1, denominator 2 everywhere
    F.sample_count = 1;
    const std::vector<double> g = {2.0, 2.0, 2.0, 2.0};

    const auto masked = precondition(g, F, {"b"});
    CHECK(masked[0] == 0.0);
    CHECK(masked[1] == 0.0);
    CHECK(masked[2] == doctest::Approx(1.0));
    CHECK(masked[3] == doctest::Approx(1.0));

    // empty mask means every segment
    const auto all = precondition(g, F, {});
    for (const double v : all) CHECK(v == doctest::Approx(1.0));

    CHECK(testutil::thrown_kind([&] { (void)precondition(g, F, {"nope"}); }) ==
          testutil::kind_int(ErrorKind::validation));
}

TEST_CASE("param-vector preconditioning matches the span form") {
    const auto dcfg = testutil::tiny_diffusion(20, 2);
    const Denoiser den(dcfg, testutil::tiny_denoiser_spec());
    const auto theta = den.init_params(6);
    const NoiseSchedule schedule(dcfg);
    const auto ds = generate(testutil::tiny_dataset_spec(8, 2, 1));
    const auto F = estimate_fisher(ds, theta, den, schedule, 32, 7);

    ParamVector g(theta.layout);
    for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = float(std::sin(double(i)));
    const auto pv = precondition(g, F, {"cond_key"});
    std::vector<double> gd(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gd[i] = double(g.values[i]);
    const auto sp = precondition(std::span<const double>(gd), F, {"cond_key"});
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(pv.values[i] == float(sp[i]));
}

TEST_CASE("fisher validation rejects inconsistent state") {
    FisherDiagonal F;
    F.layout = scalar_layout();
    F.values = {1.0, 2.0};  // wrong length
    F.damping = 1e-8;
    F.sample_count = 1;
    CHECK(testutil::thrown_kind([&] { F.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    F.values = {-1.0};
    CHECK(testutil::thrown_kind([&] { F.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    F.values = {1.0};
    F.damping = 0.0;
    CHECK(testutil::thrown_kind([&] { F.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    F.damping = 1e-8;
    F.validate();
    CHECK(F.mean_value() == doctest::Approx(1.0));
}
