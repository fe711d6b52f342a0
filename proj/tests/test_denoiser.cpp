#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"

using namespace uattr;

namespace {

struct Fixture {
    DiffusionConfig dcfg = testutil::tiny_diffusion(20, 3);
    DenoiserSpec spec = testutil::tiny_denoiser_spec();
    Denoiser den{dcfg, spec};
    NoiseSchedule schedule{dcfg};
    ParamVector theta = den.init_params(4);
};

Example make_example(const Fixture& f, std::int64_t id, int label) {
    Example e;
    e.id = id;
    e.label = label;
    e.pixels.resize(f.dcfg.image_shape.size());
    const auto key = make_key(Stream::dataset_base, 100 + std::uint64_t(id));
    for (std::size_t i = 0; i < e.pixels.size(); ++i)
        e.pixels[i] = uniform01(key, i) * 2.0 - 1.0;
    return e;
}

}  // namespace

TEST_CASE("layout covers the expected segments in order") {
    Fixture f;
    const auto& segs = f.theta.layout->segments();
    std::vector<std::string> names;
    for (const auto& s : segs) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"layer1_w", "layer1_b", "class_embed", "cond_key",
                                            "cond_value", "layer2_w", "layer2_b", "out_w",
                                            "out_b"});
    std::size_t off = 0;
    for (const auto& s : segs) {
        CHECK(s.offset == off);
        off += s.length;
    }
    CHECK(off == f.theta.size());
}

TEST_CASE("init is deterministic per seed") {
    Fixture f;
    const auto a = f.den.init_params(9);
    const auto b = f.den.init_params(9);
    const auto c = f.den.init_params(10);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
}

TEST_CASE("time embedding is unit-scale and distinguishes timesteps") {
    Fixture f;
    const auto e1 = f.den.time_embedding(1);
    const auto e2 = f.den.time_embedding(2);
    CHECK(int(e1.size()) == f.spec.temb_dim);
    CHECK(e1 != e2);
    for (const double v : e1) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("forward output depends on the class label through the conditioning path") {
    Fixture f;
    const auto e = make_example(f, 0, 0);
    const auto xt = e.pixels;
    const auto out0 = f.den.forward(f.theta, xt, 3, 0);
    const auto out1 = f.den.forward(f.theta, xt, 3, 1);
    CHECK(int(out0.size()) == f.dcfg.image_shape.size());
    CHECK(out0 != out1);
    // zeroing the conditioning value rows makes every label identical
    auto blank = f.theta;
    auto wv = blank.segment_span("cond_value");
    std::fill(wv.begin(), wv.end(), 0.0f);
    CHECK(f.den.forward(blank, xt, 3, 0) == f.den.forward(blank, xt, 3, 1));
}

TEST_CASE("forward rejects bad inputs") {
    Fixture f;
    const auto e = make_example(f, 0, 0);
    CHECK(testutil::thrown_kind([&] { (void)f.den.forward(f.theta, e.pixels, 0, 0); }) ==
          testutil::kind_int(ErrorKind::range));
    CHECK(testutil::thrown_kind([&] { (void)f.den.forward(f.theta, e.pixels, 1, 3); }) ==
          testutil::kind_int(ErrorKind::range));
    std::vector<double> short_x(e.pixels.begin(), e.pixels.end() - 1);
    CHECK(testutil::thrown_kind([&] { (void)f.den.forward(f.theta, short_x, 1, 0); }) ==
          testutil::kind_int(ErrorKind::validation));
}

// Central finite differences on the full loss chain. The perturbation is
// applied to the stored f32 value, so the difference quotient uses the
// actually-realized step.
TEST_CASE("backward matches finite differences across every segment") {
    Fixture f;
    const auto e = make_example(f, 7, 1);
    const int t = 11;
    const auto eps = loss_noise(3, e.id, t, e.pixels.size());

    std::vector<double> grad(f.theta.size(), 0.0);
    ddpm_loss_grad(f.den, f.schedule, f.theta, e, t, eps, nullptr, grad);

    const double h = 1e-4;
    for (const auto& seg : f.theta.layout->segments()) {
        // probe three coordinates per segment: first, middle, last
        for (const std::size_t idx :
             {seg.offset, seg.offset + seg.length / 2, seg.offset + seg.length - 1}) {
            auto perturbed = f.theta;
            const float v = perturbed.values[idx];
            const float vp = v + float(h);
            const float vm = v - float(h);
            perturbed.values[idx] = vp;
            const double lp = ddpm_loss(f.den, f.schedule, perturbed, e, t, eps, nullptr);
            perturbed.values[idx] = vm;
            const double lm = ddpm_loss(f.den, f.schedule, perturbed, e, t, eps, nullptr);
            const double fd = (lp - lm) / (double(vp) - double(vm));
            const double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
            CHECK(std::abs(fd - grad[idx]) / denom < 1e-3);
        }
    }
}

TEST_CASE("strided loss gradient equals the mean of per-timestep gradients") {
    Fixture f;
    const auto e = make_example(f, 2, 2);
    const int stride = 6;
    const std::uint64_t seed = 17;

    std::vector<double> strided(f.theta.size(), 0.0);
    const double loss = strided_loss_grad(f.den, f.schedule, f.theta, e, stride, seed, nullptr, strided);
    CHECK(loss == strided_loss(f.den, f.schedule, f.theta, e, stride, seed, nullptr));

    const auto ts = strided_timesteps(f.schedule, stride);
    std::vector<std::vector<double>> per_t;
    std::vector<double> losses;
    for (const int t : ts) {
        std::vector<double> g(f.theta.size(), 0.0);
        const auto eps = loss_noise(seed, e.id, t, e.pixels.size());
        losses.push_back(ddpm_loss_grad(f.den, f.schedule, f.theta, e, t, eps, nullptr, g));
        per_t.push_back(std::move(g));
    }
    for (double& v : losses) v /= double(ts.size());
    CHECK(loss == doctest::Approx(tree_sum(losses) * 1.0).epsilon(1e-12));
    std::vector<double> mean_grad;
    tree_sum_rows(per_t, mean_grad);
    for (std::size_t i = 0; i < mean_grad.size(); ++i) {
        const double m = mean_grad[i] / double(ts.size());
        CHECK(strided[i] == doctest::Approx(m).epsilon(1e-9));
    }
}

TEST_CASE("non-finite parameters are reported with their segment name") {
    Fixture f;
    auto broken = f.theta;
    const auto& seg = broken.layout->segment("cond_key");
    broken.values[seg.offset + 1] = std::numeric_limits<float>::quiet_NaN();
    try {
        broken.check_finite("unit test");
        CHECK(false);
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::numeric);
        CHECK(std::string(err.what()).find("cond_key") != std::string::npos);
    }
}
