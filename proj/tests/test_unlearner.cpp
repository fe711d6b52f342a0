#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/fisher.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"
#include "uattr/trainer.hpp"
#include "uattr/unlearner.hpp"

using namespace uattr;

namespace {

struct Fixture {
    DiffusionConfig dcfg = testutil::tiny_diffusion(20, 2);
    DenoiserSpec spec = testutil::tiny_denoiser_spec();
    Denoiser den{dcfg, spec};
    NoiseSchedule schedule{dcfg};
    Dataset ds = generate(testutil::tiny_dataset_spec(24, 2, 1));
    ParamVector theta0;
    FisherDiagonal F;
    Example zhat;
    UnlearnConfig cfg;

    Fixture() {
        TrainConfig tcfg;
        tcfg.epochs = 4;
        tcfg.batch_size = 8;
        theta0 = train(ds, tcfg, den, schedule).theta;
        F = estimate_fisher(ds, theta0, den, schedule, 128, 3);
        zhat = ds.find(0);
        zhat.id = -1;  // synthesized queries carry negative ids
        cfg.alpha = 0.05;
        cfg.stride = 5;
        cfg.seed = 2;
    }
};

}  // namespace

TEST_CASE("parameters outside the masked segments never move") {
    Fixture f;
    const auto theta1 = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    const auto mask = segment_mask(*f.theta0.layout, f.cfg.mask);
    bool moved_inside = false;
    for (std::size_t i = 0; i < theta1.size(); ++i) {
        if (mask[i]) {
            moved_inside = moved_inside || theta1.values[i] != f.theta0.values[i];
        } else {
            CHECK(theta1.values[i] == f.theta0.values[i]);
        }
    }
    CHECK(moved_inside);
}

TEST_CASE("alpha zero reproduces theta0 through the same code path") {
    Fixture f;
    f.cfg.alpha = 0.0;
    const auto theta1 = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(theta1.values == f.theta0.values);
}

// One step is, by definition, theta0 + alpha * precondition(grad, F, mask)
// evaluated with the step-0 noise key.
TEST_CASE("a single step composes the documented update rule") {
    Fixture f;
    f.cfg.steps = 1;
    const auto theta1 = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);

    const auto step_seed = make_key(Stream::unlearn_step, f.cfg.seed, 0);
    std::vector<double> g(f.theta0.size(), 0.0);
    strided_loss_grad(f.den, f.schedule, f.theta0, f.zhat, f.cfg.stride, step_seed, nullptr, g);
    const auto u = precondition(std::span<const double>(g), f.F, f.cfg.mask);
    for (std::size_t i = 0; i < theta1.size(); ++i) {
        const float expect = float(double(f.theta0.values[i]) + f.cfg.alpha * u[i]);
        CHECK(theta1.values[i] == expect);
    }
}

TEST_CASE("the step raises the query loss it ascends") {
    Fixture f;
    const auto theta1 = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    const auto step_seed = make_key(Stream::unlearn_step, f.cfg.seed, 0);
    const double before = strided_loss(f.den, f.schedule, f.theta0, f.zhat, f.cfg.stride, step_seed, nullptr);
    const double after = strided_loss(f.den, f.schedule, theta1, f.zhat, f.cfg.stride, step_seed, nullptr);
    CHECK(after > before);
}

TEST_CASE("more steps move farther") {
    Fixture f;
    f.cfg.steps = 1;
    const auto one = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    f.cfg.steps = 3;
    const auto three = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(one.values != three.values);

    auto dist = [&](const ParamVector& a, const ParamVector& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = double(a.values[i]) - double(b.values[i]);
            s += d * d;
        }
        return std::sqrt(s);
    };
    CHECK(dist(three, f.theta0) > dist(one, f.theta0));
}

TEST_CASE("the sgd baseline skips preconditioning but keeps the mask") {
    Fixture f;
    f.cfg.steps = 1;
    const auto theta1 = unlearn_sgd_baseline(f.theta0, f.zhat, f.cfg, f.den, f.schedule);

    const auto step_seed = make_key(Stream::unlearn_step, f.cfg.seed, 0);
    std::vector<double> g(f.theta0.size(), 0.0);
    strided_loss_grad(f.den, f.schedule, f.theta0, f.zhat, f.cfg.stride, step_seed, nullptr, g);
    const auto mask = segment_mask(*f.theta0.layout, f.cfg.mask);
    for (std::size_t i = 0; i < theta1.size(); ++i) {
        const double u = mask[i] ? g[i] : 0.0;
        CHECK(theta1.values[i] == float(double(f.theta0.values[i]) + f.cfg.alpha * u));
    }
}

TEST_CASE("a full region mask is bit-identical to no region") {
    Fixture f;
    const auto bare = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    f.cfg.region = RegionMask::all(f.dcfg.image_shape);
    const auto with_full = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(bare.values == with_full.values);

    f.cfg.region = RegionMask::rect(f.dcfg.image_shape, 2, 2, 4, 4);
    const auto with_rect = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(with_rect.values != bare.values);
}

TEST_CASE("unlearn config validation") {
    Fixture f;
    const auto& layout = *f.theta0.layout;
    const std::size_t px = std::size_t(f.dcfg.image_shape.size());

    UnlearnConfig cfg;
    cfg.alpha = -0.1;
    CHECK(testutil::thrown_kind([&] { cfg.validate(layout, px, 20); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = UnlearnConfig{};
    cfg.steps = 0;
    CHECK(testutil::thrown_kind([&] { cfg.validate(layout, px, 20); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = UnlearnConfig{};
    cfg.stride = 21;
    CHECK(testutil::thrown_kind([&] { cfg.validate(layout, px, 20); }) ==
          testutil::kind_int(ErrorKind::range));
    cfg = UnlearnConfig{};
    cfg.mask = {"bogus"};
    CHECK(testutil::thrown_kind([&] { cfg.validate(layout, px, 20); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = UnlearnConfig{};
    cfg.region = RegionMask{};
    cfg.region->active = {1, 0};  // wrong pixel count
    CHECK(testutil::thrown_kind([&] { cfg.validate(layout, px, 20); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = UnlearnConfig{};
    cfg.alpha = 0.0;  // explicitly allowed
    cfg.validate(layout, px, 20);
}

TEST_CASE("unlearning is deterministic") {
    Fixture f;
    const auto a = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    const auto b = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(a.values == b.values);
    f.cfg.seed = 3;
    const auto c = unlearn(f.theta0, f.F, f.zhat, f.cfg, f.den, f.schedule);
    CHECK(c.values != a.values);
}
