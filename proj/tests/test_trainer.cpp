#include <algorithm>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/param_vector.hpp"
#include "uattr/trainer.hpp"

using namespace uattr;

namespace {

struct Fixture {
    DiffusionConfig dcfg = testutil::tiny_diffusion(20, 2);
    DenoiserSpec spec = testutil::tiny_denoiser_spec();
    Denoiser den{dcfg, spec};
    NoiseSchedule schedule{dcfg};
    Dataset ds = generate(testutil::tiny_dataset_spec(32, 2, 1));
    TrainConfig cfg;
    Fixture() {
        cfg.epochs = 5;
        cfg.batch_size = 8;
        cfg.learning_rate = 2e-3;
        cfg.seed = 7;
    }
};

}  // namespace

TEST_CASE("training reduces the mean loss") {
    Fixture f;
    const auto r = train(f.ds, f.cfg, f.den, f.schedule);
    REQUIRE(r.epoch_losses.size() == 5);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    for (const double l : r.epoch_losses) CHECK(l > 0.0);
    CHECK(r.removed_ids.empty());
    r.theta.check_finite("trained");
}

TEST_CASE("training is bitwise deterministic") {
    Fixture f;
    const auto a = train(f.ds, f.cfg, f.den, f.schedule);
    const auto b = train(f.ds, f.cfg, f.den, f.schedule);
    CHECK(a.theta.values == b.theta.values);
    CHECK(a.epoch_losses == b.epoch_losses);
    auto other = f.cfg;
    other.seed = 8;
    const auto c = train(f.ds, other, f.den, f.schedule);
    CHECK(c.theta.values != a.theta.values);
}

TEST_CASE("a longer run keeps improving on a small set") {
    Fixture f;
    f.ds = generate(testutil::tiny_dataset_spec(8, 2, 2));
    f.cfg.epochs = 150;
    f.cfg.batch_size = 8;
    f.cfg.learning_rate = 5e-3;
    const auto r = train(f.ds, f.cfg, f.den, f.schedule);
    // epsilon prediction saturates well above zero at this scale; assert
    // sustained progress rather than a collapse of the loss
    CHECK(r.epoch_losses.back() < 0.97 * r.epoch_losses.front());
}

TEST_CASE("retrain_leave_k with an empty removal equals the base run") {
    Fixture f;
    const auto base = train(f.ds, f.cfg, f.den, f.schedule);
    const auto again = retrain_leave_k(f.ds, {}, f.cfg, f.den, f.schedule);
    CHECK(again.theta.values == base.theta.values);
}

TEST_CASE("retrain_leave_k drops the requested examples and records them") {
    Fixture f;
    const auto base = train(f.ds, f.cfg, f.den, f.schedule);
    const auto r = retrain_leave_k(f.ds, {5, 1, 9}, f.cfg, f.den, f.schedule);
    CHECK(r.removed_ids == std::vector<std::int64_t>{1, 5, 9});
    CHECK(r.theta.values != base.theta.values);
    CHECK(testutil::thrown_kind([&] { (void)retrain_leave_k(f.ds, {404}, f.cfg, f.den, f.schedule); }) ==
          testutil::kind_int(ErrorKind::validation));
}

// Every per-example draw is keyed by (seed, epoch, id), never by position, so
// a dataset with the same ids in any storage order trains to the same bits.
TEST_CASE("training is invariant to example storage order") {
    Fixture f;
    Dataset reordered = f.ds;
    std::reverse(reordered.examples.begin(), reordered.examples.end());
    std::reverse(reordered.sources.begin(), reordered.sources.end());
    const auto a = train(f.ds, f.cfg, f.den, f.schedule);
    const auto b = train(reordered, f.cfg, f.den, f.schedule);
    CHECK(a.theta.values == b.theta.values);
    CHECK(a.epoch_losses == b.epoch_losses);
}

TEST_CASE("flip augmentation changes the run but keeps determinism") {
    Fixture f;
    f.cfg.flip_augment = false;
    const auto off1 = train(f.ds, f.cfg, f.den, f.schedule);
    const auto off2 = train(f.ds, f.cfg, f.den, f.schedule);
    CHECK(off1.theta.values == off2.theta.values);
    f.cfg.flip_augment = true;
    const auto on = train(f.ds, f.cfg, f.den, f.schedule);
    CHECK(on.theta.values != off1.theta.values);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK(testutil::thrown_kind([&] { cfg.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK(testutil::thrown_kind([&] { cfg.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK(testutil::thrown_kind([&] { cfg.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    CHECK(testutil::thrown_kind([&] { cfg.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
}
