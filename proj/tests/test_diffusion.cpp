#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/diffusion.hpp"
#include "uattr/loss.hpp"
#include "uattr/rng.hpp"

using namespace uattr;

TEST_CASE("linear beta schedule hits its endpoints and interpolates") {
    auto dcfg = testutil::tiny_diffusion(50);
    const NoiseSchedule s(dcfg);
    CHECK(s.timesteps() == 50);
    CHECK(s.beta(1) == doctest::Approx(dcfg.beta_start).epsilon(1e-12));
    CHECK(s.beta(50) == doctest::Approx(dcfg.beta_end).epsilon(1e-12));
    // interior point from the two-point line formula
    const double expect = dcfg.beta_start + (dcfg.beta_end - dcfg.beta_start) * (24.0 / 49.0);
    CHECK(s.beta(25) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("alpha_bar is the running product of alphas with alpha_bar(0) = 1") {
    const NoiseSchedule s(testutil::tiny_diffusion(40));
    CHECK(s.alpha_bar(0) == 1.0);
    double prod = 1.0;
    for (int t = 1; t <= 40; ++t) {
        prod *= 1.0 - s.beta(t);
        CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
}

TEST_CASE("posterior sigma follows the closed form and vanishes at t = 1") {
    const NoiseSchedule s(testutil::tiny_diffusion(30));
    CHECK(s.posterior_sigma(1) == 0.0);
    for (int t = 2; t <= 30; ++t) {
        const double expect =
            std::sqrt((1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t));
        CHECK(s.posterior_sigma(t) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("schedule rejects out-of-range timesteps") {
    const NoiseSchedule s(testutil::tiny_diffusion(10));
    CHECK(testutil::thrown_kind([&] { (void)s.beta(0); }) == testutil::kind_int(ErrorKind::range));
    CHECK(testutil::thrown_kind([&] { (void)s.beta(11); }) == testutil::kind_int(ErrorKind::range));
    CHECK(testutil::thrown_kind([&] { (void)s.alpha_bar(-1); }) ==
          testutil::kind_int(ErrorKind::range));
    CHECK(testutil::thrown_kind([&] { (void)s.alpha_bar(11); }) ==
          testutil::kind_int(ErrorKind::range));
}

TEST_CASE("diffusion config validation") {
    auto bad = testutil::tiny_diffusion();
    bad.timesteps = 0;
    CHECK(testutil::thrown_kind([&] { bad.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    bad = testutil::tiny_diffusion();
    bad.beta_start = 0.0;
    CHECK(testutil::thrown_kind([&] { bad.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
    bad = testutil::tiny_diffusion();
    bad.beta_end = 1.0;
    CHECK(testutil::thrown_kind([&] { bad.validate(); }) ==
          testutil::kind_int(ErrorKind::validation));
}

TEST_CASE("q_sample matches the forward closed form elementwise") {
    const auto dcfg = testutil::tiny_diffusion(20);
    const NoiseSchedule s(dcfg);
    const int n = dcfg.image_shape.size();
    std::vector<double> x0(n), eps(n);
    const auto key = make_key(Stream::loss_noise, 1);
    for (int i = 0; i < n; ++i) {
        x0[i] = uniform01(key, i) * 2.0 - 1.0;
        eps[i] = normal(key, 1000 + i);
    }
    for (const int t : {1, 7, 20}) {
        const auto xt = q_sample(s, x0, t, eps);
        const double a = std::sqrt(s.alpha_bar(t));
        const double b = std::sqrt(1.0 - s.alpha_bar(t));
        for (int i = 0; i < n; ++i) CHECK(xt[i] == doctest::Approx(a * x0[i] + b * eps[i]).epsilon(1e-12));
    }
    CHECK(testutil::thrown_kind([&] { (void)q_sample(s, x0, 0, eps); }) ==
          testutil::kind_int(ErrorKind::range));
    std::vector<double> short_eps(n - 1);
    CHECK(testutil::thrown_kind([&] { (void)q_sample(s, x0, 1, short_eps); }) ==
          testutil::kind_int(ErrorKind::validation));
}

TEST_CASE("flip_horizontal mirrors columns and is an involution") {
    const ImageShape shape{1, 2, 3};
    const std::vector<double> img = {1, 2, 3, 4, 5, 6};
    const auto f = flip_horizontal(img, shape);
    CHECK(f == std::vector<double>{3, 2, 1, 6, 5, 4});
    CHECK(flip_horizontal(f, shape) == img);
}

TEST_CASE("loss_core is the mean squared error over active pixels") {
    const std::vector<double> pred = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> eps = {0.0, 2.0, 1.0, 6.0};
    // (1 + 0 + 4 + 4) / 4
    CHECK(loss_core(pred, eps, nullptr) == doctest::Approx(9.0 / 4.0).epsilon(1e-15));

    RegionMask m;
    m.active = {1, 0, 0, 1};
    // (1 + 4) / 2 over the active pixels only
    CHECK(loss_core(pred, eps, &m) == doctest::Approx(5.0 / 2.0).epsilon(1e-15));

    RegionMask all;
    all.active = {1, 1, 1, 1};
    CHECK(loss_core(pred, eps, &all) == loss_core(pred, eps, nullptr));
}

TEST_CASE("loss_core_grad matches the hand derivative") {
    const std::vector<double> pred = {1.0, -2.0, 0.5};
    const std::vector<double> eps = {0.0, 1.0, 0.5};
    std::vector<double> d(3, 0.0);
    loss_core_grad(pred, eps, nullptr, d);
    for (int i = 0; i < 3; ++i)
        CHECK(d[i] == doctest::Approx(2.0 * (pred[i] - eps[i]) / 3.0).epsilon(1e-15));

    RegionMask m;
    m.active = {0, 1, 1};
    std::vector<double> dm(3, 0.0);
    loss_core_grad(pred, eps, &m, dm);
    CHECK(dm[0] == 0.0);
    CHECK(dm[1] == doctest::Approx(2.0 * (pred[1] - eps[1]) / 2.0).epsilon(1e-15));
}

TEST_CASE("region masks validate and count") {
    const ImageShape shape{1, 4, 4};
    const auto all = RegionMask::all(shape);
    CHECK(all.active_count() == 16);
    const auto r = RegionMask::rect(shape, 1, 1, 2, 3);
    CHECK(r.active_count() == 6);
    // rows 1..2, cols 1..3 active
    CHECK(r.active[1 * 4 + 1] == 1);
    CHECK(r.active[0] == 0);
    CHECK(testutil::thrown_kind([&] { (void)RegionMask::rect(shape, 3, 3, 2, 2); }) ==
          testutil::kind_int(ErrorKind::range));
    RegionMask empty;
    empty.active = std::vector<std::uint8_t>(16, 0);
    CHECK(testutil::thrown_kind([&] { empty.validate(16); }) ==
          testutil::kind_int(ErrorKind::validation));
    CHECK(testutil::thrown_kind([&] { all.validate(9); }) ==
          testutil::kind_int(ErrorKind::validation));
}

TEST_CASE("strided timesteps walk 1, 1+s, ... within range") {
    const NoiseSchedule s(testutil::tiny_diffusion(10));
    CHECK(strided_timesteps(s, 3) == std::vector<int>{1, 4, 7, 10});
    CHECK(strided_timesteps(s, 10) == std::vector<int>{1});
    CHECK(strided_timesteps(s, 1).size() == 10);
    CHECK(testutil::thrown_kind([&] { (void)strided_timesteps(s, 11); }) ==
          testutil::kind_int(ErrorKind::range));
}

TEST_CASE("loss_noise is keyed by example and timestep") {
    const auto a = loss_noise(5, 12, 3, 8);
    CHECK(a.size() == 8);
    CHECK(loss_noise(5, 12, 3, 8) == a);
    CHECK(loss_noise(5, 12, 4, 8) != a);
    CHECK(loss_noise(5, 13, 3, 8) != a);
    CHECK(loss_noise(6, 12, 3, 8) != a);
    // negative ids (synthesized queries) get their own stream
    CHECK(loss_noise(5, -1, 3, 8) != a);
}
