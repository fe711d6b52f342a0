#pragma once

// Shared fixtures for the test binaries: a model small enough that everything
// runs in milliseconds, plus rank statistics and temp-dir plumbing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

#include "uattr/common.hpp"
#include "uattr/dataset.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/diffusion.hpp"

namespace testutil {

inline uattr::DiffusionConfig tiny_diffusion(int timesteps = 20, int num_classes = 2) {
    uattr::DiffusionConfig dcfg;
    dcfg.timesteps = timesteps;
    dcfg.image_shape = uattr::ImageShape{1, 8, 8};
    dcfg.num_classes = num_classes;
    return dcfg;
}

inline uattr::DenoiserSpec tiny_denoiser_spec() {
    uattr::DenoiserSpec spec;
    spec.hidden = 16;
    spec.temb_dim = 8;
    spec.embed_dim = 8;
    return spec;
}

inline uattr::DatasetSpec tiny_dataset_spec(int n = 32, int num_classes = 2,
                                            std::uint64_t seed = 1) {
    uattr::DatasetSpec spec;
    spec.n = n;
    spec.num_classes = num_classes;
    spec.seed = seed;
    return spec;
}

// Fresh directory under the system temp root; caller owns cleanup.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("uattr_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
    std::filesystem::create_directories(dir);
    return dir;
}

// Average ranks on ties, then Pearson on the ranks.
inline std::vector<double> ranks_of(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (double(i) + double(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks_of(a);
    const auto rb = ranks_of(b);
    const std::size_t n = ra.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(n);
    mb /= double(n);
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

// Kind of the error thrown by f, or a sentinel when nothing was thrown.
inline int thrown_kind(const std::function<void()>& f) {
    try {
        f();
    } catch (const uattr::Error& e) {
        return static_cast<int>(e.kind());
    }
    return -1;
}

inline int kind_int(uattr::ErrorKind k) { return static_cast<int>(k); }

}  // namespace testutil
