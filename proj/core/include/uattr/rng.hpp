#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>

namespace uattr {

// Stateless counter-based randomness. Every consumer derives values from a
// key built out of (stream tag, seed, ...indices); the same key always yields
// the same bits, independent of call order, thread count, or dataset layout.

// Stream tags keep independent uses of the same seed from colliding.
enum class Stream : std::uint64_t {
    dataset_base = 1,
    dataset_jitter = 2,
    dataset_params = 3,
    weight_init = 4,
    shuffle = 5,
    train_timestep = 6,
    train_noise = 7,
    train_flip = 8,
    loss_noise = 9,
    sample_noise = 10,
    fisher_draw = 11,
    projection = 12,
    random_removal = 13,
    query = 14,
    encoder_init = 15,
    encoder_shuffle = 16,
    unlearn_step = 17,
};

std::uint64_t mix64(std::uint64_t x);

// Folds an arbitrary list of words into one key.
std::uint64_t make_key(std::initializer_list<std::uint64_t> words);

inline std::uint64_t make_key(Stream s, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
    return make_key({static_cast<std::uint64_t>(s), a, b, c, d});
}

// Uniform in [0, 1) from key and counter.
double uniform01(std::uint64_t key, std::uint64_t counter);

// Uniform integer in [0, n); n must be positive.
std::uint64_t uniform_index(std::uint64_t key, std::uint64_t counter, std::uint64_t n);

// Standard normal via Box-Muller on two counter slots; deterministic per (key, counter).
double normal(std::uint64_t key, std::uint64_t counter);

// Fills `out` with iid standard normals indexed by position.
void fill_normal(std::uint64_t key, std::span<float> out);
void fill_normal(std::uint64_t key, std::span<double> out);

}  // namespace uattr
