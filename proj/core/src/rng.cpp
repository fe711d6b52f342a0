#include "uattr/rng.hpp"

#include <cmath>

#include "uattr/common.hpp"

namespace uattr {

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t make_key(std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = 0x6a09e667f3bcc909ull;
    for (std::uint64_t w : words) h = mix64(h ^ w);
    return h;
}

namespace {

inline std::uint64_t word_at(std::uint64_t key, std::uint64_t counter) {
    return mix64(key + counter * 0xd1342543de82ef95ull);
}

}  // namespace

double uniform01(std::uint64_t key, std::uint64_t counter) {
    return static_cast<double>(word_at(key, counter) >> 11) * 0x1.0p-53;
}

std::uint64_t uniform_index(std::uint64_t key, std::uint64_t counter, std::uint64_t n) {
    if (n == 0) fail(ErrorKind::range, "uniform_index: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(word_at(key, counter)) * n) >> 64);
}

double normal(std::uint64_t key, std::uint64_t counter) {
    // Box-Muller; u1 shifted away from zero so the log stays finite.
    const double u1 = uniform01(key, 2 * counter) + 0x1.0p-54;
    const double u2 = uniform01(key, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void fill_normal(std::uint64_t key, std::span<float> out) {
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(normal(key, i));
}

void fill_normal(std::uint64_t key, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal(key, i);
}

}  // namespace uattr
