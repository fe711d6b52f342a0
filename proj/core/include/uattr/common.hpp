#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uattr {

// Error taxonomy shared by all modules. `kind` is stable and machine-checkable;
// `what()` carries the human-readable context.
enum class ErrorKind {
    validation,
    range,
    numeric,
    io,
    dependency_missing,
    provenance_conflict,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    const char* kind_name() const;

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

// FNV-1a over raw bytes; used for artifact/provenance hashes.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s);
std::string hash_hex(std::uint64_t h);

// Order-deterministic sum of `values`: chunk sums are combined with a fixed
// binary tree, so the result is independent of how callers partition the work
// and a sum over [0, 2m) splits exactly into the sums over [0, m) + [m, 2m)
// when m is a multiple of the chunk size times a power of two.
double tree_sum(std::span<const double> values, std::size_t chunk = 256);

// Same reduction applied element-wise to rows of equal-length vectors.
// `rows[i]` is accumulated into `out` with a fixed tree over row indices.
void tree_sum_rows(const std::vector<std::vector<double>>& rows, std::vector<double>& out);

double mean_of(std::span<const double> values);

std::string format_double(double v);  // shortest round-trip formatting, stable across runs

}  // namespace uattr
