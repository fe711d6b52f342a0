#include "uattr/common.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>

namespace uattr {

const char* Error::kind_name() const {
    switch (kind_) {
        case ErrorKind::validation: return "validation";
        case ErrorKind::range: return "range";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::io: return "io";
        case ErrorKind::dependency_missing: return "dependency missing";
        case ErrorKind::provenance_conflict: return "provenance conflict";
    }
    return "unknown";
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

namespace {

// Sums chunk totals over [lo, hi) by splitting at the largest power of two
// below the range length. The association depends only on chunk indices.
double tree_fold(std::span<const double> chunk_sums, std::size_t lo, std::size_t hi) {
    const std::size_t n = hi - lo;
    if (n == 0) return 0.0;
    if (n == 1) return chunk_sums[lo];
    std::size_t half = 1;
    while (half * 2 < n) half *= 2;
    return tree_fold(chunk_sums, lo, lo + half) + tree_fold(chunk_sums, lo + half, hi);
}

}  // namespace

double tree_sum(std::span<const double> values, std::size_t chunk) {
    if (chunk == 0) fail(ErrorKind::validation, "tree_sum: chunk size must be positive");
    std::vector<double> chunk_sums;
    chunk_sums.reserve(values.size() / chunk + 1);
    for (std::size_t b = 0; b < values.size(); b += chunk) {
        double s = 0.0;
        const std::size_t end = std::min(values.size(), b + chunk);
        for (std::size_t i = b; i < end; ++i) s += values[i];
        chunk_sums.push_back(s);
    }
    return tree_fold(chunk_sums, 0, chunk_sums.size());
}

void tree_sum_rows(const std::vector<std::vector<double>>& rows, std::vector<double>& out) {
    if (rows.empty()) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    const std::size_t dim = rows.front().size();
    if (out.size() != dim) out.assign(dim, 0.0);
    std::vector<double> column(rows.size());
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t r = 0; r < rows.size(); ++r) column[r] = rows[r][j];
        out[j] = tree_sum(column, 1);
    }
}

double mean_of(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return tree_sum(values) / static_cast<double>(values.size());
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    }
    return std::string(buf, ptr);
}

}  // namespace uattr
