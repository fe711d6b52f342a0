#include "uattr/param_vector.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <unordered_set>

#include "uattr/common.hpp"

namespace uattr {

ParamLayout::ParamLayout(std::vector<SegmentSpec> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) fail(ErrorKind::validation, "param layout has no segments");
    std::size_t cursor = 0;
    std::unordered_set<std::string> seen;
    for (const auto& seg : segments_) {
        if (seg.name.empty()) fail(ErrorKind::validation, "param segment with empty name");
        if (!seen.insert(seg.name).second)
            fail(ErrorKind::validation, "duplicate param segment name: " + seg.name);
        if (seg.offset != cursor)
            fail(ErrorKind::validation, "param segment '" + seg.name + "' not contiguous at offset " +
                                            std::to_string(seg.offset) + ", expected " + std::to_string(cursor));
        if (seg.length == 0) fail(ErrorKind::validation, "param segment '" + seg.name + "' has zero length");
        cursor += seg.length;
    }
    total_ = cursor;
}

bool ParamLayout::has_segment(const std::string& name) const {
    for (const auto& seg : segments_)
        if (seg.name == name) return true;
    return false;
}

const SegmentSpec& ParamLayout::segment(const std::string& name) const {
    for (const auto& seg : segments_)
        if (seg.name == name) return seg;
    fail(ErrorKind::validation, "unknown param segment: " + name);
}

bool ParamLayout::operator==(const ParamLayout& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& a = segments_[i];
        const auto& b = other.segments_[i];
        if (a.name != b.name || a.offset != b.offset || a.length != b.length) return false;
    }
    return true;
}

std::string ParamLayout::describe() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (i) out << ';';
        out << segments_[i].name << ':' << segments_[i].offset << ':' << segments_[i].length;
    }
    return out.str();
}

std::span<float> ParamVector::segment_span(const std::string& name) {
    const auto& seg = layout->segment(name);
    return {values.data() + seg.offset, seg.length};
}

std::span<const float> ParamVector::segment_span(const std::string& name) const {
    const auto& seg = layout->segment(name);
    return {values.data() + seg.offset, seg.length};
}

void ParamVector::check_finite(const char* context) const {
    for (const auto& seg : layout->segments()) {
        const float* p = values.data() + seg.offset;
        for (std::size_t i = 0; i < seg.length; ++i) {
            if (!std::isfinite(p[i]))
                fail(ErrorKind::numeric, std::string(context) + ": non-finite value in segment '" +
                                             seg.name + "' at index " + std::to_string(i));
        }
    }
}

bool ParamVector::same_layout(const ParamVector& other) const {
    if (layout == other.layout) return true;
    return layout && other.layout && *layout == *other.layout;
}

std::vector<bool> segment_mask(const ParamLayout& layout, const std::vector<std::string>& names) {
    std::vector<bool> mask(layout.total_size(), false);
    if (names.empty()) {
        mask.assign(layout.total_size(), true);
        return mask;
    }
    for (const auto& name : names) {
        const auto& seg = layout.segment(name);
        for (std::size_t i = 0; i < seg.length; ++i) mask[seg.offset + i] = true;
    }
    return mask;
}

double l2_norm(const ParamVector& v) {
    std::vector<double> sq(v.values.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = double(v.values[i]) * double(v.values[i]);
    return std::sqrt(tree_sum(sq));
}

std::uint64_t param_hash(const ParamVector& v) {
    static_assert(sizeof(float) == 4);
    std::uint64_t h = fnv1a64(v.values.data(), v.values.size() * sizeof(float));
    const std::string desc = v.layout->describe();
    return fnv1a64(desc.data(), desc.size(), h);
}

}  // namespace uattr
