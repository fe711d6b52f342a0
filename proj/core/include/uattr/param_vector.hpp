#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace uattr {

struct SegmentSpec {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
};

// Ordered, contiguous, non-overlapping segments covering [0, total_size).
class ParamLayout {
  public:
    ParamLayout() = default;
    explicit ParamLayout(std::vector<SegmentSpec> segments);

    const std::vector<SegmentSpec>& segments() const { return segments_; }
    std::size_t total_size() const { return total_; }
    bool has_segment(const std::string& name) const;
    const SegmentSpec& segment(const std::string& name) const;
    bool operator==(const ParamLayout& other) const;

    // Stable textual encoding, e.g. "layer1_w:0:12288;layer1_b:12288:128;...".
    std::string describe() const;

  private:
    std::vector<SegmentSpec> segments_;
    std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

// Flat f32 parameter vector with a shared layout. Gradients reuse the same
// shape; all arithmetic on the values happens in double and is rounded back
// to f32 at the boundary.
struct ParamVector {
    std::vector<float> values;
    LayoutPtr layout;

    ParamVector() = default;
    explicit ParamVector(LayoutPtr l) : values(l->total_size(), 0.0f), layout(std::move(l)) {}

    std::size_t size() const { return values.size(); }
    std::span<float> segment_span(const std::string& name);
    std::span<const float> segment_span(const std::string& name) const;

    void check_finite(const char* context) const;  // throws numeric error naming the segment
    bool same_layout(const ParamVector& other) const;
};

// Per-segment membership mask resolved against a layout.
std::vector<bool> segment_mask(const ParamLayout& layout, const std::vector<std::string>& names);

double l2_norm(const ParamVector& v);
std::uint64_t param_hash(const ParamVector& v);

}  // namespace uattr
