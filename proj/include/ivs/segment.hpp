#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace ivs {

/// Half-open frame interval [start, end).
struct Segment {
    std::int64_t start = 0;
    std::int64_t end = 0;

    std::int64_t length() const noexcept { return end - start; }
    bool valid() const noexcept { return start >= 0 && start < end; }

    friend auto operator<=>(const Segment&, const Segment&) = default;
};

/// Intersection over union in frames; 0 for disjoint segments.
double temporal_iou(const Segment& a, const Segment& b);

struct GroundTruthInstance {
    std::string video_id;
    Segment segment;
    std::size_t class_id = 1;

    friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct Detection {
    std::string video_id;
    Segment segment;
    std::size_t class_id = 1;
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace ivs
