#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ivs/data.hpp"
#include "ivs/network.hpp"
#include "ivs/segment.hpp"
#include "json.hpp"

namespace ivs {

struct ProposalSpec {
    std::vector<std::size_t> window_lengths{8, 12, 16};
    double stride_fraction = 0.25;

    void validate() const;
};

nlohmann::json to_json(const ProposalSpec& spec);
ProposalSpec proposal_spec_from_json(const nlohmann::json& j, ProposalSpec defaults = {});

/// Sliding windows of every length, each scale stepping by
/// max(1, floor(w * stride_fraction)) with one extra window flush with the
/// video end. Windows longer than the video are skipped. Sorted by start, then
/// length, without duplicates.
std::vector<Segment> generate_proposals(std::int64_t total_length, std::span<const std::size_t> window_lengths,
                                        double stride_fraction);

/// Scores each proposal with the identification head after resampling it to
/// the model's input length. Background winners are dropped; the rest become
/// detections of the argmax class scored by its probability, highest first.
std::vector<Detection> classify_proposals(const SiameseModel<double>& model, const UntrimmedVideo& video,
                                          std::span<const Segment> proposals);

inline constexpr double kDefaultNmsThreshold = 0.3;

/// Greedy per-video, per-class suppression of detections overlapping a kept
/// one by IoU > threshold. Returns kept detections in descending score order.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold = kDefaultNmsThreshold);

// One JSON object per line: video, start, end, class[, score]
void write_detections(const std::filesystem::path& path, std::span<const Detection> detections);
std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruthInstance> instances);
std::vector<GroundTruthInstance> read_ground_truth(const std::filesystem::path& path);

}  // namespace ivs
