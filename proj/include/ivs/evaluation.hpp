#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ivs/segment.hpp"

namespace ivs {

inline const std::vector<double> kDefaultIouThresholds{0.1, 0.2, 0.3, 0.4, 0.5};

/// Ranking order used throughout evaluation: score descending, then start
/// ascending, then video id.
void sort_for_evaluation(std::vector<Detection>& detections);

/// Greedy matching in list order. A detection of `class_id` is a hit when an
/// unmatched ground-truth instance of that class on the same video overlaps it
/// with IoU strictly above the threshold; it takes the highest-IoU one (earliest
/// start on ties). Detections of other classes are reported as misses.
/// Throws ConfigError unless scores are non-increasing.
std::vector<bool> match_detections(std::span<const Detection> detections,
                                   std::span<const GroundTruthInstance> ground_truth, std::size_t class_id,
                                   double iou_threshold);

/// Non-interpolated AP: sum over ranks of (recall step) * precision.
double average_precision(const std::vector<bool>& ranked_hits, std::size_t n_ground_truth);

struct EvalResult {
    std::vector<double> thresholds;
    std::map<std::size_t, std::size_t> ground_truth_counts;  // classes with >= 1 instance
    std::vector<std::map<std::size_t, double>> ap;           // per threshold
    std::vector<double> mean_ap;                             // per threshold
    std::vector<std::string> unknown_videos;                 // referenced by ignored detections
    std::size_t ignored_detections = 0;

    // Rows: one per class, then "mAP". Columns: class, then one per threshold.
    void write_csv(const std::filesystem::path& path) const;
};

/// Rows of an EvalResult CSV, keyed by the first column ("1", "2", ..., "mAP").
struct EvalTable {
    std::vector<double> thresholds;
    std::vector<std::pair<std::string, std::vector<double>>> rows;

    const std::vector<double>& mean_ap() const;
    static EvalTable read_csv(const std::filesystem::path& path);
};

/// Detections on videos outside `videos` are counted and ignored. When
/// `videos` is empty the ground-truth videos are the known set.
EvalResult evaluate(std::span<const Detection> detections, std::span<const GroundTruthInstance> ground_truth,
                    const std::vector<double>& thresholds = kDefaultIouThresholds,
                    std::span<const std::string> videos = {});

}  // namespace ivs
