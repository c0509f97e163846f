#include "ivs/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ivs/tensor.hpp"

namespace ivs {

void sort_for_evaluation(std::vector<Detection>& detections) {
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
        return a.video_id < b.video_id;
    });
}

std::vector<bool> match_detections(std::span<const Detection> detections,
                                   std::span<const GroundTruthInstance> ground_truth, std::size_t class_id,
                                   double iou_threshold) {
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].score > detections[i - 1].score)
            throw ConfigError("match_detections: detections must be sorted by descending score");

    std::vector<bool> used(ground_truth.size(), false);
    std::vector<bool> hits(detections.size(), false);
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const auto& d = detections[i];
        if (d.class_id != class_id) continue;
        std::size_t best = ground_truth.size();
        double best_iou = 0.0;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            const auto& gt = ground_truth[g];
            if (used[g] || gt.class_id != class_id || gt.video_id != d.video_id) continue;
            const double iou = temporal_iou(d.segment, gt.segment);
            if (!(iou > iou_threshold)) continue;
            if (best == ground_truth.size() || iou > best_iou ||
                (iou == best_iou && gt.segment.start < ground_truth[best].segment.start)) {
                best = g;
                best_iou = iou;
            }
        }
        if (best != ground_truth.size()) {
            used[best] = true;
            hits[i] = true;
        }
    }
    return hits;
}

double average_precision(const std::vector<bool>& ranked_hits, std::size_t n_ground_truth) {
    if (n_ground_truth == 0) return 0.0;
    double ap = 0.0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
        if (!ranked_hits[k]) continue;
        ++tp;
        ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
    return ap / static_cast<double>(n_ground_truth);
}

EvalResult evaluate(std::span<const Detection> detections, std::span<const GroundTruthInstance> ground_truth,
                    const std::vector<double>& thresholds, std::span<const std::string> videos) {
    for (double t : thresholds)
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("IoU thresholds must lie in [0, 1]");
    std::set<std::string> known(videos.begin(), videos.end());
    if (known.empty())
        for (const auto& g : ground_truth) known.insert(g.video_id);

    EvalResult result;
    result.thresholds = thresholds;
    for (const auto& g : ground_truth) ++result.ground_truth_counts[g.class_id];

    std::vector<Detection> ranked;
    std::set<std::string> unknown;
    for (const auto& d : detections) {
        if (known.count(d.video_id)) {
            ranked.push_back(d);
        } else {
            unknown.insert(d.video_id);
            ++result.ignored_detections;
        }
    }
    result.unknown_videos.assign(unknown.begin(), unknown.end());
    sort_for_evaluation(ranked);

    std::map<std::size_t, std::vector<Detection>> by_class;
    for (const auto& d : ranked) by_class[d.class_id].push_back(d);

    for (double t : thresholds) {
        std::map<std::size_t, double> aps;
        double sum = 0.0;
        for (auto [cls, n_gt] : result.ground_truth_counts) {
            const auto& dets = by_class[cls];
            aps[cls] = average_precision(match_detections(dets, ground_truth, cls, t), n_gt);
            sum += aps[cls];
        }
        result.ap.push_back(std::move(aps));
        result.mean_ap.push_back(result.ground_truth_counts.empty()
                                     ? 0.0
                                     : sum / static_cast<double>(result.ground_truth_counts.size()));
    }
    return result;
}

namespace {

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string format_threshold(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", t);
    return buf;
}

}  // namespace

void EvalResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "class";
    for (double t : thresholds) out << ",iou_" << format_threshold(t);
    out << '\n';
    for (auto [cls, n] : ground_truth_counts) {
        out << cls;
        for (const auto& per_threshold : ap) out << ',' << format_value(per_threshold.at(cls));
        out << '\n';
    }
    out << "mAP";
    for (double m : mean_ap) out << ',' << format_value(m);
    out << '\n';
}

const std::vector<double>& EvalTable::mean_ap() const {
    for (const auto& [key, values] : rows)
        if (key == "mAP") return values;
    throw IoError("evaluation table has no mAP row");
}

EvalTable EvalTable::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty evaluation table " + path.string());
    const auto header = split(line);
    if (header.empty() || header[0] != "class") throw IoError("malformed evaluation header in " + path.string());
    EvalTable table;
    try {
        for (std::size_t i = 1; i < header.size(); ++i) {
            if (header[i].rfind("iou_", 0) != 0) throw IoError("unexpected column " + header[i]);
            table.thresholds.push_back(std::stod(header[i].substr(4)));
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split(line);
            if (cells.size() != header.size()) throw IoError("row width differs from header: " + line);
            std::vector<double> values;
            for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(std::stod(cells[i]));
            table.rows.emplace_back(cells[0], std::move(values));
        }
    } catch (const std::logic_error& e) {
        throw IoError("malformed evaluation table " + path.string() + ": " + e.what());
    }
    table.mean_ap();
    return table;
}

}  // namespace ivs
