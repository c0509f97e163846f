#include "ivs/detection.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace ivs {

double temporal_iou(const Segment& a, const Segment& b) {
    const std::int64_t inter = std::min(a.end, b.end) - std::max(a.start, b.start);
    if (inter <= 0) return 0.0;
    const std::int64_t uni = a.length() + b.length() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

void ProposalSpec::validate() const {
    if (window_lengths.empty()) throw ConfigError("at least one proposal window length is required");
    for (auto w : window_lengths)
        if (w < 1) throw ConfigError("proposal window lengths must be >= 1");
    if (!(stride_fraction > 0.0 && stride_fraction <= 1.0)) throw ConfigError("stride_fraction must lie in (0, 1]");
}

nlohmann::json to_json(const ProposalSpec& s) {
    return {{"window_lengths", s.window_lengths}, {"stride_fraction", s.stride_fraction}};
}

ProposalSpec proposal_spec_from_json(const nlohmann::json& j, ProposalSpec s) {
    try {
        s.window_lengths = j.value("window_lengths", s.window_lengths);
        s.stride_fraction = j.value("stride_fraction", s.stride_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed proposal spec: ") + e.what());
    }
    return s;
}

std::vector<Segment> generate_proposals(std::int64_t total_length, std::span<const std::size_t> window_lengths,
                                        double stride_fraction) {
    ProposalSpec{{window_lengths.begin(), window_lengths.end()}, stride_fraction}.validate();
    const auto shortest = static_cast<std::int64_t>(*std::min_element(window_lengths.begin(), window_lengths.end()));
    if (total_length < shortest)
        throw ConfigError("video of " + std::to_string(total_length) + " frames is shorter than the smallest window (" +
                          std::to_string(shortest) + ")");

    std::set<std::pair<std::int64_t, std::int64_t>> seen;  // (start, length)
    for (auto wl : window_lengths) {
        const auto w = static_cast<std::int64_t>(wl);
        if (w > total_length) continue;
        const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(static_cast<double>(w) * stride_fraction));
        for (std::int64_t s = 0; s + w <= total_length; s += stride) seen.emplace(s, w);
        seen.emplace(total_length - w, w);
    }
    std::vector<Segment> out;
    out.reserve(seen.size());
    for (auto [s, w] : seen) out.push_back({s, s + w});
    return out;
}

std::vector<Detection> classify_proposals(const SiameseModel<double>& model, const UntrimmedVideo& video,
                                          std::span<const Segment> proposals) {
    const std::size_t L = model.config().input()[1];
    std::vector<Detection> out;
    for (const auto& seg : proposals) {
        const Tensor p = identify(model, resample_segment(video.frames, seg, L));
        const auto best =
            static_cast<std::size_t>(std::max_element(p.data().begin(), p.data().end()) - p.data().begin());
        if (best == 0) continue;
        out.push_back({video.id, seg, best, p[best]});
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw ConfigError("NMS threshold must lie in [0, 1]");
    std::vector<Detection> order(detections.begin(), detections.end());
    std::stable_sort(order.begin(), order.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : order) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return k.video_id == d.video_id && k.class_id == d.class_id &&
                   temporal_iou(k.segment, d.segment) > iou_threshold;
        });
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace {

template <typename Fn>
void write_lines(const std::filesystem::path& path, std::size_t n, Fn&& record) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < n; ++i) out << record(i).dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename Fn>
void read_lines(const std::filesystem::path& path, Fn&& consume) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            consume(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

Segment parse_segment(const nlohmann::json& j) {
    Segment s{j.at("start").get<std::int64_t>(), j.at("end").get<std::int64_t>()};
    if (!s.valid()) throw IoError("invalid segment [" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")");
    return s;
}

std::size_t parse_class(const nlohmann::json& j) {
    const auto c = j.at("class").get<std::int64_t>();
    if (c < 1) throw IoError("class id must be >= 1, got " + std::to_string(c));
    return static_cast<std::size_t>(c);
}

}  // namespace

void write_detections(const std::filesystem::path& path, std::span<const Detection> detections) {
    write_lines(path, detections.size(), [&](std::size_t i) {
        const auto& d = detections[i];
        return nlohmann::json{{"video", d.video_id},
                              {"start", d.segment.start},
                              {"end", d.segment.end},
                              {"class", d.class_id},
                              {"score", d.score}};
    });
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::vector<Detection> out;
    read_lines(path, [&](const nlohmann::json& j) {
        Detection d{j.at("video").get<std::string>(), parse_segment(j), parse_class(j), j.at("score").get<double>()};
        if (!(d.score > 0.0)) throw IoError("detection score must be positive");
        out.push_back(std::move(d));
    });
    return out;
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruthInstance> instances) {
    write_lines(path, instances.size(), [&](std::size_t i) {
        const auto& g = instances[i];
        return nlohmann::json{
            {"video", g.video_id}, {"start", g.segment.start}, {"end", g.segment.end}, {"class", g.class_id}};
    });
}

std::vector<GroundTruthInstance> read_ground_truth(const std::filesystem::path& path) {
    std::vector<GroundTruthInstance> out;
    read_lines(path, [&](const nlohmann::json& j) {
        out.push_back({j.at("video").get<std::string>(), parse_segment(j), parse_class(j)});
    });
    return out;
}

}  // namespace ivs
