#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ivs/losses.hpp"
#include "ivs/segment.hpp"
#include "ivs/tensor.hpp"
#include "json.hpp"

namespace ivs {

/// Controls for the synthetic action generator.
///
/// Each action class is a blob drifting across a textured background with a
/// class-specific direction. Classes listed together in `confusable_pairs`
/// share the direction and differ only in blob shape, so they are hard to tell
/// apart. Within a class, clips vary in where along the trajectory the blob
/// starts (`random_phase`), background texture, duration and pixel noise.
struct SyntheticDatasetSpec {
    std::uint64_t seed = 0;
    std::size_t n_classes = 4;  // action classes; background (label 0) is extra
    std::size_t clips_per_class = 20;
    std::size_t background_clips = 0;
    double noise_sigma = 0.05;
    bool random_phase = true;
    double background_amplitude = 0.3;
    std::vector<std::pair<std::size_t, std::size_t>> confusable_pairs{{1, 2}};
    // channels, length, height, width of each produced clip
    std::array<std::size_t, 4> clip_shape{1, 8, 16, 16};
    // Source segments are drawn with a length in [min, max] frames and then
    // resampled to clip_shape[1] frames.
    std::size_t min_segment = 8;
    std::size_t max_segment = 12;

    void validate() const;
};

nlohmann::json to_json(const SyntheticDatasetSpec& spec);
SyntheticDatasetSpec dataset_spec_from_json(const nlohmann::json& j, SyntheticDatasetSpec defaults = {});

struct ClassPattern {
    double direction = 0.0;  // radians
    double speed = 1.0;      // pixels per source frame
    double sigma_along = 1.5;
    double sigma_across = 1.5;
};

ClassPattern class_pattern(const SyntheticDatasetSpec& spec, std::size_t class_id);

struct Clip {
    Tensor volume;
    std::size_t label = 0;
    std::string video_id;
    Segment segment;
};

struct Dataset {
    SyntheticDatasetSpec spec;
    std::vector<Clip> clips;

    // Label count including background.
    std::size_t class_count() const noexcept { return spec.n_classes + 1; }
};

/// Deterministic in `spec`: identical specs yield identical tensors.
Dataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec);

inline constexpr const char* kDatasetFormat = "ivs-dataset/1";

// <dir>/manifest.json plus <dir>/clips/clip_NNNNN.{json,bin}
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct UntrimmedVideo {
    std::string id;
    Tensor frames;  // channels × total_length × height × width
    std::vector<GroundTruthInstance> instances;

    std::int64_t length() const { return static_cast<std::int64_t>(frames.extent(1)); }
};

/// A long video of background with `n_instances` non-overlapping actions
/// planted at random positions, each at least `min_gap` frames apart.
UntrimmedVideo generate_untrimmed_video(const SyntheticDatasetSpec& spec, std::string id, std::size_t total_length,
                                        std::size_t n_instances, std::uint64_t seed, std::size_t min_gap = 4);

/// Nearest-frame uniform resampling of frames[:, segment] to `length` frames.
Tensor resample_segment(const Tensor& frames, const Segment& segment, std::size_t length);

struct PairSample {
    std::size_t first = 0;   // index into Dataset::clips
    std::size_t second = 0;
    VerificationSignal s;
};

/// ceil(batch * same_ratio) same-class pairs, the rest different-class, in
/// shuffled order. Same-class pairs use two distinct clips.
std::vector<PairSample> sample_pairs(const Dataset& dataset, std::size_t batch, double same_ratio,
                                     std::mt19937_64& rng);

}  // namespace ivs
