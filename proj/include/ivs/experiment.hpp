#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ivs/data.hpp"
#include "ivs/detection.hpp"
#include "ivs/evaluation.hpp"
#include "ivs/network.hpp"
#include "ivs/training.hpp"
#include "json.hpp"

namespace ivs {

struct VideoSetSpec {
    std::size_t count = 4;
    std::size_t length = 96;     // frames per video
    std::size_t instances = 4;   // planted actions per video
    std::size_t min_gap = 4;

    void validate() const;
};

/// Everything one experiment needs. Every field has a default, so `{}` is a
/// complete tiny-preset experiment.
///
/// Component seeds are not configurable on their own: the dataset, held-out
/// set, test videos, network initialisation and training each take a fixed
/// stream derived from `seed`.
struct ExperimentConfig {
    std::string preset = "tiny";
    SyntheticDatasetSpec dataset = default_dataset();
    TrainConfig train;
    ProposalSpec proposals;
    double nms_threshold = kDefaultNmsThreshold;
    std::vector<double> iou_thresholds = kDefaultIouThresholds;
    VideoSetSpec videos;
    std::size_t heldout_clips_per_class = 20;
    std::size_t heldout_pairs = 200;
    std::uint64_t seed = 7;
    std::filesystem::path out = "runs/default";

    static SyntheticDatasetSpec default_dataset();

    NetworkConfig network() const;
    // Copies of the sub-configs with their derived seeds filled in.
    SyntheticDatasetSpec training_data() const;
    SyntheticDatasetSpec heldout_data() const;
    TrainConfig training() const;
    std::uint64_t video_seed(std::size_t index) const;

    void validate() const;
};

/// splitmix64 of seed and stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Stages. Each reads what earlier stages wrote under config.out.
void stage_gen_data(const ExperimentConfig& config);
void stage_train(const ExperimentConfig& config);
void stage_detect(const ExperimentConfig& config);
EvalResult stage_eval(const ExperimentConfig& config);

struct RunSummary {
    double lambda = 0.0;
    PairLoss loss = PairLoss::verification;
    std::size_t iterations = 0;
    double final_loss = 0.0;
    double heldout_identification = 0.0;
    double heldout_verification = 0.0;
    std::vector<double> thresholds;
    std::vector<double> mean_ap;
};

/// Held-out accuracies and the evaluation of a finished run.
RunSummary summarize(const ExperimentConfig& config);

// Columns: lambda, loss, iterations, final_L, held-out accuracies, then mAP per threshold.
void write_summary_csv(const std::filesystem::path& path, const std::vector<RunSummary>& rows);

inline constexpr const char* kFailedMarker = "FAILED";

/// gen-data, train, detect, eval and summary.csv. On failure a FAILED file
/// naming the stage is left in config.out and the error is rethrown with the
/// stage as a prefix.
RunSummary run_experiment(const ExperimentConfig& config);

inline const std::vector<double> kLambdaSweep{0.0, 0.5, 1.0, 2.0};

/// One run per lambda under out/lambda_<value>, plus out/lambda_sweep.csv.
std::vector<RunSummary> run_lambda_sweep(const ExperimentConfig& config);

/// Verification and contrastive runs under out/loss_<name>, plus
/// out/loss_comparison.csv.
std::vector<RunSummary> run_loss_comparison(const ExperimentConfig& config);

/// Merges the eval.csv of each run directory into out/comparison.csv and
/// draws training_curves.svg and map_vs_threshold.svg.
void report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

}  // namespace ivs
