#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ivs/data.hpp"
#include "ivs/losses.hpp"
#include "ivs/network.hpp"
#include "json.hpp"

namespace ivs {

enum class PairLoss { verification, contrastive };

std::string to_string(PairLoss loss);
PairLoss pair_loss_from_string(const std::string& name);

struct TrainConfig {
    double learning_rate = 0.001;
    double momentum = 0.9;
    std::size_t batch_size = 5;  // pairs per iteration
    std::size_t iterations = 1000;
    double lambda = 1.0;
    double same_ratio = 0.5;
    std::uint64_t seed = 7;
    PairLoss loss = PairLoss::verification;
    double margin = kDefaultContrastiveMargin;
    // Control runs: permute the training labels before sampling pairs.
    bool shuffle_labels = false;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

/// v <- momentum * v + g; w <- w - lr * v
void sgd_step(Tensor& weights, const Tensor& gradient, Tensor& velocity, double learning_rate, double momentum);

struct MomentumState {
    std::vector<Tensor> velocity;
};

void sgd_step(SiameseModel<double>& model, std::span<const Tensor> gradients, MomentumState& state,
              double learning_rate, double momentum);

struct TrainLogRow {
    std::size_t iteration = 0;
    double identification1 = 0.0;  // batch mean of L_I1
    double identification2 = 0.0;
    double pair = 0.0;             // L_V, or the contrastive term
    double total = 0.0;
    double pair_accuracy = 0.0;    // over the trailing kAccuracyWindow iterations
};

inline constexpr std::size_t kAccuracyWindow = 20;

struct TrainingLog {
    std::vector<TrainLogRow> rows;

    // Columns: iteration,L_I1,L_I2,L_V,L,pair_accuracy
    void write_csv(const std::filesystem::path& path) const;
    static TrainingLog read_csv(const std::filesystem::path& path);
};

/// Losses of one pair batch under the given parameters, plus gradients of the
/// batch-mean objective when requested.
struct BatchResult {
    double identification1 = 0.0;
    double identification2 = 0.0;
    double pair = 0.0;
    double total = 0.0;
    std::size_t verified = 0;  // pairs whose same/different call was right
    std::vector<Tensor> gradients;
};

BatchResult run_batch(const SiameseModel<double>& model, const Dataset& dataset, std::span<const PairSample> pairs,
                      const TrainConfig& config, bool with_gradients);

/// Same/different call for a pair: the verification head's argmax, or for
/// contrastive training a feature distance below margin / 2.
bool predicts_same(const TrainConfig& config, const Tensor& verification_probabilities, const Tensor& f1,
                   const Tensor& f2);

struct IterationRecord {
    std::size_t iteration;
    const std::vector<PairSample>& pairs;
    const SiameseModel<double>& parameters_before_update;
    const TrainLogRow& row;
};

using IterationObserver = std::function<void(const IterationRecord&)>;

/// Checks that clips match the model input and labels fit its class count.
void check_compatible(const SiameseModel<double>& model, const Dataset& dataset);

/// Labels permuted deterministically under `seed` (for shuffled-label controls).
Dataset with_shuffled_labels(const Dataset& dataset, std::uint64_t seed);

TrainingLog train(SiameseModel<double>& model, const Dataset& dataset, const TrainConfig& config,
                  const IterationObserver& observer = {});

double identification_accuracy(const SiameseModel<double>& model, const Dataset& dataset);

/// Fraction of `n_pairs` freshly sampled balanced pairs judged correctly.
double verification_accuracy(const SiameseModel<double>& model, const Dataset& dataset, const TrainConfig& config,
                             std::size_t n_pairs, std::uint64_t seed);

}  // namespace ivs
