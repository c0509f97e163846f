#pragma once

#include <cstddef>
#include <span>

#include "ivs/autodiff.hpp"

namespace ivs {

inline constexpr double kProbabilityClamp = 1e-12;
inline constexpr double kDefaultContrastiveMargin = 1.0;

/// Pair label. As a one-hot vector it reads [different, same], so a pair from
/// the same action category is s = [0, 1].
struct VerificationSignal {
    bool same = false;

    std::size_t index() const noexcept { return same ? 1 : 0; }
    friend bool operator==(const VerificationSignal&, const VerificationSignal&) = default;
};

struct LossWeights {
    double lambda = 1.0;

    void validate() const;
};

// Plain-value forms, used for logging and independent recomputation.

/// -log p[label], with p clamped from below at 1e-12 inside the log.
double identification_loss(std::span<const double> probabilities, std::size_t label);

/// Cross-entropy of the 2-way verification distribution against s.
double verification_loss(std::span<const double> probabilities, VerificationSignal s);

/// Squared distance for same pairs, squared hinge max(0, margin - d) otherwise.
double contrastive_loss(std::span<const double> f1, std::span<const double> f2, bool same,
                        double margin = kDefaultContrastiveMargin);

double overall_loss(double identification1, double identification2, double verification, LossWeights weights);

namespace ops {

// Differentiable forms. `probabilities` must already be a softmax output.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var probabilities, std::size_t label);

template <typename T>
Var contrastive(Tape<T>& tape, Var f1, Var f2, bool same, double margin);

}  // namespace ops

}  // namespace ivs
