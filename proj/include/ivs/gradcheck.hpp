#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ivs/autodiff.hpp"

namespace ivs {

/// A scalar-valued function of the given inputs, expressed on a tape.
using ScalarGraph = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckOptions {
    double epsilon = 1e-5;
    // 0 checks every coordinate; otherwise a seeded sample of this many per input.
    std::size_t max_coordinates_per_input = 0;
    std::uint64_t sample_seed = 0;
    // Extra checks along random directions spanning all inputs at once.
    std::size_t random_directions = 0;
    // A probe whose one-sided slopes disagree by more than this fraction of the
    // larger one straddles a ReLU or max-pool kink. There the analytic value
    // may instead match a second-order one-sided difference or the half-step
    // central difference, whichever is closest. 0 disables the test.
    double kink_threshold = 0.0;
    // Applied to the analytic gradients before comparison (negative controls).
    std::function<void(std::vector<Tensor>&)> perturb_analytic;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checks = 0;
    std::size_t kink_probes = 0;
    std::string worst;  // e.g. "input 1 [17]"
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `fn` against central differences.
GradCheckResult grad_check(const ScalarGraph& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

/// Analytic gradients of `fn` at `inputs` (one tensor per input).
std::vector<Tensor> analytic_gradients(const ScalarGraph& fn, const std::vector<Tensor>& inputs);

double evaluate_scalar(const ScalarGraph& fn, const std::vector<Tensor>& inputs);

}  // namespace ivs
