#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ivs {

struct GradSuiteOptions {
    std::size_t instances = 5;  // seeded instances per item
    std::uint64_t seed = 0;
    double layer_tolerance = 1e-4;
    double model_tolerance = 1e-3;
    // The full model has too many parameters to probe one by one within the
    // time budget: each tensor gets a seeded coordinate sample plus a few
    // whole-model random directions.
    std::size_t model_coordinates_per_tensor = 24;
    std::size_t model_directions = 4;
    double model_kink_threshold = 1e-4;
    // The model item fails if more than this fraction of its probes sit at kinks.
    double max_kink_fraction = 0.05;
    // Negative control: scale the conv weight gradient by 1.05.
    bool corrupt_conv_backward = false;
};

struct GradSuiteItem {
    std::string name;
    double tolerance = 0.0;
    double max_relative_error = 0.0;
    std::size_t checks = 0;
    std::size_t kink_probes = 0;
    double max_kink_fraction = 0.0;
    std::string worst;

    bool passed() const {
        return max_relative_error < tolerance && checks > 0 &&
               static_cast<double>(kink_probes) <= max_kink_fraction * static_cast<double>(checks);
    }
};

std::vector<GradSuiteItem> run_gradient_suite(const GradSuiteOptions& options = {});

// "conv3d  max_rel_err=1.2e-10  checks=...  PASS"
std::string format_item(const GradSuiteItem& item);

}  // namespace ivs
