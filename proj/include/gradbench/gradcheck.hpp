#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gradbench/tensor.hpp"

namespace gradbench {

using ScalarFn = std::function<double(const Tensor&)>;

inline constexpr double kDefaultFdStep = 1e-5;
// Denominator floor for relative errors: gradients smaller than this are
// compared on an absolute scale.
inline constexpr double kRelativeErrorFloor = 1e-6;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Tensor finite_difference_grad(const ScalarFn& f, const Tensor& point, double h = kDefaultFdStep);

// Same, restricted to the listed flat indices (other entries are zero).
Tensor finite_difference_grad(const ScalarFn& f, const Tensor& point, std::span<const std::size_t> indices,
                              double h = kDefaultFdStep);

// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

// Largest relative_error over `indices` (all elements when empty).
double max_relative_error(const Tensor& analytic, const Tensor& numeric, std::span<const std::size_t> indices = {},
                          double floor = kRelativeErrorFloor);

enum class GradCheckScope { ops, networks };

struct GradCheckOptions {
    GradCheckScope scope = GradCheckScope::ops;
    std::uint64_t seed = 1;
    double tolerance = 1e-4;
    double step = kDefaultFdStep;
    // Entries sampled per parameter tensor in network checks.
    std::size_t samples_per_tensor = 6;
    // Test hook: perturbs one analytic gradient so the check must fail.
    bool corrupt_gradient = false;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool passed() const;
};

GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace gradbench
