#pragma once

#include <cstddef>
#include <span>

#include "gradbench/autodiff.hpp"
#include "gradbench/tensor.hpp"

namespace gradbench {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running statistics for one batch-norm layer. Fresh state is mean 0, var 1.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;

    static BatchNormState fresh(std::size_t channels) {
        return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
    }
};

// All operations check their output for NaN/Inf and throw NumericError.

// [M x K] x [K x N] -> [M x N].
Variable matmul(Graph& g, const Variable& a, const Variable& b);

// x [N x F] plus bias [F] broadcast over rows.
Variable add_bias(Graph& g, const Variable& x, const Variable& bias);

// x [N x in] * weight [in x out] + bias [out].
Variable linear(Graph& g, const Variable& x, const Variable& weight, const Variable& bias);

// Element-wise, identical shapes.
Variable add(Graph& g, const Variable& a, const Variable& b);
Variable mul(Graph& g, const Variable& a, const Variable& b);

// Sum of all elements -> [1].
Variable sum(Graph& g, const Variable& a);

// max(x, 0); the subgradient at 0 is 0.
Variable relu(Graph& g, const Variable& x);

// Cross-correlation with zero padding. input [N x C x H x W], kernel
// [O x C x kh x kw], optional bias [O] (pass an undefined Variable to omit).
Variable conv2d(Graph& g, const Variable& input, const Variable& kernel, const Variable& bias, std::size_t stride,
                std::size_t padding);

// Per-window maximum; ties resolve to the lowest flat index in the window.
Variable maxpool2d(Graph& g, const Variable& input, std::size_t window, std::size_t stride);

// Per-channel normalization over (N, H, W). Train mode uses batch statistics
// and updates `state`; eval mode uses `state` and leaves it untouched.
Variable batchnorm2d(Graph& g, const Variable& input, const Variable& gamma, const Variable& beta,
                     BatchNormState& state, Mode mode);

// [N x C x H x W] -> [N x C], mean over spatial positions.
Variable global_avg_pool(Graph& g, const Variable& input);

// [N x ...] -> [N x rest].
Variable flatten(Graph& g, const Variable& input);

// Mean over the batch of -log softmax(logits)[label]. logits [N x C].
Variable softmax_cross_entropy(Graph& g, const Variable& logits, std::span<const int> labels);

}  // namespace gradbench
