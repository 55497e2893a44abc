#pragma once

#include <array>
#include <span>
#include <vector>

#include "sunet/diff/tensor.hpp"

namespace sunet::diff {

// Spatial tensors are channel-last without a batch axis: (X, Y, C) for 2D maps
// and (X, Y, Z, C) for 3D grids. Batch size is always 1.

/// Cross-correlation. `weight` is (KX, KY, Cin, Cout) for 2D inputs or
/// (KX, KY, KZ, Cin, Cout) for 3D inputs; `bias` is (Cout) or undefined.
Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1, int padding = 0);

enum class BnMode { train, eval };

/// Running statistics of a batch-norm layer; updated in place by train-mode calls.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over every non-channel axis.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, BnMode mode);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

/// Max pooling with window = stride = factor over all spatial axes. Ties route to the first maximum.
Tensor max_pool(const Tensor& x, int factor = 2);
/// Nearest-neighbour repetition by `factor` along every spatial axis.
Tensor upsample(const Tensor& x, int factor);

Tensor concat(std::span<const Tensor> inputs, int axis = -1);
Tensor concat(std::initializer_list<Tensor> inputs, int axis = -1);

/// Elementwise with broadcasting of `b` when it has the same shape, shape
/// (..., 1) matching `a` except the last axis, or shape (C) matching a's last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Σ w ⊙ x with a constant weight tensor of the same shape.
Tensor weighted_sum(const Tensor& x, std::span<const double> w);

/// Contiguous sub-block: `start[a] .. start[a] + extent[a]` on every axis.
Tensor slice(const Tensor& x, std::span<const int> start, std::span<const int> extent);
/// Inserts a new axis at `axis` and repeats the input `count` times along it.
Tensor expand_axis(const Tensor& x, int axis, int count);
Tensor reshape(const Tensor& x, Shape shape);

/// Index of the largest entry along the last axis per position; ties pick the lowest index.
std::vector<int> argmax_last(const Tensor& x);

}  // namespace sunet::diff
