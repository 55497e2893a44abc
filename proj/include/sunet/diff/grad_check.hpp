#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sunet/diff/tensor.hpp"

namespace sunet::diff {

struct GradCheckEntry {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  /// One-sided differences disagree: the probe interval straddles a kink.
  bool kink = false;
};

struct GradCheckReport {
  double max_abs_error = 0.0;
  /// max |analytic - numeric| / gradient scale, worst over the checked tensors.
  /// The scale of a tensor is the largest |analytic| or |numeric| among its checked
  /// entries (floored at 1e-12), so a sign flip anywhere reports ~2.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Entries flagged as kinks; excluded from the errors when skip_kinks is set.
  std::size_t kinks = 0;
  bool passed = false;
  std::vector<GradCheckEntry> entries;

  std::string summary() const;
};

struct GradCheckOptions {
  double tol = 1e-4;
  /// Entries probed per tensor; 0 checks every entry.
  std::size_t max_samples_per_tensor = 0;
  std::uint64_t seed = 7;
  /// Flag entries whose forward and backward one-sided differences differ by more
  /// than tol times the tensor scale and leave them out of the error statistics.
  /// Piecewise-linear networks (relu, max pooling) need this at a fixed step.
  bool skip_kinks = false;
};

/// Compares reverse-mode gradients of the scalar `f()` with respect to each of
/// `inputs` against central differences, step h = 1e-5 * max(1, |x|).
/// `f` must rebuild the graph from the current values of `inputs` on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {});

inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor input, double tol) {
  GradCheckOptions opts;
  opts.tol = tol;
  return grad_check([&]() { return f(input); }, {input}, opts);
}

}  // namespace sunet::diff
