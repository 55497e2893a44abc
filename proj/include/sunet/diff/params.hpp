#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sunet/diff/ops.hpp"
#include "sunet/rng.hpp"

namespace sunet::diff {

/// A named tensor owned by a model. Buffers (batch-norm running statistics)
/// are stored alongside trainable weights but never touched by optimizers.
struct Param {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

enum class Init { zeros, ones, kaiming };

/// Registry of a model's parameters, in creation order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Kaiming init draws N(0, 2 / fan_in) with fan_in = product of all but the last dim.
  Tensor create(const std::string& name, Shape shape, Init init, bool trainable = true);

  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Tensor> trainable() const;
  std::size_t trainable_count() const;

  void zero_grad();
  /// Copies values from `other` by name; shapes must match and every name must exist.
  void copy_values_from(const std::map<std::string, Tensor>& other);

 private:
  Rng rng_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  /// One update from the accumulated gradients, then zero them.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Plain gradient descent: p -= lr * grad, then zero.
void sgd_step(std::span<Tensor> params, double lr);

}  // namespace sunet::diff
