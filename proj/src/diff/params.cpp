#include "sunet/diff/params.hpp"

#include <cmath>

#include "sunet/errors.hpp"

namespace sunet::diff {

Tensor ParamStore::create(const std::string& name, Shape shape, Init init, bool trainable) {
  if (index_.count(name)) throw Error("duplicate parameter name " + name);
  Tensor t(shape, 0.0, trainable);
  auto v = t.values();
  switch (init) {
    case Init::zeros: break;
    case Init::ones: std::fill(v.begin(), v.end(), 1.0); break;
    case Init::kaiming: {
      std::size_t fan_in = 1;
      for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& x : v) x = rng_.normal(0.0, stddev);
      break;
    }
  }
  index_[name] = params_.size();
  params_.push_back({name, t, trainable});
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return params_[it->second].tensor;
}

std::vector<Tensor> ParamStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.tensor.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParamStore::copy_values_from(const std::map<std::string, Tensor>& other) {
  for (auto& p : params_) {
    auto it = other.find(p.name);
    if (it == other.end()) throw ArtifactMismatch("checkpoint lacks parameter " + p.name);
    if (it->second.shape() != p.tensor.shape()) {
      throw ArtifactMismatch("parameter " + p.name + " has shape " + shape_string(it->second.shape()) +
                             ", model expects " + shape_string(p.tensor.shape()));
    }
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), p.tensor.values().begin());
  }
  if (other.size() != params_.size()) throw ArtifactMismatch("checkpoint has unexpected parameters");
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    check_finite(w, "adam step");
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    p.zero_grad();
  }
}

}  // namespace sunet::diff
