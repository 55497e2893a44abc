#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "sunet/bev2d.hpp"
#include "sunet/diff/grad_check.hpp"
#include "sunet/diff/ops.hpp"
#include "sunet/fusion.hpp"
#include "sunet/sunet3d.hpp"
#include "test_util.hpp"

namespace testutil {

struct GradCase {
  std::string name;
  double tol = 1e-4;
  sunet::diff::GradCheckReport report;
};

/// Weighted sum with fixed random weights turns any tensor into a scalar with a
/// non-uniform upstream gradient.
inline sunet::diff::Tensor probe(const sunet::diff::Tensor& y, std::uint64_t seed = 99) {
  sunet::Rng rng(seed);
  std::vector<double> w(y.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return sunet::diff::weighted_sum(y, w);
}

/// Values bounded away from zero so relu kinks stay outside the probe step.
inline sunet::diff::Tensor off_zero(sunet::Rng& rng, sunet::diff::Shape shape) {
  sunet::diff::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = (rng.unit() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return t;
}

/// Distinct, well separated values so pooling has no near-ties.
inline sunet::diff::Tensor distinct(sunet::Rng& rng, sunet::diff::Shape shape) {
  sunet::diff::Tensor t(std::move(shape));
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  for (std::size_t i = 0; i < perm.size(); ++i) t.values()[i] = 0.1 * static_cast<double>(perm[i]);
  return t;
}

/// Re-probes kink-flagged entries that miss `tol` (relative to |analytic|) with a
/// 100x smaller central step and returns how many still disagree.
inline std::size_t unconfirmed_kinks(const std::function<sunet::diff::Tensor()>& f,
                                     std::vector<sunet::diff::Tensor> inputs,
                                     const sunet::diff::GradCheckReport& rep, double tol) {
  sunet::diff::NoGradGuard guard;
  std::size_t bad = 0;
  for (const auto& e : rep.entries) {
    const double allowed = tol * std::max(1e-12, std::abs(e.analytic));
    if (!e.kink || std::abs(e.numeric - e.analytic) <= allowed) continue;
    auto v = inputs[e.tensor].values();
    const double orig = v[e.index];
    const double h = 1e-7 * std::max(1.0, std::abs(orig));
    v[e.index] = orig + h;
    const double fp = f().item();
    v[e.index] = orig - h;
    const double fm = f().item();
    v[e.index] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    if (std::abs(numeric - e.analytic) > allowed) ++bad;
  }
  return bad;
}

/// Toy end-to-end loss: 3D network logits fused with BEV region logits under the
/// hierarchical loss, gradients checked on the input, a BEV input and a sample of
/// every parameter of both networks.
inline sunet::diff::GradCheckReport toy_end_to_end(std::size_t samples_per_tensor, std::array<int, 3> tile = {8, 8, 16},
                                                   bool skip_kinks = false, std::size_t* unconfirmed = nullptr) {
  using namespace sunet;
  SUNet3DConfig cfg;
  cfg.tile_dims = tile;
  cfg.levels = 3;
  cfg.base_channels = 4;
  cfg.use_mfa = true;
  cfg.use_fs = true;
  SUNet3D model(cfg, 5);
  Bev2DConfig bcfg;
  bcfg.dims = {tile[0], tile[1]};
  bcfg.levels = 3;
  bcfg.base_channels = 4;
  Bev2D bev(bcfg, 6);

  Rng rng(21);
  const std::size_t voxels = static_cast<std::size_t>(tile[0]) * tile[1] * tile[2];
  Tensor x = random_tensor(rng, {tile[0], tile[1], tile[2], 4});
  Tensor b = random_tensor(rng, {tile[0], tile[1], 2});
  std::vector<ObjectClass> cls(voxels);
  std::vector<Region> reg(voxels);
  std::vector<std::uint32_t> occ(voxels);
  const auto table = HierarchyTable::utility_corridor();
  for (std::size_t v = 0; v < voxels; ++v) {
    occ[v] = rng.unit() < 0.5 ? 1u + static_cast<std::uint32_t>(rng.index(3)) : 0u;
    cls[v] = static_cast<ObjectClass>(rng.index(kNumClasses));
    reg[v] = cls[v] == ObjectClass::background ? Region::none
                                               : table.resolve_parent(static_cast<Region>(1 + rng.index(2)), cls[v]);
  }
  // BN layers checked in eval mode with non-trivial running statistics.
  {
    diff::NoGradGuard guard;
    model.forward(x, BnMode::train);
    bev.forward(b, BnMode::train);
  }
  auto f = [&]() {
    Tensor logits = model.forward(x, BnMode::eval);
    Tensor region = bev.forward(b, BnMode::eval);
    return hlc_loss(logits, calibrate_logits(region, tile[2]), cls, reg, occ, table);
  };
  std::vector<Tensor> inputs{x, b};
  for (const auto& t : model.params().trainable()) inputs.push_back(t);
  for (const auto& t : bev.params().trainable()) inputs.push_back(t);
  // the zero-initialized smoothing output layer would otherwise hide the layers before it
  for (auto& p : model.params().params())
    if (p.trainable)
      for (auto& v : p.tensor.values())
        if (v == 0.0) v = rng.uniform(-0.1, 0.1);
  diff::GradCheckOptions opts;
  opts.tol = 1e-4;
  opts.max_samples_per_tensor = samples_per_tensor;
  opts.skip_kinks = skip_kinks;
  auto rep = diff::grad_check(f, inputs, opts);
  if (unconfirmed) *unconfirmed = unconfirmed_kinks(f, inputs, rep, 1e-4);
  return rep;
}

/// Gradient checks for every primitive plus the toy end-to-end loss.
inline std::vector<GradCase> gradient_suite(std::size_t e2e_samples = 4) {
  using namespace sunet;
  using namespace sunet::diff;
  std::vector<GradCase> out;
  Rng rng(2024);
  auto run = [&](std::string name, double tol, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    GradCheckOptions o;
    o.tol = tol;
    out.push_back({std::move(name), tol, grad_check(f, std::move(inputs), o)});
  };

  {
    Tensor x = random_tensor(rng, {5, 4, 3}), w = random_tensor(rng, {3, 3, 3, 2}), b = random_tensor(rng, {2});
    run("conv2d_pad1", 1e-5, [=] { return probe(conv(x, w, b, 1, 1)); }, {x, w, b});
  }
  {
    Tensor x = random_tensor(rng, {6, 5, 3}), w = random_tensor(rng, {2, 3, 3, 2}), b = random_tensor(rng, {2});
    run("conv2d_stride2", 1e-5, [=] { return probe(conv(x, w, b, 2, 0)); }, {x, w, b});
  }
  {
    Tensor x = random_tensor(rng, {4, 4, 4, 2}), w = random_tensor(rng, {3, 3, 3, 2, 3}), b = random_tensor(rng, {3});
    run("conv3d_pad1", 1e-5, [=] { return probe(conv(x, w, b, 1, 1)); }, {x, w, b});
  }
  {
    Tensor x = random_tensor(rng, {4, 3, 2, 3}), g = random_tensor(rng, {3}, 0.5, 1.5), be = random_tensor(rng, {3});
    run("batch_norm_train", 1e-5,
        [=] {
          BatchNormStats s{Tensor({3}, 0.0), Tensor({3}, 1.0)};
          return probe(batch_norm(x, g, be, s, BnMode::train));
        },
        {x, g, be});
    run("batch_norm_eval", 1e-5,
        [=] {
          BatchNormStats s{Tensor({3}, std::vector<double>{0.1, -0.2, 0.3}), Tensor({3}, std::vector<double>{1.5, 0.5, 2.0})};
          return probe(batch_norm(x, g, be, s, BnMode::eval));
        },
        {x, g, be});
  }
  {
    Tensor x = off_zero(rng, {4, 5, 3});
    run("relu", 1e-6, [=] { return probe(relu(x)); }, {x});
    run("sigmoid", 1e-6, [=] { return probe(sigmoid(x)); }, {x});
    run("softmax", 1e-6, [=] { return probe(softmax(x)); }, {x});
    run("softmax_axis0", 1e-6, [=] { return probe(softmax(x, 0)); }, {x});
    run("log_softmax", 1e-6, [=] { return probe(log_softmax(x)); }, {x});
  }
  {
    Tensor x2 = distinct(rng, {4, 6, 2}), x3 = distinct(rng, {4, 4, 2, 2});
    run("max_pool2d", 1e-6, [=] { return probe(max_pool(x2)); }, {x2});
    run("max_pool3d", 1e-6, [=] { return probe(max_pool(x3)); }, {x3});
    run("upsample3d", 1e-6, [=] { return probe(upsample(x3, 2)); }, {x3});
  }
  {
    Tensor a = random_tensor(rng, {3, 2, 2}), b = random_tensor(rng, {3, 2, 3}), c = random_tensor(rng, {3, 2, 1});
    Tensor ch = random_tensor(rng, {2}), same = random_tensor(rng, {3, 2, 2});
    run("concat", 1e-6, [=] { return probe(concat({a, b, c})); }, {a, b, c});
    run("add", 1e-6, [=] { return probe(add(a, same)); }, {a, same});
    run("add_broadcast_last1", 1e-6, [=] { return probe(add(a, c)); }, {a, c});
    run("add_broadcast_channel", 1e-6, [=] { return probe(add(a, ch)); }, {a, ch});
    run("mul", 1e-6, [=] { return probe(mul(a, same)); }, {a, same});
    run("mul_broadcast_last1", 1e-6, [=] { return probe(mul(a, c)); }, {a, c});
    run("mul_broadcast_channel", 1e-6, [=] { return probe(mul(a, ch)); }, {a, ch});
    run("scale_sum_mean", 1e-6, [=] { return add(scale(sum(mul(a, a)), 0.5), mean(a)); }, {a});
    const std::vector<int> st{1, 0, 1}, ex{2, 2, 1};
    run("slice", 1e-6, [=] { return probe(slice(b, st, ex)); }, {b});
    run("expand_axis", 1e-6, [=] { return probe(expand_axis(a, 2, 3)); }, {a});
    run("reshape", 1e-6, [=] { return probe(reshape(b, {6, 3})); }, {b});
  }
  {
    Tensor logits = random_tensor(rng, {3, 4, 5, 5}), reg = random_tensor(rng, {3, 4, 3});
    const auto table = HierarchyTable::utility_corridor();
    std::vector<ObjectClass> cls(60);
    std::vector<Region> rg(60);
    std::vector<std::uint32_t> occ(60);
    for (std::size_t v = 0; v < 60; ++v) {
      cls[v] = static_cast<ObjectClass>(rng.index(kNumClasses));
      rg[v] = cls[v] == ObjectClass::background ? Region::none
                                                : table.resolve_parent(static_cast<Region>(1 + rng.index(2)), cls[v]);
      occ[v] = rng.unit() < 0.7 ? 1 : 0;
    }
    run("hlc_loss", 1e-6, [=] { return hlc_loss(logits, calibrate_logits(reg, 5), cls, rg, occ, table); },
        {logits, reg});
    const std::vector<double> w{0.5, 2.0, 3.0, 1.0, 0.8};
    run("wce_loss", 1e-6, [=] { return wce_loss(logits, cls, w, occ); }, {logits});
  }
  out.push_back({"sunet_toy_end_to_end", 1e-4, toy_end_to_end(e2e_samples, {4, 4, 8})});
  return out;
}

}  // namespace testutil
