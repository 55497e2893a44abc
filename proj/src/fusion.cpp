#include "sunet/fusion.hpp"

#include <cmath>

#include "sunet/diff/ops.hpp"
#include "sunet/errors.hpp"

namespace sunet {

namespace {

// log softmax of v[0..n) at index k, plus the softmax vector in `probs`.
double log_softmax_at(const double* v, int n, int k, double* probs) {
  double m = v[0];
  for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += (probs[i] = std::exp(v[i] - m));
  for (int i = 0; i < n; ++i) probs[i] /= z;
  return v[k] - m - std::log(z);
}

std::size_t count_occupied(std::span<const std::uint32_t> occupancy, std::size_t n) {
  if (occupancy.empty()) return n;
  std::size_t m = 0;
  for (auto o : occupancy) m += o > 0;
  return m;
}

}  // namespace

HierarchyTable HierarchyTable::utility_corridor(double w_parent, double w_child) {
  HierarchyTable t;
  t.w_parent = {0.0, w_parent, w_parent};
  t.w_child.fill(w_child);
  for (auto c : {ObjectClass::pylon, ObjectClass::powerline, ObjectClass::vegetation, ObjectClass::ground}) {
    t.allowed.insert({Region::corridor, c});
  }
  t.allowed.insert({Region::non_corridor, ObjectClass::vegetation});
  t.allowed.insert({Region::non_corridor, ObjectClass::ground});
  return t;
}

Region HierarchyTable::resolve_parent(Region parent, ObjectClass child) const {
  if (is_allowed(parent, child)) return parent;
  Region only = Region::none;
  int n = 0;
  for (auto p : {Region::corridor, Region::non_corridor}) {
    if (is_allowed(p, child)) {
      only = p;
      ++n;
    }
  }
  if (n != 1) {
    throw Error("ground truth pair (" + std::string(to_string(parent)) + ", " + std::string(to_string(child)) +
                ") has no parent in the hierarchy");
  }
  return only;
}

void HierarchyTable::validate() const {
  for (auto p : {Region::corridor, Region::non_corridor}) {
    if (!(w_parent[static_cast<int>(p)] > 0.0)) throw ConfigError("parent weights must be > 0");
  }
  for (double w : w_child) {
    if (!(w > 0.0)) throw ConfigError("child weights must be > 0");
  }
  if (!(background_weight > 0.0)) throw ConfigError("background weight must be > 0");
  for (auto c : {ObjectClass::pylon, ObjectClass::powerline}) {
    if (!is_allowed(Region::corridor, c) || is_allowed(Region::non_corridor, c)) {
      throw ConfigError("pylon and powerline must be corridor-only in the hierarchy");
    }
  }
}

CalibratedLogits calibrate_logits(const Tensor& bev_logits, int depth) {
  if (bev_logits.rank() != 3) throw ShapeError("calibrate_logits: expected (W, H, C_p) logits");
  if (depth < 1) throw ShapeError("calibrate_logits: depth must be >= 1");
  return {diff::expand_axis(bev_logits, 2, depth)};
}

Tensor hlc_loss(const Tensor& obj_logits, const CalibratedLogits& regions, std::span<const ObjectClass> gt_class,
                std::span<const Region> gt_region, std::span<const std::uint32_t> occupancy,
                const HierarchyTable& table) {
  const Tensor& r = regions.region_logits_3d;
  const int C = obj_logits.dim(-1);
  if (C != kNumClasses) throw ShapeError("hlc_loss: object logits need 5 classes");
  if (r.dim(-1) != kNumRegions) throw ShapeError("hlc_loss: region logits need 3 channels");
  const std::size_t n = obj_logits.size() / C;
  if (r.size() / kNumRegions != n || r.rank() != obj_logits.rank()) {
    throw ShapeError("hlc_loss: region logits " + diff::shape_string(r.shape()) + " do not align with " +
                     diff::shape_string(obj_logits.shape()));
  }
  if (gt_class.size() != n || gt_region.size() != n || (!occupancy.empty() && occupancy.size() != n)) {
    throw ShapeError("hlc_loss: label grids do not match logits");
  }

  const std::size_t M = count_occupied(occupancy, n);
  const auto x = obj_logits.values();
  const auto rv = r.values();

  // Per voxel: weight, class index, parent slot (1 or 2; 0 for background terms).
  struct Term {
    std::size_t voxel;
    double weight;
    int cls;
    int parent;
  };
  std::vector<Term> terms;
  double total = 0.0;
  double probs[kNumClasses];
  for (std::size_t m = 0; m < n; ++m) {
    if (!occupancy.empty() && occupancy[m] == 0) continue;
    const ObjectClass c = gt_class[m];
    if (c == ObjectClass::background) {
      const double w = table.background_weight;
      total += -w * log_softmax_at(&x[m * C], C, 0, probs);
      terms.push_back({m, w, 0, 0});
      continue;
    }
    if (gt_region[m] == Region::none) {
      throw Error("hlc_loss: voxel " + std::to_string(m) + " has class " + std::string(to_string(c)) +
                  " but no ground-truth region");
    }
    const Region p = table.resolve_parent(gt_region[m], c);
    const double w = table.w_parent[static_cast<int>(p)] * table.w_child[static_cast<int>(c)];
    const double log_c = log_softmax_at(&x[m * C], C, static_cast<int>(c), probs);
    const double log_p = log_softmax_at(&rv[m * kNumRegions + 1], 2, static_cast<int>(p) - 1, probs);
    total += -w * (log_c + log_p);
    terms.push_back({m, w, static_cast<int>(c), static_cast<int>(p)});
  }
  const double inv_m = M ? 1.0 / static_cast<double>(M) : 0.0;

  return diff::make_result({1}, {total * inv_m}, {obj_logits, r},
                           [terms = std::move(terms), inv_m, C](diff::Node& self) {
                             const double g = self.grad[0] * inv_m;
                             diff::Node& xo = *self.parents[0];
                             diff::Node& ro = *self.parents[1];
                             double probs[kNumClasses];
                             if (xo.requires_grad) {
                               auto& gx = xo.grad_buffer();
                               for (const auto& t : terms) {
                                 log_softmax_at(&xo.value[t.voxel * C], C, t.cls, probs);
                                 for (int k = 0; k < C; ++k) {
                                   gx[t.voxel * C + k] += g * t.weight * (probs[k] - (k == t.cls ? 1.0 : 0.0));
                                 }
                               }
                             }
                             if (ro.requires_grad) {
                               auto& gr = ro.grad_buffer();
                               for (const auto& t : terms) {
                                 if (t.parent == 0) continue;
                                 const std::size_t base = t.voxel * kNumRegions + 1;
                                 log_softmax_at(&ro.value[base], 2, t.parent - 1, probs);
                                 for (int k = 0; k < 2; ++k) {
                                   gr[base + k] += g * t.weight * (probs[k] - (k == t.parent - 1 ? 1.0 : 0.0));
                                 }
                               }
                             }
                           });
}

Tensor wce_loss(const Tensor& logits, std::span<const std::uint8_t> labels, std::span<const double> class_weights,
                std::span<const std::uint32_t> occupancy) {
  const int C = logits.dim(-1);
  const std::size_t n = logits.size() / C;
  if (labels.size() != n || (!occupancy.empty() && occupancy.size() != n)) {
    throw ShapeError("wce_loss: labels do not match logits");
  }
  if (class_weights.size() != static_cast<std::size_t>(C)) throw ShapeError("wce_loss: one weight per class");
  for (double w : class_weights) {
    if (!(w > 0.0)) throw ConfigError("wce_loss: weights must be positive");
  }
  const std::size_t M = count_occupied(occupancy, n);
  const auto x = logits.values();
  std::vector<double> probs(C);
  double total = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    if (!occupancy.empty() && occupancy[m] == 0) continue;
    if (labels[m] >= C) throw Error("wce_loss: label out of range");
    total += -class_weights[labels[m]] * log_softmax_at(&x[m * C], C, labels[m], probs.data());
  }
  const double inv_m = M ? 1.0 / static_cast<double>(M) : 0.0;
  return diff::make_result(
      {1}, {total * inv_m}, {logits},
      [labels = std::vector<std::uint8_t>(labels.begin(), labels.end()),
       occ = std::vector<std::uint32_t>(occupancy.begin(), occupancy.end()),
       w = std::vector<double>(class_weights.begin(), class_weights.end()), inv_m, C](diff::Node& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const auto& xv = self.parents[0]->value;
        std::vector<double> probs(C);
        const double g = self.grad[0] * inv_m;
        for (std::size_t m = 0; m < labels.size(); ++m) {
          if (!occ.empty() && occ[m] == 0) continue;
          log_softmax_at(&xv[m * C], C, labels[m], probs.data());
          for (int k = 0; k < C; ++k) gx[m * C + k] += g * w[labels[m]] * (probs[k] - (k == labels[m] ? 1.0 : 0.0));
        }
      });
}

Tensor wce_loss(const Tensor& logits, std::span<const ObjectClass> labels, std::span<const double> class_weights,
                std::span<const std::uint32_t> occupancy) {
  return wce_loss(logits, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(labels.data()),
                                                        labels.size()),
                  class_weights, occupancy);
}

}  // namespace sunet
