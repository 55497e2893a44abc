#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>

#include "sunet/diff/tensor.hpp"
#include "sunet/point_cloud.hpp"

namespace sunet {

using diff::Tensor;

/// Region (parent) -> object class (child) co-occurrence table with the
/// penalty weights of the layout-consistency loss.
struct HierarchyTable {
  std::array<double, kNumRegions> w_parent{};  // indexed by Region; the `none` slot is unused
  std::array<double, kNumClasses> w_child{};   // indexed by ObjectClass
  std::set<std::pair<Region, ObjectClass>> allowed;
  /// Weight of the plain cross-entropy term on background voxels.
  double background_weight = 1.0;

  /// Corridor holds every foreground class; non-corridor holds vegetation and ground only.
  static HierarchyTable utility_corridor(double w_parent = 10.0, double w_child = 8.0);

  bool is_allowed(Region parent, ObjectClass child) const { return allowed.count({parent, child}) != 0; }
  /// Parent used for a ground-truth pair: the given one when allowed, otherwise the
  /// child's only allowed parent. Throws when neither exists.
  Region resolve_parent(Region parent, ObjectClass child) const;
  void validate() const;
};

/// Region logits broadcast down voxel columns, (W, H, D, C_p).
struct CalibratedLogits {
  Tensor region_logits_3d;
};

/// (W, H, C_p) BEV logits -> (W, H, D, C_p); every depth slice is a copy, gradients sum back.
CalibratedLogits calibrate_logits(const Tensor& bev_logits, int depth);

/// Hierarchical layout-consistency loss over occupied voxels (occupancy > 0):
///
///   L = -(1/M) Σ_m w_p(m) w_c(m) log( softmax_C(x_m)[c] · softmax_P(r_m)[p] )
///
/// where (c, p) is voxel m's ground-truth class and region, softmax_P runs over
/// the two parent channels (corridor, non-corridor) of the calibrated region
/// logits, and M counts occupied voxels. Background voxels contribute
/// -background_weight · log softmax_C(x_m)[background] instead.
Tensor hlc_loss(const Tensor& obj_logits, const CalibratedLogits& regions, std::span<const ObjectClass> gt_class,
                std::span<const Region> gt_region, std::span<const std::uint32_t> occupancy,
                const HierarchyTable& table);

/// -(1/M) Σ_m w[c(m)] log softmax(x_m)[c(m)] over positions with occupancy > 0
/// (all positions when `occupancy` is empty). Labels index the last axis of `logits`.
Tensor wce_loss(const Tensor& logits, std::span<const std::uint8_t> labels, std::span<const double> class_weights,
                std::span<const std::uint32_t> occupancy = {});
Tensor wce_loss(const Tensor& logits, std::span<const ObjectClass> labels, std::span<const double> class_weights,
                std::span<const std::uint32_t> occupancy = {});

}  // namespace sunet
