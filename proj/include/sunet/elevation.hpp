#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "sunet/point_cloud.hpp"

namespace sunet {

/// XY column layout shared by voxel grids and BEV grids.
struct ColumnGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  int width = 0;   // columns along x
  int height = 0;  // columns along y
  double cell_size = 1.0;

  /// Column containing (x, y), or nullopt when outside. Intervals are half-open.
  std::optional<std::array<int, 2>> column_of(double x, double y) const;
  std::size_t flat(int i, int j) const { return static_cast<std::size_t>(i) * height + j; }
  friend bool operator==(const ColumnGeometry&, const ColumnGeometry&) = default;
};

/// Normalization constants for the absolute/relative elevation features.
///
/// z_max_global is a dataset-wide constant (taken from training data and kept
/// with the model), z_max_scene is the maximum of the scene being processed and
/// z_min_local holds the lowest elevation of every occupied XY column.
struct ElevationContext {
  double z_max_global = 0.0;
  double z_max_scene = 0.0;
  ColumnGeometry columns;
  std::vector<double> z_min_local;  // NaN on unoccupied columns

  bool occupied(int i, int j) const;
  double column_min(int i, int j) const;
};

/// 1 + z / z_max_global. Throws when z_max_global is zero.
double absolute_elevation(double z, const ElevationContext& ctx);

/// (z - z_min_local) / (z_max_scene - z_min_local). Degenerate columns (zero
/// denominator) return 0; unoccupied columns throw.
double relative_elevation(double z, std::array<int, 2> column, const ElevationContext& ctx);

/// Maximum elevation across a dataset.
double dataset_max_elevation(std::span<const Scene> scenes);

/// Context for a scene given as one or more tiles. When `z_max_global` is not
/// supplied the scene's own maximum is used.
ElevationContext build_context(std::span<const Scene> tiles, const ColumnGeometry& columns,
                               std::optional<double> z_max_global = std::nullopt);
ElevationContext build_context(const Scene& scene, const ColumnGeometry& columns,
                               std::optional<double> z_max_global = std::nullopt);

}  // namespace sunet
