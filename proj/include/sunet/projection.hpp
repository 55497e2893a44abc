#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sunet/elevation.hpp"
#include "sunet/point_cloud.hpp"

namespace sunet {

enum class FeatureChannel : std::uint8_t { occupancy = 0, abs_elev = 1, rel_elev = 2, num_returns = 3 };

std::string_view to_string(FeatureChannel f);
FeatureChannel feature_from_string(std::string_view s);

struct GridDims {
  int w = 0;
  int h = 0;
  int d = 0;
  std::size_t voxels() const { return static_cast<std::size_t>(w) * h * d; }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Dense voxel grid, channel-last. Voxel (i, j, k) has flat index (i*H + j)*D + k.
///
/// `point_offsets`/`point_ids` form a CSR voxel -> point index (the projection
/// matrix): the points of voxel v are point_ids[point_offsets[v] .. point_offsets[v+1]).
struct VoxelGrid {
  GridDims dims;
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  double voxel_size = 1.0;
  std::vector<FeatureChannel> channels;
  std::vector<double> features;         // voxels * channels
  std::vector<std::uint32_t> occupancy; // voxels
  std::vector<ObjectClass> labels;      // voxels; background on empty voxels
  std::vector<Region> region_labels;    // voxels; majority among points of the voxel class, none on empty voxels
  std::vector<std::uint32_t> point_offsets;
  std::vector<std::uint32_t> point_ids;
  std::size_t source_points = 0;
  std::size_t dropped_points = 0;

  std::size_t flat(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims.h + j) * dims.d + k;
  }
  std::span<const std::uint32_t> points_in(std::size_t voxel) const {
    return {point_ids.data() + point_offsets[voxel], point_ids.data() + point_offsets[voxel + 1]};
  }
  double feature(std::size_t voxel, std::size_t channel) const { return features[voxel * channels.size() + channel]; }
  ColumnGeometry columns() const { return {origin[0], origin[1], dims.w, dims.h, voxel_size}; }
  /// Voxel containing the coordinate, or nullopt outside the grid.
  std::optional<std::array<int, 3>> voxel_of(double x, double y, double z) const;
};

/// Drops points outside the grid (counted in dropped_points). AE/RE channels
/// need `elevation`; its columns are looked up with the context's own geometry.
VoxelGrid voxelize(const Scene& scene, std::array<double, 3> origin, GridDims dims, double voxel_size,
                   std::span<const FeatureChannel> feature_spec, const ElevationContext* elevation = nullptr);

/// Two-channel XY projection: mean elevation and point count per pixel.
struct BevGrid {
  int w = 0;
  int h = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;
  std::vector<double> features;       // w*h*2, pixel (i,j) at (i*h + j)*2
  std::vector<Region> region_labels;  // w*h
  std::size_t dropped_points = 0;

  std::size_t flat(int i, int j) const { return static_cast<std::size_t>(i) * h + j; }
  double mean_elevation(int i, int j) const { return features[flat(i, j) * 2]; }
  double occupancy(int i, int j) const { return features[flat(i, j) * 2 + 1]; }
};

BevGrid project_bev(const Scene& scene, std::array<double, 2> origin, std::array<int, 2> dims, double pixel_size);

/// Assigns every point its voxel's predicted class; points outside the grid get background.
/// `grid` must have been built from `scene`.
std::vector<ObjectClass> backproject_labels(const VoxelGrid& grid, std::span<const ObjectClass> predicted,
                                            const Scene& scene);

/// Majority vote; ties go to the class rarer in `scene_frequency` (then the lower code).
template <std::size_t N>
std::size_t majority_with_rare_tiebreak(const std::array<std::uint32_t, N>& votes,
                                        const std::array<std::size_t, N>& scene_frequency) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < N; ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && scene_frequency[c] < scene_frequency[best])) best = c;
  }
  return best;
}

/// "SUNVG1" grid dump: dims, origin, voxel size, channels, then each channel x-fastest.
void write_grid(const VoxelGrid& grid, const std::filesystem::path& path);
/// Reads a dump back; the point index is not stored, so it comes back empty.
VoxelGrid read_grid(const std::filesystem::path& path);

}  // namespace sunet
