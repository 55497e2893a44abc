#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sunet {

inline constexpr int kNumClasses = 5;
inline constexpr int kNumRegions = 3;

enum class ObjectClass : std::uint8_t { background = 0, pylon = 1, powerline = 2, vegetation = 3, ground = 4 };
enum class Region : std::uint8_t { none = 0, corridor = 1, non_corridor = 2 };

std::string_view to_string(ObjectClass c);
std::string_view to_string(Region r);

struct PointRecord {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  std::uint8_t num_returns = 1;
  ObjectClass class_label = ObjectClass::background;
  Region region_label = Region::none;

  friend bool operator==(const PointRecord&, const PointRecord&) = default;
};

struct Bounds {
  std::array<double, 3> min{0.0, 0.0, 0.0};
  std::array<double, 3> max{0.0, 0.0, 0.0};

  bool contains(const PointRecord& p) const;
  double extent(int axis) const { return max[axis] - min[axis]; }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// Tight axis-aligned box of the points. Empty input gives a zero box.
Bounds compute_bounds(const std::vector<PointRecord>& points);

/// A scene. A point's index in `points` is its identity for every projection index.
struct Scene {
  std::string scene_id;
  std::vector<PointRecord> points;
  Bounds bounds;
};

enum class PointFormat { csv, bin };

/// Picks the format from the file extension (".bin" or anything else as csv).
PointFormat format_from_path(const std::filesystem::path& path);

Scene read_points(const std::filesystem::path& path, PointFormat format);
Scene read_points(const std::filesystem::path& path);
void write_points(const Scene& scene, const std::filesystem::path& path, PointFormat format);
void write_points(const Scene& scene, const std::filesystem::path& path);

/// A scene plus one predicted class per point.
struct LabeledScene {
  Scene scene;
  std::vector<ObjectClass> predicted;
};

/// CSV rows of the six point fields followed by the predicted class code.
void write_labeled_csv(const Scene& scene, std::span<const ObjectClass> predicted, const std::filesystem::path& path);
LabeledScene read_labeled_csv(const std::filesystem::path& path);

/// Formats one CSV row (no newline). Doubles use the shortest round-trip representation.
std::string format_csv_row(const PointRecord& p);
/// Parses the six leading fields of a CSV row; `extra` receives any trailing fields.
PointRecord parse_csv_row(std::string_view line, std::size_t line_no, std::vector<std::string>* extra = nullptr);

struct SynthConfig {
  double extent_xy = 32.0;
  double pylon_spacing = 24.0;
  double pylon_height = 20.0;
  double corridor_half_width = 6.0;
  double catenary_sag = 3.0;
  double vegetation_density = 1.5;
  double ground_density = 2.0;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Half-width of the lateral conductor spread and of the pylon footprint for a config.
struct CorridorLayout {
  double centerline_y = 0.0;
  double conductor_offset = 0.0;
  double pylon_half_width = 0.0;
  std::vector<double> pylon_x;
};

CorridorLayout corridor_layout(const SynthConfig& cfg);

/// Height of the synthetic terrain at (x, y).
double synthetic_ground(double x, double y);

/// Maximum absolute jitter applied to every synthetic coordinate.
inline constexpr double kSynthJitter = 0.05;

/// Builds a labeled corridor scene: undulating ground, pylons along x on the
/// corridor centerline, parabolic conductors between pylon tops, tree clusters,
/// and sparse airborne background returns. Every point lies within [0, extent] in x and y
/// up to the coordinate jitter. Pure function of `cfg`.
Scene generate_synthetic_scene(const SynthConfig& cfg, std::string scene_id = "synth");

/// Cuts a scene into square XY tiles anchored at the scene's bounds minimum.
/// Empty tiles are dropped; each point lands in exactly one tile.
std::vector<Scene> split_scene(const Scene& scene, double tile_xy);

}  // namespace sunet
