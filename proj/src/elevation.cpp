#include "sunet/elevation.hpp"

#include <cmath>
#include <limits>

#include "sunet/errors.hpp"

namespace sunet {

std::optional<std::array<int, 2>> ColumnGeometry::column_of(double x, double y) const {
  const double fx = std::floor((x - origin_x) / cell_size);
  const double fy = std::floor((y - origin_y) / cell_size);
  if (fx < 0.0 || fy < 0.0 || fx >= width || fy >= height) return std::nullopt;
  return std::array<int, 2>{static_cast<int>(fx), static_cast<int>(fy)};
}

bool ElevationContext::occupied(int i, int j) const {
  if (i < 0 || j < 0 || i >= columns.width || j >= columns.height) return false;
  return !std::isnan(z_min_local[columns.flat(i, j)]);
}

double ElevationContext::column_min(int i, int j) const {
  if (!occupied(i, j)) {
    throw std::out_of_range("column (" + std::to_string(i) + "," + std::to_string(j) + ") is not occupied");
  }
  return z_min_local[columns.flat(i, j)];
}

double absolute_elevation(double z, const ElevationContext& ctx) {
  if (ctx.z_max_global == 0.0) throw Error("absolute elevation undefined: z_max_global is 0");
  return 1.0 + z / ctx.z_max_global;
}

double relative_elevation(double z, std::array<int, 2> column, const ElevationContext& ctx) {
  const double lo = ctx.column_min(column[0], column[1]);
  const double denom = ctx.z_max_scene - lo;
  if (denom == 0.0) return 0.0;
  return (z - lo) / denom;
}

double dataset_max_elevation(std::span<const Scene> scenes) {
  double m = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& s : scenes) {
    for (const auto& p : s.points) {
      m = std::max(m, p.z);
      any = true;
    }
  }
  if (!any) throw Error("dataset_max_elevation: empty input");
  return m;
}

ElevationContext build_context(std::span<const Scene> tiles, const ColumnGeometry& columns,
                               std::optional<double> z_max_global) {
  if (columns.width <= 0 || columns.height <= 0 || !(columns.cell_size > 0.0)) {
    throw ConfigError("invalid column geometry");
  }
  ElevationContext ctx;
  ctx.columns = columns;
  ctx.z_min_local.assign(static_cast<std::size_t>(columns.width) * columns.height,
                         std::numeric_limits<double>::quiet_NaN());
  ctx.z_max_scene = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& t : tiles) {
    for (const auto& p : t.points) {
      any = true;
      ctx.z_max_scene = std::max(ctx.z_max_scene, p.z);
      if (auto col = columns.column_of(p.x, p.y)) {
        double& m = ctx.z_min_local[columns.flat((*col)[0], (*col)[1])];
        if (std::isnan(m) || p.z < m) m = p.z;
      }
    }
  }
  if (!any) throw Error("build_context: empty input");
  ctx.z_max_global = z_max_global.value_or(ctx.z_max_scene);
  if (ctx.z_max_global < ctx.z_max_scene) {
    throw Error("z_max_global (" + std::to_string(ctx.z_max_global) + ") below scene maximum (" +
                std::to_string(ctx.z_max_scene) + ")");
  }
  return ctx;
}

ElevationContext build_context(const Scene& scene, const ColumnGeometry& columns,
                               std::optional<double> z_max_global) {
  return build_context(std::span<const Scene>(&scene, 1), columns, z_max_global);
}

}  // namespace sunet
