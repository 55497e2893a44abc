#include "sunet/projection.hpp"

#include <cmath>
#include <fstream>

#include "sunet/binary_io.hpp"
#include "sunet/errors.hpp"

namespace sunet {

namespace {

constexpr char kGridMagic[6] = {'S', 'U', 'N', 'V', 'G', '1'};
constexpr std::uint32_t kGridVersion = 1;

template <std::size_t N, typename Label>
std::array<std::size_t, N> label_frequency(const Scene& scene, Label PointRecord::*member) {
  std::array<std::size_t, N> freq{};
  for (const auto& p : scene.points) ++freq[static_cast<std::size_t>(p.*member)];
  return freq;
}

}  // namespace

std::string_view to_string(FeatureChannel f) {
  switch (f) {
    case FeatureChannel::occupancy: return "occ";
    case FeatureChannel::abs_elev: return "ae";
    case FeatureChannel::rel_elev: return "re";
    case FeatureChannel::num_returns: return "nr";
  }
  return "?";
}

FeatureChannel feature_from_string(std::string_view s) {
  if (s == "occ" || s == "occupancy") return FeatureChannel::occupancy;
  if (s == "ae" || s == "abs_elev") return FeatureChannel::abs_elev;
  if (s == "re" || s == "rel_elev") return FeatureChannel::rel_elev;
  if (s == "nr" || s == "num_returns") return FeatureChannel::num_returns;
  throw ConfigError("unknown feature channel '" + std::string(s) + "'");
}

std::optional<std::array<int, 3>> VoxelGrid::voxel_of(double x, double y, double z) const {
  const double f[3] = {std::floor((x - origin[0]) / voxel_size), std::floor((y - origin[1]) / voxel_size),
                       std::floor((z - origin[2]) / voxel_size)};
  const int lim[3] = {dims.w, dims.h, dims.d};
  for (int a = 0; a < 3; ++a) {
    if (f[a] < 0.0 || f[a] >= lim[a]) return std::nullopt;
  }
  return std::array<int, 3>{static_cast<int>(f[0]), static_cast<int>(f[1]), static_cast<int>(f[2])};
}

VoxelGrid voxelize(const Scene& scene, std::array<double, 3> origin, GridDims dims, double voxel_size,
                   std::span<const FeatureChannel> feature_spec, const ElevationContext* elevation) {
  if (dims.w <= 0 || dims.h <= 0 || dims.d <= 0) throw ConfigError("voxelize: zero dims");
  if (!(voxel_size > 0.0)) throw ConfigError("voxelize: voxel_size must be > 0");
  if (feature_spec.empty()) throw ConfigError("voxelize: empty feature spec");
  for (auto f : feature_spec) {
    if ((f == FeatureChannel::abs_elev || f == FeatureChannel::rel_elev) && elevation == nullptr) {
      throw ConfigError("voxelize: elevation features need an elevation context");
    }
  }

  VoxelGrid g;
  g.dims = dims;
  g.origin = origin;
  g.voxel_size = voxel_size;
  g.channels.assign(feature_spec.begin(), feature_spec.end());
  g.source_points = scene.points.size();
  const std::size_t nvox = dims.voxels();

  // Counting sort of (voxel, point) pairs; point order within a voxel is preserved.
  std::vector<std::int64_t> voxel_of_point(scene.points.size(), -1);
  g.occupancy.assign(nvox, 0);
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const auto& p = scene.points[i];
    if (auto v = g.voxel_of(p.x, p.y, p.z)) {
      const std::size_t flat = g.flat((*v)[0], (*v)[1], (*v)[2]);
      voxel_of_point[i] = static_cast<std::int64_t>(flat);
      ++g.occupancy[flat];
    } else {
      ++g.dropped_points;
    }
  }
  if (g.dropped_points == scene.points.size()) throw Error("voxelize: all points out of range");

  g.point_offsets.assign(nvox + 1, 0);
  for (std::size_t v = 0; v < nvox; ++v) g.point_offsets[v + 1] = g.point_offsets[v] + g.occupancy[v];
  g.point_ids.resize(g.point_offsets[nvox]);
  {
    std::vector<std::uint32_t> cursor(g.point_offsets.begin(), g.point_offsets.end() - 1);
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
      if (voxel_of_point[i] >= 0) g.point_ids[cursor[voxel_of_point[i]]++] = static_cast<std::uint32_t>(i);
    }
  }

  const auto class_freq = label_frequency<kNumClasses>(scene, &PointRecord::class_label);
  const auto region_freq = label_frequency<kNumRegions>(scene, &PointRecord::region_label);
  const std::size_t nch = g.channels.size();
  g.features.assign(nvox * nch, 0.0);
  g.labels.assign(nvox, ObjectClass::background);
  g.region_labels.assign(nvox, Region::none);

  for (std::size_t v = 0; v < nvox; ++v) {
    const auto members = g.points_in(v);
    if (members.empty()) continue;
    std::array<std::uint32_t, kNumClasses> class_votes{};
    std::array<std::uint32_t, kNumRegions> region_votes{};
    for (std::size_t c = 0; c < nch; ++c) {
      const FeatureChannel ch = g.channels[c];
      if (ch == FeatureChannel::occupancy) {
        g.features[v * nch + c] = static_cast<double>(members.size());
        continue;
      }
      double sum = 0.0;
      for (auto pid : members) {
        const auto& p = scene.points[pid];
        switch (ch) {
          case FeatureChannel::abs_elev: sum += absolute_elevation(p.z, *elevation); break;
          case FeatureChannel::rel_elev: {
            auto col = elevation->columns.column_of(p.x, p.y);
            if (!col) throw Error("voxelize: point outside the elevation context columns");
            sum += relative_elevation(p.z, *col, *elevation);
            break;
          }
          case FeatureChannel::num_returns: sum += p.num_returns; break;
          case FeatureChannel::occupancy: break;
        }
      }
      g.features[v * nch + c] = sum / static_cast<double>(members.size());
    }
    for (auto pid : members) ++class_votes[static_cast<std::size_t>(scene.points[pid].class_label)];
    g.labels[v] = static_cast<ObjectClass>(majority_with_rare_tiebreak(class_votes, class_freq));
    // regions vote among the points of the winning class
    for (auto pid : members) {
      if (scene.points[pid].class_label == g.labels[v]) {
        ++region_votes[static_cast<std::size_t>(scene.points[pid].region_label)];
      }
    }
    g.region_labels[v] = static_cast<Region>(majority_with_rare_tiebreak(region_votes, region_freq));
  }
  return g;
}

BevGrid project_bev(const Scene& scene, std::array<double, 2> origin, std::array<int, 2> dims, double pixel_size) {
  if (dims[0] <= 0 || dims[1] <= 0) throw ConfigError("project_bev: zero dims");
  if (!(pixel_size > 0.0)) throw ConfigError("project_bev: pixel_size must be > 0");
  BevGrid b;
  b.w = dims[0];
  b.h = dims[1];
  b.origin_x = origin[0];
  b.origin_y = origin[1];
  b.pixel_size = pixel_size;
  const ColumnGeometry cols{origin[0], origin[1], b.w, b.h, pixel_size};
  const std::size_t npix = static_cast<std::size_t>(b.w) * b.h;
  b.features.assign(npix * 2, 0.0);
  b.region_labels.assign(npix, Region::none);
  std::vector<std::array<std::uint32_t, kNumRegions>> votes(npix);
  for (const auto& p : scene.points) {
    auto col = cols.column_of(p.x, p.y);
    if (!col) {
      ++b.dropped_points;
      continue;
    }
    const std::size_t f = b.flat((*col)[0], (*col)[1]);
    b.features[f * 2] += p.z;
    b.features[f * 2 + 1] += 1.0;
    ++votes[f][static_cast<std::size_t>(p.region_label)];
  }
  if (b.dropped_points == scene.points.size()) throw Error("project_bev: all points out of range");
  const auto region_freq = label_frequency<kNumRegions>(scene, &PointRecord::region_label);
  for (std::size_t f = 0; f < npix; ++f) {
    const double n = b.features[f * 2 + 1];
    if (n == 0.0) continue;
    b.features[f * 2] /= n;
    b.region_labels[f] = static_cast<Region>(majority_with_rare_tiebreak(votes[f], region_freq));
  }
  return b;
}

std::vector<ObjectClass> backproject_labels(const VoxelGrid& grid, std::span<const ObjectClass> predicted,
                                            const Scene& scene) {
  if (predicted.size() != grid.dims.voxels()) {
    throw ShapeError("backproject_labels: prediction has " + std::to_string(predicted.size()) +
                     " voxels, grid has " + std::to_string(grid.dims.voxels()));
  }
  if (scene.points.size() != grid.source_points || grid.point_offsets.size() != predicted.size() + 1) {
    throw ShapeError("backproject_labels: grid was not built from this scene");
  }
  std::vector<ObjectClass> out(scene.points.size(), ObjectClass::background);
  for (std::size_t v = 0; v < predicted.size(); ++v) {
    for (auto pid : grid.points_in(v)) out[pid] = predicted[v];
  }
  return out;
}

void write_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  BinaryWriter w(out);
  w.write_bytes(kGridMagic, sizeof(kGridMagic));
  w.write(kGridVersion);
  w.write<std::uint32_t>(grid.dims.w);
  w.write<std::uint32_t>(grid.dims.h);
  w.write<std::uint32_t>(grid.dims.d);
  for (double o : grid.origin) w.write(o);
  w.write(grid.voxel_size);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(grid.channels.size()));
  for (auto c : grid.channels) w.write<std::uint8_t>(static_cast<std::uint8_t>(c));
  const std::size_t nch = grid.channels.size();
  const auto for_each_x_fastest = [&](auto&& fn) {
    for (int k = 0; k < grid.dims.d; ++k)
      for (int j = 0; j < grid.dims.h; ++j)
        for (int i = 0; i < grid.dims.w; ++i) fn(grid.flat(i, j, k));
  };
  for (std::size_t c = 0; c < nch; ++c) {
    for_each_x_fastest([&](std::size_t v) { w.write(grid.features[v * nch + c]); });
  }
  for_each_x_fastest([&](std::size_t v) { w.write(grid.occupancy[v]); });
  const bool has_labels = !grid.labels.empty();
  w.write<std::uint8_t>(has_labels ? 1 : 0);
  if (has_labels) {
    for_each_x_fastest([&](std::size_t v) { w.write(static_cast<std::uint8_t>(grid.labels[v])); });
    for_each_x_fastest([&](std::size_t v) { w.write(static_cast<std::uint8_t>(grid.region_labels[v])); });
  }
  if (!out) throw IoError("write failed: " + path.string());
}

VoxelGrid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  BinaryReader r(in, path.string());
  r.expect_magic(kGridMagic, sizeof(kGridMagic));
  if (r.read<std::uint32_t>() != kGridVersion) throw FormatError("unsupported SUNVG version in " + path.string());
  VoxelGrid g;
  g.dims.w = static_cast<int>(r.read<std::uint32_t>());
  g.dims.h = static_cast<int>(r.read<std::uint32_t>());
  g.dims.d = static_cast<int>(r.read<std::uint32_t>());
  for (double& o : g.origin) o = r.read<double>();
  g.voxel_size = r.read<double>();
  const auto nch = r.read<std::uint32_t>();
  if (nch > 16) throw FormatError("too many channels in " + path.string());
  for (std::uint32_t c = 0; c < nch; ++c) {
    const auto code = r.read<std::uint8_t>();
    if (code > 3) throw FormatError("unknown channel code in " + path.string());
    g.channels.push_back(static_cast<FeatureChannel>(code));
  }
  const std::size_t nvox = g.dims.voxels();
  g.features.assign(nvox * nch, 0.0);
  g.occupancy.assign(nvox, 0);
  const auto for_each_x_fastest = [&](auto&& fn) {
    for (int k = 0; k < g.dims.d; ++k)
      for (int j = 0; j < g.dims.h; ++j)
        for (int i = 0; i < g.dims.w; ++i) fn(g.flat(i, j, k));
  };
  for (std::size_t c = 0; c < nch; ++c) {
    for_each_x_fastest([&](std::size_t v) { g.features[v * nch + c] = r.read<double>(); });
  }
  for_each_x_fastest([&](std::size_t v) { g.occupancy[v] = r.read<std::uint32_t>(); });
  if (r.read<std::uint8_t>() != 0) {
    g.labels.resize(nvox);
    g.region_labels.resize(nvox);
    for_each_x_fastest([&](std::size_t v) {
      const auto c = r.read<std::uint8_t>();
      if (c >= kNumClasses) throw FormatError("bad class code in " + path.string());
      g.labels[v] = static_cast<ObjectClass>(c);
    });
    for_each_x_fastest([&](std::size_t v) {
      const auto c = r.read<std::uint8_t>();
      if (c >= kNumRegions) throw FormatError("bad region code in " + path.string());
      g.region_labels[v] = static_cast<Region>(c);
    });
  }
  r.expect_eof();
  for (auto o : g.occupancy) g.source_points += o;
  return g;
}

}  // namespace sunet
