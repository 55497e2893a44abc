#include "sunet/point_cloud.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <span>

#include "sunet/binary_io.hpp"
#include "sunet/errors.hpp"
#include "sunet/rng.hpp"

namespace sunet {

namespace {

constexpr char kBinMagic[6] = {'S', 'U', 'N', 'P', 'C', '1'};

double jitter(Rng& rng) { return rng.uniform(-kSynthJitter, kSynthJitter); }

Region region_at(const SynthConfig& cfg, const CorridorLayout& layout, double y) {
  return std::abs(y - layout.centerline_y) <= cfg.corridor_half_width ? Region::corridor : Region::non_corridor;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, const char* what) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw FormatError("malformed " + std::string(what) + " field '" + std::string(field) + "'", line_no);
  }
  return value;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

ObjectClass class_from_code(unsigned code, std::size_t line_no) {
  if (code >= static_cast<unsigned>(kNumClasses)) {
    throw FormatError("unknown label code " + std::to_string(code) + " for class", line_no);
  }
  return static_cast<ObjectClass>(code);
}

Region region_from_code(unsigned code, std::size_t line_no) {
  if (code >= static_cast<unsigned>(kNumRegions)) {
    throw FormatError("unknown label code " + std::to_string(code) + " for region", line_no);
  }
  return static_cast<Region>(code);
}

void check_finite(const PointRecord& p, std::size_t line_no) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
    throw FormatError("non-finite coordinate", line_no);
  }
}

Scene finish_scene(std::vector<PointRecord> points, const std::filesystem::path& path) {
  if (points.empty()) throw FormatError("empty scene: " + path.string());
  Scene s;
  s.scene_id = path.stem().string();
  s.bounds = compute_bounds(points);
  s.points = std::move(points);
  return s;
}

Scene read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PointRecord> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> extra;
    points.push_back(parse_csv_row(line, line_no, &extra));
    if (!extra.empty()) throw FormatError("expected 6 fields", line_no);
  }
  return finish_scene(std::move(points), path);
}

Scene read_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  BinaryReader r(in, path.string());
  r.expect_magic(kBinMagic, sizeof(kBinMagic));
  const auto count = r.read<std::uint64_t>();
  std::vector<PointRecord> points;
  points.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    PointRecord p;
    p.x = r.read<double>();
    p.y = r.read<double>();
    p.z = r.read<double>();
    p.num_returns = r.read<std::uint8_t>();
    const std::size_t rec = static_cast<std::size_t>(i) + 1;
    p.class_label = class_from_code(r.read<std::uint8_t>(), rec);
    p.region_label = region_from_code(r.read<std::uint8_t>(), rec);
    check_finite(p, rec);
    if (p.num_returns == 0) throw FormatError("num_returns must be >= 1", rec);
    points.push_back(p);
  }
  r.expect_eof();
  return finish_scene(std::move(points), path);
}

}  // namespace

std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::background: return "background";
    case ObjectClass::pylon: return "pylon";
    case ObjectClass::powerline: return "powerline";
    case ObjectClass::vegetation: return "vegetation";
    case ObjectClass::ground: return "ground";
  }
  return "?";
}

std::string_view to_string(Region r) {
  switch (r) {
    case Region::none: return "none";
    case Region::corridor: return "corridor";
    case Region::non_corridor: return "non_corridor";
  }
  return "?";
}

bool Bounds::contains(const PointRecord& p) const {
  return p.x >= min[0] && p.x <= max[0] && p.y >= min[1] && p.y <= max[1] && p.z >= min[2] && p.z <= max[2];
}

Bounds compute_bounds(const std::vector<PointRecord>& points) {
  Bounds b;
  if (points.empty()) return b;
  b.min = {points[0].x, points[0].y, points[0].z};
  b.max = b.min;
  for (const auto& p : points) {
    const double c[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a) {
      b.min[a] = std::min(b.min[a], c[a]);
      b.max[a] = std::max(b.max[a], c[a]);
    }
  }
  return b;
}

PointFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? PointFormat::bin : PointFormat::csv;
}

std::string format_csv_row(const PointRecord& p) {
  std::string row;
  row.reserve(64);
  append_double(row, p.x);
  row += ',';
  append_double(row, p.y);
  row += ',';
  append_double(row, p.z);
  row += ',';
  row += std::to_string(p.num_returns);
  row += ',';
  row += std::to_string(static_cast<unsigned>(p.class_label));
  row += ',';
  row += std::to_string(static_cast<unsigned>(p.region_label));
  return row;
}

PointRecord parse_csv_row(std::string_view line, std::size_t line_no, std::vector<std::string>* extra) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (fields.size() < 6) throw FormatError("expected 6 fields, got " + std::to_string(fields.size()), line_no);
  PointRecord p;
  p.x = parse_number<double>(fields[0], line_no, "x");
  p.y = parse_number<double>(fields[1], line_no, "y");
  p.z = parse_number<double>(fields[2], line_no, "z");
  check_finite(p, line_no);
  const auto nr = parse_number<unsigned>(fields[3], line_no, "num_returns");
  if (nr < 1 || nr > 255) throw FormatError("num_returns out of range [1, 255]", line_no);
  p.num_returns = static_cast<std::uint8_t>(nr);
  p.class_label = class_from_code(parse_number<unsigned>(fields[4], line_no, "class"), line_no);
  p.region_label = region_from_code(parse_number<unsigned>(fields[5], line_no, "region"), line_no);
  if (extra) {
    for (std::size_t i = 6; i < fields.size(); ++i) extra->emplace_back(fields[i]);
  }
  return p;
}

Scene read_points(const std::filesystem::path& path, PointFormat format) {
  return format == PointFormat::bin ? read_bin(path) : read_csv(path);
}

Scene read_points(const std::filesystem::path& path) { return read_points(path, format_from_path(path)); }

void write_points(const Scene& scene, const std::filesystem::path& path, PointFormat format) {
  if (scene.points.empty()) throw Error("refusing to write empty scene " + scene.scene_id);
  if (format == PointFormat::csv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    std::string buf;
    for (const auto& p : scene.points) {
      buf += format_csv_row(p);
      buf += '\n';
    }
    out << buf;
    if (!out) throw IoError("write failed: " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  BinaryWriter w(out);
  w.write_bytes(kBinMagic, sizeof(kBinMagic));
  w.write<std::uint64_t>(scene.points.size());
  for (const auto& p : scene.points) {
    w.write(p.x);
    w.write(p.y);
    w.write(p.z);
    w.write<std::uint8_t>(p.num_returns);
    w.write<std::uint8_t>(static_cast<std::uint8_t>(p.class_label));
    w.write<std::uint8_t>(static_cast<std::uint8_t>(p.region_label));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_points(const Scene& scene, const std::filesystem::path& path) {
  write_points(scene, path, format_from_path(path));
}

void write_labeled_csv(const Scene& scene, std::span<const ObjectClass> predicted, const std::filesystem::path& path) {
  if (predicted.size() != scene.points.size()) throw Error("write_labeled_csv: one prediction per point required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::string buf;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    buf += format_csv_row(scene.points[i]);
    buf += ',';
    buf += std::to_string(static_cast<unsigned>(predicted[i]));
    buf += '\n';
  }
  out << buf;
  if (!out) throw IoError("write failed: " + path.string());
}

LabeledScene read_labeled_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PointRecord> points;
  LabeledScene out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> extra;
    points.push_back(parse_csv_row(line, line_no, &extra));
    if (extra.size() != 1) throw FormatError("expected 7 fields", line_no);
    out.predicted.push_back(class_from_code(parse_number<unsigned>(extra[0], line_no, "predicted class"), line_no));
  }
  out.scene = finish_scene(std::move(points), path);
  return out;
}

void SynthConfig::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be > 0");
  };
  positive(extent_xy, "extent_xy");
  positive(pylon_spacing, "pylon_spacing");
  positive(pylon_height, "pylon_height");
  positive(corridor_half_width, "corridor_half_width");
  positive(catenary_sag, "catenary_sag");
  if (!(vegetation_density >= 0.0) || !(ground_density >= 0.0)) throw ConfigError("densities must be >= 0");
  // Conductors must clear the highest terrain (2 m) by a margin.
  if (pylon_height - catenary_sag <= 4.0) throw ConfigError("pylon_height - catenary_sag must exceed 4 m");
}

double synthetic_ground(double x, double y) {
  return 1.0 + 0.5 * std::sin(2.0 * M_PI * x / 37.0) + 0.5 * std::cos(2.0 * M_PI * y / 23.0);
}

CorridorLayout corridor_layout(const SynthConfig& cfg) {
  cfg.validate();
  CorridorLayout layout;
  layout.centerline_y = cfg.extent_xy / 2.0;
  layout.conductor_offset = std::min(1.5, 0.4 * cfg.corridor_half_width);
  layout.pylon_half_width = std::min(1.0, 0.4 * cfg.corridor_half_width);
  const double margin = layout.pylon_half_width + 1.0;
  const double usable = cfg.extent_xy - 2.0 * margin;
  if (usable < cfg.pylon_spacing) {
    throw ConfigError("extent too small to place two pylons");
  }
  const int n = static_cast<int>(std::floor(usable / cfg.pylon_spacing)) + 1;
  const double x0 = (cfg.extent_xy - (n - 1) * cfg.pylon_spacing) / 2.0;
  for (int k = 0; k < n; ++k) layout.pylon_x.push_back(x0 + k * cfg.pylon_spacing);
  return layout;
}

Scene generate_synthetic_scene(const SynthConfig& cfg, std::string scene_id) {
  const CorridorLayout layout = corridor_layout(cfg);
  Rng rng(cfg.rng_seed);
  const double e = cfg.extent_xy;
  const double c = layout.centerline_y;
  std::vector<PointRecord> pts;

  // Ground (low vegetation is folded into this class).
  const auto n_ground = static_cast<std::size_t>(std::llround(cfg.ground_density * e * e));
  for (std::size_t i = 0; i < n_ground; ++i) {
    PointRecord p;
    p.x = rng.uniform(0.0, e);
    p.y = rng.uniform(0.0, e);
    p.z = synthetic_ground(p.x, p.y) + jitter(rng);
    p.num_returns = rng.unit() < 0.1 ? 2 : 1;
    p.class_label = ObjectClass::ground;
    p.region_label = region_at(cfg, layout, p.y);
    pts.push_back(p);
  }

  // Trees. The first is forced into the corridor, the second outside it when the scene is wide enough.
  const auto n_veg = static_cast<std::size_t>(std::llround(cfg.vegetation_density * e * e));
  if (n_veg > 0) {
    const int n_trees = std::max(2, static_cast<int>(std::lround(e * e / 120.0)));
    const bool has_outside = e / 2.0 > cfg.corridor_half_width + 1.0;
    struct Tree {
      double x, y, radius, height;
    };
    std::vector<Tree> trees;
    for (int t = 0; t < n_trees; ++t) {
      Tree tree{};
      tree.radius = rng.uniform(1.5, 3.0);
      tree.height = rng.uniform(5.0, std::min(12.0, cfg.pylon_height - cfg.catenary_sag - 2.0));
      for (int attempt = 0; attempt < 64; ++attempt) {
        tree.x = rng.uniform(tree.radius, e - tree.radius);
        if (t == 0) {
          tree.y = c + rng.uniform(-cfg.corridor_half_width, cfg.corridor_half_width);
        } else if (t == 1 && has_outside) {
          const double lo = cfg.corridor_half_width + 1.0;
          const double off = rng.uniform(lo, std::max(lo, e / 2.0 - tree.radius));
          tree.y = rng.unit() < 0.5 ? c - off : c + off;
        } else {
          tree.y = rng.uniform(tree.radius, e - tree.radius);
        }
        bool clear = true;
        for (double px : layout.pylon_x) {
          if (std::hypot(tree.x - px, tree.y - c) < tree.radius + layout.pylon_half_width + 1.0) clear = false;
        }
        if (clear) break;
      }
      trees.push_back(tree);
    }
    for (std::size_t i = 0; i < n_veg; ++i) {
      const Tree& tree = trees[i % trees.size()];
      const double base = synthetic_ground(tree.x, tree.y);
      PointRecord p;
      if (rng.unit() < 0.15) {
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        p.x = tree.x + 0.2 * std::cos(a);
        p.y = tree.y + 0.2 * std::sin(a);
        p.z = base + rng.uniform(0.3, 0.4 * tree.height);
        p.num_returns = rng.unit() < 0.5 ? 1 : 2;
      } else {
        // Uniform direction, radius biased to the crown surface.
        const double u = rng.uniform(-1.0, 1.0);
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        const double s = std::sqrt(1.0 - u * u);
        const double r = std::cbrt(rng.uniform(0.3, 1.0));
        p.x = tree.x + tree.radius * r * s * std::cos(a);
        p.y = tree.y + tree.radius * r * s * std::sin(a);
        p.z = base + 0.6 * tree.height + 0.4 * tree.height * r * u;
        p.x = std::clamp(p.x, 0.0, e);
        p.y = std::clamp(p.y, 0.0, e);
        p.num_returns = rng.unit() < 0.15 ? 1 : static_cast<std::uint8_t>(2 + (rng.next() % 3));
      }
      p.x += jitter(rng);
      p.y += jitter(rng);
      p.z += jitter(rng);
      p.class_label = ObjectClass::vegetation;
      p.region_label = region_at(cfg, layout, p.y);
      pts.push_back(p);
    }
  }

  // Pylons: tapered lattice faces plus a crossarm carrying the conductors.
  const auto n_per_pylon = static_cast<std::size_t>(std::llround(cfg.pylon_height * 12.0));
  const double arm = layout.conductor_offset + 0.3;
  for (double px : layout.pylon_x) {
    const double base = synthetic_ground(px, c);
    const double height = cfg.pylon_height - base;
    for (std::size_t i = 0; i < n_per_pylon; ++i) {
      PointRecord p;
      if (i % 5 == 4) {
        p.x = px + rng.uniform(-0.3, 0.3);
        p.y = c + rng.uniform(-arm, arm);
        p.z = cfg.pylon_height + rng.uniform(-0.6, 0.0);
      } else {
        const double h = rng.uniform(0.0, height);
        const double w = layout.pylon_half_width * (1.0 - 0.6 * h / height);
        const double s = rng.uniform(-w, w);
        switch (rng.next() % 4) {
          case 0: p.x = px - w; p.y = c + s; break;
          case 1: p.x = px + w; p.y = c + s; break;
          case 2: p.x = px + s; p.y = c - w; break;
          default: p.x = px + s; p.y = c + w; break;
        }
        p.z = base + h;
      }
      p.x += jitter(rng);
      p.y += jitter(rng);
      p.z += jitter(rng);
      p.num_returns = rng.unit() < 0.7 ? 1 : 2;
      p.class_label = ObjectClass::pylon;
      p.region_label = Region::corridor;
      pts.push_back(p);
    }
  }

  // Conductors: parabolic sag between consecutive pylon tops.
  const double offsets[3] = {-layout.conductor_offset, 0.0, layout.conductor_offset};
  for (std::size_t k = 0; k + 1 < layout.pylon_x.size(); ++k) {
    const double xa = layout.pylon_x[k];
    const auto n_wire = static_cast<std::size_t>(std::llround(cfg.pylon_spacing * 4.0));
    for (double off : offsets) {
      for (std::size_t i = 0; i < n_wire; ++i) {
        const double t = rng.unit();
        PointRecord p;
        p.x = xa + t * cfg.pylon_spacing + jitter(rng);
        p.y = c + off + jitter(rng);
        p.z = cfg.pylon_height - 4.0 * cfg.catenary_sag * t * (1.0 - t) + jitter(rng);
        p.num_returns = 1;
        p.class_label = ObjectClass::powerline;
        p.region_label = Region::corridor;
        pts.push_back(p);
      }
    }
  }

  // Sparse airborne returns (birds, multipath) labeled background.
  if (!pts.empty()) {
    const std::size_t n_bg = std::max<std::size_t>(3, pts.size() / 200);
    for (std::size_t i = 0; i < n_bg; ++i) {
      PointRecord p;
      p.x = rng.uniform(0.0, e);
      p.y = rng.uniform(0.0, e);
      p.z = synthetic_ground(p.x, p.y) + rng.uniform(3.0, cfg.pylon_height - 2.0);
      p.num_returns = 1;
      p.class_label = ObjectClass::background;
      p.region_label = Region::none;
      pts.push_back(p);
    }
  }

  Scene s;
  s.scene_id = std::move(scene_id);
  s.bounds = compute_bounds(pts);
  s.points = std::move(pts);
  return s;
}

std::vector<Scene> split_scene(const Scene& scene, double tile_xy) {
  if (!(tile_xy > 0.0)) throw ConfigError("tile_xy must be > 0");
  const Bounds& b = scene.bounds;
  const auto count = [&](int axis) {
    return std::max<long>(1, static_cast<long>(std::ceil(b.extent(axis) / tile_xy)));
  };
  const long ntx = count(0);
  const long nty = count(1);
  std::map<std::pair<long, long>, std::vector<PointRecord>> bins;
  for (const auto& p : scene.points) {
    const long ix = std::clamp(static_cast<long>(std::floor((p.x - b.min[0]) / tile_xy)), 0L, ntx - 1);
    const long iy = std::clamp(static_cast<long>(std::floor((p.y - b.min[1]) / tile_xy)), 0L, nty - 1);
    bins[{ix, iy}].push_back(p);
  }
  std::vector<Scene> tiles;
  tiles.reserve(bins.size());
  for (auto& [key, pts] : bins) {
    Scene t;
    t.scene_id = scene.scene_id + "_" + std::to_string(key.first) + "_" + std::to_string(key.second);
    if (ntx == 1 && nty == 1) {
      t.bounds = b;
      t.scene_id = scene.scene_id;
    } else {
      t.bounds.min = {b.min[0] + key.first * tile_xy, b.min[1] + key.second * tile_xy, b.min[2]};
      // ntx * tile_xy >= extent, so points clamped into the last cell stay inside it.
      t.bounds.max = {t.bounds.min[0] + tile_xy, t.bounds.min[1] + tile_xy, b.max[2]};
    }
    t.points = std::move(pts);
    tiles.push_back(std::move(t));
  }
  return tiles;
}

}  // namespace sunet
