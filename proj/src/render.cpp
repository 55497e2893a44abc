#include "sunet/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "sunet/errors.hpp"

namespace sunet {

Rgb class_color(ObjectClass c) {
  switch (c) {
    case ObjectClass::pylon: return {0, 0, 255};
    case ObjectClass::powerline: return {255, 0, 0};
    case ObjectClass::vegetation: return {0, 200, 0};
    case ObjectClass::ground: return {0, 90, 0};
    case ObjectClass::background: break;
  }
  return {128, 128, 128};
}

RenderView view_from_string(std::string_view s) {
  if (s == "bev") return RenderView::bev;
  if (s == "side") return RenderView::side;
  throw ConfigError("unknown view '" + std::string(s) + "' (expected bev or side)");
}

std::array<int, 2> RenderFrame::pixel_of(double u, double v) const {
  const int col = std::clamp(static_cast<int>(std::floor((u - origin_u) / pixel_size)), 0, width - 1);
  const int up = std::clamp(static_cast<int>(std::floor((v - origin_v) / pixel_size)), 0, height - 1);
  return {col, height - 1 - up};
}

RenderFrame render_frame(const Scene& scene, RenderView view, double pixel_size) {
  if (!(pixel_size > 0.0)) throw ConfigError("pixel size must be > 0");
  if (scene.points.empty()) throw Error("render: empty scene");
  const Bounds b = compute_bounds(scene.points);
  const int vaxis = view == RenderView::bev ? 1 : 2;
  RenderFrame f;
  f.origin_u = b.min[0];
  f.origin_v = b.min[vaxis];
  f.pixel_size = pixel_size;
  f.width = static_cast<int>(std::floor(b.extent(0) / pixel_size)) + 1;
  f.height = static_cast<int>(std::floor(b.extent(vaxis) / pixel_size)) + 1;
  return f;
}

Image render(const Scene& scene, std::span<const ObjectClass> labels, RenderView view, double pixel_size) {
  if (labels.size() != scene.points.size()) throw ShapeError("render: one label per point required");
  const RenderFrame f = render_frame(scene, view, pixel_size);
  Image img;
  img.width = f.width;
  img.height = f.height;
  img.pixels.assign(static_cast<std::size_t>(f.width) * f.height, kEmptyPixel);
  std::vector<std::ptrdiff_t> winner(img.pixels.size(), -1);
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const auto& p = scene.points[i];
    const auto [col, row] = view == RenderView::bev ? f.pixel_of(p.x, p.y) : f.pixel_of(p.x, p.z);
    const std::size_t px = static_cast<std::size_t>(row) * f.width + col;
    const std::ptrdiff_t w = winner[px];
    bool take = w < 0;
    if (!take) {
      const auto& q = scene.points[static_cast<std::size_t>(w)];
      take = view == RenderView::bev ? p.z > q.z : p.y < q.y;
    }
    if (take) winner[px] = static_cast<std::ptrdiff_t>(i);
  }
  for (std::size_t px = 0; px < winner.size(); ++px) {
    if (winner[px] >= 0) img.pixels[px] = class_color(labels[static_cast<std::size_t>(winner[px])]);
  }
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (const Rgb& c : image.pixels) {
    const char px[3] = {static_cast<char>(c.r), static_cast<char>(c.g), static_cast<char>(c.b)};
    out.write(px, 3);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sunet
