#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "sunet/point_cloud.hpp"

namespace sunet {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// pylon blue, powerline red, vegetation green, ground dark green, background gray.
Rgb class_color(ObjectClass c);
inline constexpr Rgb kEmptyPixel{0, 0, 0};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;  // row-major, row 0 at the top

  Rgb at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

enum class RenderView { bev, side };
RenderView view_from_string(std::string_view s);

/// Pixel geometry of a rendering: column from x, row from y (bev) or z (side),
/// with the largest y or z on the top row.
struct RenderFrame {
  double origin_u = 0.0;  // x minimum
  double origin_v = 0.0;  // y or z minimum
  double pixel_size = 1.0;
  int width = 0;
  int height = 0;

  /// Column and row of a coordinate pair; always inside the frame for points of the scene.
  std::array<int, 2> pixel_of(double u, double v) const;
};

RenderFrame render_frame(const Scene& scene, RenderView view, double pixel_size);

/// bev: color of the highest point per pixel. side: x-z orthographic view
/// looking along +y, so the point with the smallest y wins. Ties keep the first point.
Image render(const Scene& scene, std::span<const ObjectClass> labels, RenderView view, double pixel_size);

/// Binary P6 pixmap.
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace sunet
