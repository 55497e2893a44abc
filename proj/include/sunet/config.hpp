#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "sunet/point_cloud.hpp"
#include "sunet/training.hpp"

namespace sunet {

/// Settings for every command, read from an INI-style file:
///
///   [synth]    count, format (csv|bin), extent_xy, pylon_spacing, pylon_height,
///              corridor_half_width, catenary_sag, vegetation_density, ground_density, seed
///   [grid]     voxel_size, tile_dims (w,h,d), features (occ,ae,re,nr)
///   [model]    levels, base_channels, bev_base_channels, use_mfa, use_fs
///   [train]    loss (wce|hlc), epochs, frozen_bn_epochs, lr, seed, w_parent, w_child
///   [train2d]  epochs, frozen_bn_epochs, lr, augment
///   [ablation] bev_epochs
///   [render]   pixel_size
///
/// '#' and ';' start comments. Unknown sections or keys are errors.
struct PipelineConfig {
  SynthConfig synth;
  int synth_count = 3;
  PointFormat synth_format = PointFormat::csv;
  RunConfig run;
  int bev_epochs = 100;
  int bev_frozen_bn_epochs = 25;
  double bev_lr = 1e-3;
  bool bev_augment = true;
  int ablation_bev_epochs = 50;
  double render_pixel_size = 0.25;

  /// Overrides the synthesis and training seeds.
  void set_seed(std::uint64_t seed);
  void validate() const;
  /// Serialized form that parses back to the same config.
  std::string to_text() const;
};

/// `source` names the input in error messages.
PipelineConfig parse_config(std::string_view text, const std::string& source = "config");
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace sunet
