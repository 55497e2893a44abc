#include "sunet/sunet3d.hpp"

#include <sstream>

#include "sunet/errors.hpp"
#include "sunet/point_cloud.hpp"

namespace sunet {

void SUNet3DConfig::validate() const {
  if (num_classes != kNumClasses) throw ConfigError("num_classes must be 5");
  if (levels < 1) throw ConfigError("levels must be >= 1");
  const int div = 1 << (levels - 1);
  for (int d : tile_dims) {
    if (d <= 0 || d % div) throw ConfigError("tile dims must be divisible by " + std::to_string(div));
  }
  if (in_channels < 1 || base_channels < 1) throw ConfigError("channel counts must be positive");
}

UNetConfig SUNet3DConfig::unet() const {
  UNetConfig u;
  u.spatial_rank = 3;
  u.input_dims = {tile_dims[0], tile_dims[1], tile_dims[2]};
  u.in_channels = in_channels;
  u.levels = levels;
  u.base_channels = base_channels;
  u.out_channels = num_classes;
  u.use_mfa = use_mfa;
  u.use_fs = use_fs;
  return u;
}

std::string SUNet3DConfig::canonical() const {
  std::ostringstream os;
  os << "model=sunet3d\n"
     << "tile_dims=" << tile_dims[0] << "," << tile_dims[1] << "," << tile_dims[2] << "\n"
     << "in_channels=" << in_channels << "\n"
     << "levels=" << levels << "\n"
     << "base_channels=" << base_channels << "\n"
     << "num_classes=" << num_classes << "\n"
     << "use_mfa=" << use_mfa << "\n"
     << "use_fs=" << use_fs << "\n";
  return os.str();
}

SUNet3D::SUNet3D(const SUNet3DConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)), store_(seed), net_("sunet3d", cfg_.unet(), store_) {}

}  // namespace sunet
