#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "sunet/diff/params.hpp"
#include "sunet/unet.hpp"

namespace sunet {

struct SUNet3DConfig {
  std::array<int, 3> tile_dims{16, 16, 64};
  int in_channels = 4;
  int levels = 4;
  int base_channels = 32;
  int num_classes = 5;
  bool use_mfa = true;
  bool use_fs = false;

  void validate() const;
  UNetConfig unet() const;
  /// Canonical "key=value" lines; hashed into checkpoints.
  std::string canonical() const;
};

/// 3D multi-resolution attention encoder-decoder over (W_t, H_t, D, F) tiles,
/// producing (W_t, H_t, D, 5) pre-softmax class logits.
class SUNet3D {
 public:
  SUNet3D(const SUNet3DConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& tile, BnMode mode, LevelMaps* maps = nullptr) { return net_.forward(tile, mode, maps); }

  const SUNet3DConfig& config() const { return cfg_; }
  diff::ParamStore& params() { return store_; }
  const diff::ParamStore& params() const { return store_; }
  AttentionUNet& net() { return net_; }

 private:
  SUNet3DConfig cfg_;
  diff::ParamStore store_;
  AttentionUNet net_;
};

}  // namespace sunet
