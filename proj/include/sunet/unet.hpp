#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sunet/diff/params.hpp"

namespace sunet {

using diff::BnMode;
using diff::Tensor;

struct UNetConfig {
  int spatial_rank = 3;  // 2 for BEV maps, 3 for voxel grids
  std::vector<int> input_dims;  // spatial dims the network is built for
  int in_channels = 4;
  int levels = 4;
  int base_channels = 32;
  int out_channels = 5;
  bool use_mfa = true;
  bool use_fs = false;
  int fs_hidden = 16;

  int channels_at(int level) const { return base_channels << (level - 1); }
  void validate() const;
};

/// Encoder and decoder feature maps; index 0 holds level 1 (full resolution).
struct LevelMaps {
  std::vector<Tensor> enc;
  std::vector<Tensor> dec;
};

/// conv(3^k) -> batch norm -> relu.
struct ConvBlock {
  Tensor weight, bias, gamma, beta;
  diff::BatchNormStats stats;
  Tensor forward(const Tensor& x, BnMode mode);
};

/// Additive attention gate: alpha = sigmoid(psi(relu(W_skip*skip + up(W_gate*gating)))),
/// output alpha ⊙ skip with alpha broadcast over channels.
struct AttentionGate {
  Tensor skip_w, skip_b, gate_w, gate_b, psi_w, psi_b;
  /// `gating` is at half the spatial resolution of `skip`. `alpha_out` receives (..., 1) coefficients.
  Tensor forward(const Tensor& skip, const Tensor& gating, Tensor* alpha_out = nullptr) const;
};

/// Multi-resolution feature aggregation: upsample every decoder map to full
/// resolution, concatenate channels, 1x1 conv.
struct MfaHead {
  Tensor weight, bias;
  Tensor forward(const LevelMaps& maps) const;
};

/// Residual per-voxel MLP of three 1x1 convs with relu between. The last layer
/// starts at zero, so a fresh module is the identity.
struct FeatureSmoothing {
  Tensor w1, b1, w2, b2, w3, b3;
  Tensor forward(const Tensor& x) const;
  /// Sets the first two layers to identity-padded maps and the third to zero.
  void init_identity();
};

/// U-shaped attention encoder-decoder shared by the 3D and BEV networks.
///
/// Level l (1-based) runs at input/2^(l-1) with base*2^(l-1) channels. Encoder
/// level l applies two conv blocks (after max-pooling for l > 1); the deepest
/// encoder map is also the deepest decoder map. Decoder level l gates E_l with
/// D_(l+1), concatenates the gated skip with upsampled D_(l+1) and applies two
/// conv blocks.
class AttentionUNet {
 public:
  AttentionUNet(std::string prefix, UNetConfig cfg, diff::ParamStore& store);

  Tensor forward(const Tensor& x, BnMode mode, LevelMaps* maps = nullptr);

  /// Replaces every batch-norm running statistic with the plain average of the
  /// per-input batch statistics over `inputs`.
  void recalibrate_batch_norm(std::span<const Tensor> inputs);

  const UNetConfig& config() const { return cfg_; }
  /// Expected (spatial..., channels) of level l encoder/decoder maps.
  diff::Shape level_shape(int level) const;

  AttentionGate& gate(int level) { return gates_.at(level - 1); }
  MfaHead& mfa() { return mfa_; }
  FeatureSmoothing& smoothing() { return fs_; }

 private:
  ConvBlock make_block(diff::ParamStore& store, const std::string& name, int cin, int cout, int k);

  UNetConfig cfg_;
  std::vector<std::array<ConvBlock, 2>> enc_;
  std::vector<std::array<ConvBlock, 2>> dec_;  // index l-1 for decoder level l (l < levels)
  std::vector<AttentionGate> gates_;
  MfaHead mfa_;
  Tensor head_w_, head_b_;
  FeatureSmoothing fs_;
};

}  // namespace sunet
