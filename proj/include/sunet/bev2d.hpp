#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sunet/diff/params.hpp"
#include "sunet/projection.hpp"
#include "sunet/unet.hpp"

namespace sunet {

struct Bev2DConfig {
  std::array<int, 2> dims{64, 64};
  int in_channels = 2;
  int num_regions = 3;
  int levels = 4;
  int base_channels = 8;

  void validate() const;
  UNetConfig unet() const;
  std::string canonical() const;
};

/// 2D attention encoder-decoder mapping a (W, H, 2) BEV to (W, H, 3) region logits
/// over {none, corridor, non_corridor}.
class Bev2D {
 public:
  Bev2D(const Bev2DConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& bev, BnMode mode) { return net_.forward(bev, mode); }

  const Bev2DConfig& config() const { return cfg_; }
  diff::ParamStore& params() { return store_; }
  const diff::ParamStore& params() const { return store_; }
  AttentionUNet& net() { return net_; }

 private:
  Bev2DConfig cfg_;
  diff::ParamStore store_;
  AttentionUNet net_;
};

/// (W, H, 2) input tensor of a BEV grid.
Tensor bev_tensor(const BevGrid& bev);

/// Element of the flip/rotation group acting on grid axes: optional x and y
/// flips followed by `quarter_turns` counter-clockwise 90° rotations.
struct GridTransform {
  bool flip_x = false;
  bool flip_y = false;
  int quarter_turns = 0;
};

/// Applies `t` to features and region labels together. Odd quarter turns need a square grid.
BevGrid transform_bev(const BevGrid& bev, const GridTransform& t);

/// Median-frequency class weights over the region labels of a dataset (capped at 10).
std::vector<double> region_class_weights(const std::vector<BevGrid>& dataset);

struct Pretrain2DOptions {
  int epochs = 100;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool augment = true;
  /// The last `frozen_bn_epochs` epochs normalize with recalibrated running
  /// statistics (eval-mode batch norm) so training matches inference.
  int frozen_bn_epochs = 0;
  /// Called after each epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
  /// Stop once pixel accuracy on the (unaugmented) training set reaches this value; 0 disables.
  double stop_at_accuracy = 0.0;
  int accuracy_every = 10;
};

struct Pretrain2DResult {
  std::vector<double> epoch_loss;
  double final_accuracy = 0.0;
  int epochs_run = 0;
};

/// Minimizes class-weighted cross-entropy over every pixel, one sample per step.
Pretrain2DResult pretrain_2d(Bev2D& model, const std::vector<BevGrid>& dataset, const Pretrain2DOptions& opts);

/// Fraction of pixels whose eval-mode argmax equals the region label.
double pixel_accuracy(Bev2D& model, const std::vector<BevGrid>& dataset);

}  // namespace sunet
