#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sunet/bev2d.hpp"
#include "sunet/fusion.hpp"
#include "sunet/metrics.hpp"
#include "sunet/projection.hpp"
#include "sunet/sunet3d.hpp"

namespace sunet {

enum class LossKind { wce, hlc };

std::string_view to_string(LossKind k);
LossKind loss_from_string(std::string_view s);

struct RunConfig {
  std::vector<FeatureChannel> feature_spec{FeatureChannel::occupancy, FeatureChannel::abs_elev,
                                           FeatureChannel::rel_elev, FeatureChannel::num_returns};
  LossKind loss = LossKind::hlc;
  bool use_mfa = true;
  bool use_fs = false;
  int epochs = 20;
  /// Trailing epochs trained with recalibrated, frozen batch-norm statistics.
  int frozen_bn_epochs = 0;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  std::array<int, 3> tile_dims{16, 16, 64};
  double voxel_size = 1.0;
  int levels = 4;
  int base_channels = 8;
  int bev_base_channels = 8;
  double w_parent = 10.0;
  double w_child = 8.0;

  void validate() const;
  SUNet3DConfig model_config() const;
  Bev2DConfig bev_config() const;
  HierarchyTable hierarchy() const;
  /// Everything a checkpoint must agree on: model shape, features and grid geometry.
  std::string canonical() const;
};

/// Voxel grid placement for a scene: anchored at the bounds minimum, XY padded
/// up to whole tiles, depth fixed to the tile depth.
struct SceneGeometry {
  std::array<double, 3> origin{};
  GridDims dims;
  int tiles_x = 0;
  int tiles_y = 0;
};

SceneGeometry scene_geometry(const Scene& scene, const RunConfig& run);

struct TileData {
  int tx = 0;
  int ty = 0;
  Tensor input;                       // (W_t, H_t, D, F)
  std::vector<ObjectClass> labels;    // per tile voxel
  std::vector<Region> regions;        // per tile voxel
  std::vector<std::uint32_t> occupancy;
  std::size_t occupied = 0;
  Tensor bev_input;                   // (W_t, H_t, 2)
  std::vector<Region> bev_regions;    // per tile pixel
  Tensor region_logits;               // (W_t, H_t, 3) from the frozen BEV network, when attached
};

struct PreparedScene {
  Scene scene;
  SceneGeometry geometry;
  VoxelGrid grid;
  BevGrid bev;
  std::vector<TileData> tiles;  // x-major order
};

/// Voxelizes and tiles a scene. The elevation context uses
/// max(z_max_global, scene maximum) so scenes above the training range stay valid.
PreparedScene prepare_scene(const Scene& scene, const RunConfig& run, double z_max_global);

/// Caches eval-mode region logits of every tile.
void attach_region_logits(PreparedScene& scene, Bev2D& bev);

/// Eval-mode voxel predictions over the whole grid (argmax, ties to the lower class).
std::vector<ObjectClass> predict_voxels(SUNet3D& model, const PreparedScene& scene);

/// Fraction of occupied voxels whose eval-mode prediction equals the voxel label.
double voxel_accuracy(SUNet3D& model, const std::vector<PreparedScene>& scenes);

/// Median-frequency class weights capped at 10; absent classes get 1.
std::vector<double> median_frequency_weights(std::span<const std::size_t> counts);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_f1 = 0.0;
  double train_accuracy = -1.0;  // set when tracked
};

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Compute occupied-voxel training accuracy every `accuracy_every` epochs.
  bool track_train_accuracy = false;
  int accuracy_every = 1;
  /// Stop once tracked training accuracy reaches this value; 0 disables.
  double stop_at_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
  double z_max_global = 0.0;
};

/// Trains `model` one tile per step. With loss=hlc `bev` must be a trained
/// region network; it stays frozen. On return the model holds the parameters of
/// the epoch with the best validation macro-F1 (the last epoch without validation scenes).
TrainResult train_3d(SUNet3D& model, Bev2D* bev, const RunConfig& run, const std::vector<Scene>& train_scenes,
                     const std::vector<Scene>& val_scenes, const TrainOptions& opts = {});

/// Per-point predictions for a scene.
std::vector<ObjectClass> infer(SUNet3D& model, const RunConfig& run, double z_max_global, const Scene& scene);

/// Point-level metrics pooled over scenes.
MetricsReport evaluate_scenes(SUNet3D& model, const RunConfig& run, double z_max_global,
                              const std::vector<Scene>& scenes);

/// Trailing 12% of the scenes (at least one when there are two or more) form the validation split.
std::size_t validation_count(std::size_t n);

void save_model(const std::filesystem::path& path, const SUNet3D& model, const RunConfig& run, double z_max_global);
/// Loads parameters into `model`; throws ArtifactMismatch when the checkpoint was
/// written for a different configuration. Returns z_max_global.
double load_model(const std::filesystem::path& path, SUNet3D& model, const RunConfig& run);

void save_bev(const std::filesystem::path& path, const Bev2D& model);
void load_bev(const std::filesystem::path& path, Bev2D& model);

/// BEV tiles of the scenes with the run's grid placement, for region pretraining.
std::vector<BevGrid> bev_tiles(const std::vector<Scene>& scenes, const RunConfig& run);

struct AblationRow {
  std::string name;
  RunConfig run;
  MetricsReport metrics;
  TrainResult train;
};

/// Trains and evaluates every config on the same split. HLC rows share one
/// region network pretrained for `bev_epochs` epochs.
std::vector<AblationRow> run_ablation(const std::vector<std::pair<std::string, RunConfig>>& grid,
                                      const std::vector<Scene>& scenes, int bev_epochs);

/// Rows of config name plus P/R/F1 for the four foreground classes.
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

/// The feature, loss and module axes around a base config.
std::vector<std::pair<std::string, RunConfig>> default_ablation_grid(const RunConfig& base);

}  // namespace sunet
