#include "sunet/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "sunet/diff/checkpoint.hpp"
#include "sunet/diff/ops.hpp"
#include "sunet/elevation.hpp"
#include "sunet/errors.hpp"
#include "sunet/rng.hpp"

namespace sunet {

std::string_view to_string(LossKind k) { return k == LossKind::wce ? "wce" : "hlc"; }

LossKind loss_from_string(std::string_view s) {
  if (s == "wce") return LossKind::wce;
  if (s == "hlc") return LossKind::hlc;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected wce or hlc)");
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::validate() const {
  if (feature_spec.empty()) throw ConfigError("feature_spec must not be empty");
  for (std::size_t i = 0; i < feature_spec.size(); ++i)
    for (std::size_t j = i + 1; j < feature_spec.size(); ++j)
      if (feature_spec[i] == feature_spec[j]) throw ConfigError("feature_spec lists a channel twice");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (frozen_bn_epochs < 0 || frozen_bn_epochs > epochs) throw ConfigError("frozen_bn_epochs must be within [0, epochs]");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(voxel_size > 0.0)) throw ConfigError("voxel_size must be > 0");
  if (bev_base_channels < 1) throw ConfigError("bev_base_channels must be >= 1");
  model_config().validate();
  bev_config().validate();
  hierarchy().validate();
}

SUNet3DConfig RunConfig::model_config() const {
  SUNet3DConfig c;
  c.tile_dims = tile_dims;
  c.in_channels = static_cast<int>(feature_spec.size());
  c.levels = levels;
  c.base_channels = base_channels;
  c.use_mfa = use_mfa;
  c.use_fs = use_fs;
  return c;
}

Bev2DConfig RunConfig::bev_config() const {
  Bev2DConfig c;
  c.dims = {tile_dims[0], tile_dims[1]};
  c.levels = levels;
  c.base_channels = bev_base_channels;
  return c;
}

HierarchyTable RunConfig::hierarchy() const { return HierarchyTable::utility_corridor(w_parent, w_child); }

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << model_config().canonical() << "features=";
  for (std::size_t i = 0; i < feature_spec.size(); ++i) os << (i ? "," : "") << to_string(feature_spec[i]);
  os << "\nvoxel_size=" << shortest(voxel_size) << "\n";
  return os.str();
}

SceneGeometry scene_geometry(const Scene& scene, const RunConfig& run) {
  if (scene.points.empty()) throw Error("scene '" + scene.scene_id + "' has no points");
  const Bounds b = compute_bounds(scene.points);
  SceneGeometry g;
  g.origin = b.min;
  auto tiles_along = [&](int axis, int tile) {
    const int needed = static_cast<int>(std::floor(b.extent(axis) / run.voxel_size)) + 1;
    return std::max(1, (needed + tile - 1) / tile);
  };
  g.tiles_x = tiles_along(0, run.tile_dims[0]);
  g.tiles_y = tiles_along(1, run.tile_dims[1]);
  g.dims = {g.tiles_x * run.tile_dims[0], g.tiles_y * run.tile_dims[1], run.tile_dims[2]};
  return g;
}

PreparedScene prepare_scene(const Scene& scene, const RunConfig& run, double z_max_global) {
  PreparedScene ps;
  ps.scene = scene;
  ps.geometry = scene_geometry(scene, run);
  const SceneGeometry& geo = ps.geometry;
  const ColumnGeometry columns{geo.origin[0], geo.origin[1], geo.dims.w, geo.dims.h, run.voxel_size};
  double scene_max = scene.points.front().z;
  for (const auto& p : scene.points) scene_max = std::max(scene_max, p.z);
  const ElevationContext ctx = build_context(scene, columns, std::max(z_max_global, scene_max));
  ps.grid = voxelize(scene, geo.origin, geo.dims, run.voxel_size, run.feature_spec, &ctx);
  ps.bev = project_bev(scene, {geo.origin[0], geo.origin[1]}, {geo.dims.w, geo.dims.h}, run.voxel_size);

  const int wt = run.tile_dims[0], ht = run.tile_dims[1], d = run.tile_dims[2];
  const int f = static_cast<int>(run.feature_spec.size());
  const VoxelGrid& g = ps.grid;
  for (int tx = 0; tx < geo.tiles_x; ++tx) {
    for (int ty = 0; ty < geo.tiles_y; ++ty) {
      TileData t;
      t.tx = tx;
      t.ty = ty;
      const std::size_t nvox = static_cast<std::size_t>(wt) * ht * d;
      std::vector<double> in(nvox * f);
      std::vector<double> bev_in(static_cast<std::size_t>(wt) * ht * 2);
      t.labels.resize(nvox);
      t.regions.resize(nvox);
      t.occupancy.resize(nvox);
      t.bev_regions.resize(static_cast<std::size_t>(wt) * ht);
      for (int a = 0; a < wt; ++a) {
        for (int b = 0; b < ht; ++b) {
          const int i = tx * wt + a, j = ty * ht + b;
          const std::size_t pix = static_cast<std::size_t>(a) * ht + b;
          const std::size_t src_pix = ps.bev.flat(i, j);
          bev_in[pix * 2] = ps.bev.features[src_pix * 2];
          bev_in[pix * 2 + 1] = ps.bev.features[src_pix * 2 + 1];
          t.bev_regions[pix] = ps.bev.region_labels[src_pix];
          for (int k = 0; k < d; ++k) {
            const std::size_t v = pix * d + k;
            const std::size_t src = g.flat(i, j, k);
            std::copy_n(g.features.begin() + static_cast<std::ptrdiff_t>(src * f), f,
                        in.begin() + static_cast<std::ptrdiff_t>(v * f));
            t.labels[v] = g.labels[src];
            t.regions[v] = g.region_labels[src];
            t.occupancy[v] = g.occupancy[src];
            t.occupied += g.occupancy[src] > 0;
          }
        }
      }
      t.input = Tensor({wt, ht, d, f}, std::move(in));
      t.bev_input = Tensor({wt, ht, 2}, std::move(bev_in));
      ps.tiles.push_back(std::move(t));
    }
  }
  return ps;
}

void attach_region_logits(PreparedScene& scene, Bev2D& bev) {
  diff::NoGradGuard guard;
  for (auto& t : scene.tiles) t.region_logits = bev.forward(t.bev_input, BnMode::eval).detach();
}

std::vector<ObjectClass> predict_voxels(SUNet3D& model, const PreparedScene& scene) {
  diff::NoGradGuard guard;
  const auto& td = model.config().tile_dims;
  const VoxelGrid& g = scene.grid;
  std::vector<ObjectClass> out(g.dims.voxels(), ObjectClass::background);
  for (const auto& t : scene.tiles) {
    if (t.input.shape() != diff::Shape{td[0], td[1], td[2], model.config().in_channels}) {
      throw ShapeError("tile shape does not match the model");
    }
    const std::vector<int> pred = diff::argmax_last(model.forward(t.input, BnMode::eval));
    for (int a = 0; a < td[0]; ++a)
      for (int b = 0; b < td[1]; ++b)
        for (int k = 0; k < td[2]; ++k) {
          const std::size_t v = (static_cast<std::size_t>(a) * td[1] + b) * td[2] + k;
          out[g.flat(t.tx * td[0] + a, t.ty * td[1] + b, k)] = static_cast<ObjectClass>(pred[v]);
        }
  }
  return out;
}

double voxel_accuracy(SUNet3D& model, const std::vector<PreparedScene>& scenes) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : scenes) {
    const auto pred = predict_voxels(model, s);
    for (std::size_t v = 0; v < pred.size(); ++v) {
      if (s.grid.occupancy[v] == 0) continue;
      correct += pred[v] == s.grid.labels[v];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<double> median_frequency_weights(std::span<const std::size_t> counts) {
  std::vector<double> w(counts.size(), 1.0);
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::vector<double> freq;
  for (auto c : counts)
    if (c) freq.push_back(static_cast<double>(c) / total);
  if (freq.empty()) return w;
  std::sort(freq.begin(), freq.end());
  const std::size_t n = freq.size();
  const double median = n % 2 ? freq[n / 2] : 0.5 * (freq[n / 2 - 1] + freq[n / 2]);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k]) w[k] = std::min(10.0, median / (static_cast<double>(counts[k]) / total));
  }
  return w;
}

namespace {

std::vector<std::vector<double>> snapshot(const diff::ParamStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& p : store.params()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(diff::ParamStore& store, const std::vector<std::vector<double>>& snap) {
  auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), params[i].tensor.values().begin());
}

MetricsReport evaluate_prepared(SUNet3D& model, const std::vector<PreparedScene>& scenes) {
  MetricsReport r;
  for (const auto& s : scenes) {
    const auto pred = backproject_labels(s.grid, predict_voxels(model, s), s.scene);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ++r.confusion[static_cast<int>(s.scene.points[i].class_label)][static_cast<int>(pred[i])];
    }
  }
  finalize_metrics(r);
  return r;
}

}  // namespace

TrainResult train_3d(SUNet3D& model, Bev2D* bev, const RunConfig& run, const std::vector<Scene>& train_scenes,
                     const std::vector<Scene>& val_scenes, const TrainOptions& opts) {
  run.validate();
  if (model.config().canonical() != run.model_config().canonical()) {
    throw ConfigError("train_3d: model was built for a different configuration");
  }
  if (train_scenes.empty()) throw Error("train_3d: no training scenes");
  if (run.loss == LossKind::hlc) {
    if (!bev) throw ConfigError("hlc loss needs a pretrained BEV region network");
    if (bev->config().canonical() != run.bev_config().canonical()) {
      throw ArtifactMismatch("BEV network does not match the run's tile geometry");
    }
  }

  TrainResult result;
  result.z_max_global = dataset_max_elevation(train_scenes);
  std::vector<PreparedScene> train, val;
  for (const auto& s : train_scenes) {
    train.push_back(prepare_scene(s, run, result.z_max_global));
    if (run.loss == LossKind::hlc) attach_region_logits(train.back(), *bev);
  }
  for (const auto& s : val_scenes) val.push_back(prepare_scene(s, run, result.z_max_global));

  std::array<std::size_t, kNumClasses> counts{};
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  for (std::size_t si = 0; si < train.size(); ++si) {
    for (std::size_t ti = 0; ti < train[si].tiles.size(); ++ti) {
      const TileData& t = train[si].tiles[ti];
      if (t.occupied == 0) continue;
      steps.emplace_back(si, ti);
      for (std::size_t v = 0; v < t.labels.size(); ++v)
        if (t.occupancy[v]) ++counts[static_cast<int>(t.labels[v])];
    }
  }
  if (steps.empty()) throw Error("train_3d: no occupied tiles");
  const std::vector<double> weights = median_frequency_weights(counts);
  const HierarchyTable table = run.hierarchy();
  const int depth = run.tile_dims[2];

  diff::Adam adam(model.params().trainable(), {.lr = run.lr});
  Rng rng(run.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::vector<double>> best;
  double best_f1 = -1.0;

  const int freeze_from = run.epochs - run.frozen_bn_epochs + 1;
  for (int epoch = 1; epoch <= run.epochs; ++epoch) {
    if (epoch == freeze_from) {
      std::vector<Tensor> inputs;
      for (const auto& [si, ti] : steps) inputs.push_back(train[si].tiles[ti].input);
      model.net().recalibrate_batch_norm(inputs);
    }
    const BnMode mode = epoch >= freeze_from ? BnMode::eval : BnMode::train;
    for (std::size_t i = steps.size(); i > 1; --i) std::swap(steps[i - 1], steps[rng.index(i)]);
    double total = 0.0;
    for (const auto& [si, ti] : steps) {
      const TileData& t = train[si].tiles[ti];
      Tensor loss;
      try {
        const Tensor logits = model.forward(t.input, mode);
        if (run.loss == LossKind::hlc) {
          loss = hlc_loss(logits, calibrate_logits(t.region_logits, depth), t.labels, t.regions, t.occupancy, table);
        } else {
          loss = wce_loss(logits, t.labels, weights, t.occupancy);
        }
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        diff::backward(loss);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", scene '" +
                           train[si].scene.scene_id + "' tile (" + std::to_string(t.tx) + "," + std::to_string(t.ty) +
                           ")");
      }
      adam.step();
      total += loss.item();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(steps.size());
    if (!val.empty()) rec.val_f1 = evaluate_prepared(model, val).macro_f1();
    if (opts.track_train_accuracy && (epoch % std::max(1, opts.accuracy_every) == 0 || epoch == run.epochs)) {
      rec.train_accuracy = voxel_accuracy(model, train);
    }
    const bool better = val.empty() || rec.val_f1 > best_f1;
    if (better) {
      best_f1 = rec.val_f1;
      result.best_epoch = epoch;
      result.best_val_f1 = rec.val_f1;
      if (!val.empty()) best = snapshot(model.params());
    }
    result.log.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.stop_at_accuracy > 0.0 && rec.train_accuracy >= opts.stop_at_accuracy) break;
  }
  if (!best.empty()) restore(model.params(), best);
  return result;
}

std::vector<ObjectClass> infer(SUNet3D& model, const RunConfig& run, double z_max_global, const Scene& scene) {
  const PreparedScene ps = prepare_scene(scene, run, z_max_global);
  return backproject_labels(ps.grid, predict_voxels(model, ps), ps.scene);
}

MetricsReport evaluate_scenes(SUNet3D& model, const RunConfig& run, double z_max_global,
                              const std::vector<Scene>& scenes) {
  std::vector<PreparedScene> prepared;
  for (const auto& s : scenes) prepared.push_back(prepare_scene(s, run, z_max_global));
  return evaluate_prepared(model, prepared);
}

std::size_t validation_count(std::size_t n) {
  if (n < 2) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.12 * static_cast<double>(n))));
}

void save_model(const std::filesystem::path& path, const SUNet3D& model, const RunConfig& run, double z_max_global) {
  if (model.config().canonical() != run.model_config().canonical()) {
    throw ConfigError("save_model: model does not match the run configuration");
  }
  diff::CheckpointHeader h;
  h.z_max_global = z_max_global;
  h.config_text = run.canonical();
  h.config_hash = diff::fnv1a(h.config_text);
  diff::save_checkpoint(path, h, model.params());
}

double load_model(const std::filesystem::path& path, SUNet3D& model, const RunConfig& run) {
  const diff::Checkpoint ck = diff::load_checkpoint(path);
  const std::string expected = run.canonical();
  if (ck.header.config_hash != diff::fnv1a(expected)) {
    throw ArtifactMismatch("checkpoint " + path.string() + " was trained with a different configuration:\n" +
                           ck.header.config_text + "expected:\n" + expected);
  }
  model.params().copy_values_from(ck.tensors);
  return ck.header.z_max_global;
}

void save_bev(const std::filesystem::path& path, const Bev2D& model) {
  diff::CheckpointHeader h;
  h.config_text = model.config().canonical();
  h.config_hash = diff::fnv1a(h.config_text);
  diff::save_checkpoint(path, h, model.params());
}

void load_bev(const std::filesystem::path& path, Bev2D& model) {
  const diff::Checkpoint ck = diff::load_checkpoint(path);
  const std::string expected = model.config().canonical();
  if (ck.header.config_hash != diff::fnv1a(expected)) {
    throw ArtifactMismatch("BEV checkpoint " + path.string() + " does not match:\n" + ck.header.config_text +
                           "expected:\n" + expected);
  }
  model.params().copy_values_from(ck.tensors);
}

std::vector<BevGrid> bev_tiles(const std::vector<Scene>& scenes, const RunConfig& run) {
  std::vector<BevGrid> out;
  const int wt = run.tile_dims[0], ht = run.tile_dims[1];
  for (const auto& s : scenes) {
    const SceneGeometry geo = scene_geometry(s, run);
    const BevGrid full = project_bev(s, {geo.origin[0], geo.origin[1]}, {geo.dims.w, geo.dims.h}, run.voxel_size);
    for (int tx = 0; tx < geo.tiles_x; ++tx) {
      for (int ty = 0; ty < geo.tiles_y; ++ty) {
        BevGrid t;
        t.w = wt;
        t.h = ht;
        t.origin_x = full.origin_x + tx * wt * run.voxel_size;
        t.origin_y = full.origin_y + ty * ht * run.voxel_size;
        t.pixel_size = run.voxel_size;
        t.features.resize(static_cast<std::size_t>(wt) * ht * 2);
        t.region_labels.resize(static_cast<std::size_t>(wt) * ht);
        double count = 0.0;
        for (int a = 0; a < wt; ++a)
          for (int b = 0; b < ht; ++b) {
            const std::size_t src = full.flat(tx * wt + a, ty * ht + b);
            const std::size_t dst = t.flat(a, b);
            t.features[dst * 2] = full.features[src * 2];
            t.features[dst * 2 + 1] = full.features[src * 2 + 1];
            t.region_labels[dst] = full.region_labels[src];
            count += full.features[src * 2 + 1];
          }
        if (count > 0.0) out.push_back(std::move(t));
      }
    }
  }
  return out;
}

std::vector<AblationRow> run_ablation(const std::vector<std::pair<std::string, RunConfig>>& grid,
                                      const std::vector<Scene>& scenes, int bev_epochs) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  for (const auto& [name, run] : grid) run.validate();
  const std::size_t nval = validation_count(scenes.size());
  if (nval == 0) throw Error("ablation needs at least two scenes");
  const std::vector<Scene> train(scenes.begin(), scenes.end() - static_cast<std::ptrdiff_t>(nval));
  const std::vector<Scene> held(scenes.end() - static_cast<std::ptrdiff_t>(nval), scenes.end());

  std::map<std::string, std::unique_ptr<Bev2D>> bevs;
  std::map<std::string, AblationRow> done;
  std::vector<AblationRow> rows;
  for (const auto& [name, run] : grid) {
    std::ostringstream key;
    key << run.canonical() << "loss=" << to_string(run.loss) << "\nepochs=" << run.epochs << "\nseed=" << run.seed
        << "\nfrozen_bn=" << run.frozen_bn_epochs << "\nlr=" << shortest(run.lr) << "\nw=" << shortest(run.w_parent) << "," << shortest(run.w_child) << "\n";
    auto it = done.find(key.str());
    if (it == done.end()) {
      Bev2D* bev = nullptr;
      if (run.loss == LossKind::hlc) {
        const std::string bkey = run.bev_config().canonical() + "seed=" + std::to_string(run.seed);
        auto& slot = bevs[bkey];
        if (!slot) {
          slot = std::make_unique<Bev2D>(run.bev_config(), run.seed);
          Pretrain2DOptions po;
          po.epochs = bev_epochs;
          po.lr = run.lr;
          po.seed = run.seed;
          po.frozen_bn_epochs = bev_epochs / 4;
          pretrain_2d(*slot, bev_tiles(train, run), po);
        }
        bev = slot.get();
      }
      AblationRow row;
      row.run = run;
      SUNet3D model(run.model_config(), run.seed);
      row.train = train_3d(model, bev, run, train, {});
      row.metrics = evaluate_scenes(model, run, row.train.z_max_global, held);
      it = done.emplace(key.str(), std::move(row)).first;
    }
    AblationRow row = it->second;
    row.name = name;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "config";
  for (ObjectClass c : kReportClasses) {
    const std::string n(to_string(c));
    os << ',' << n << "_precision," << n << "_recall," << n << "_f1";
  }
  os << '\n';
  char buf[64];
  for (const auto& r : rows) {
    os << r.name;
    for (ObjectClass c : kReportClasses) {
      const auto& m = r.metrics.per_class[static_cast<int>(c)];
      for (double v : {m.precision, m.recall, m.f1}) {
        std::snprintf(buf, sizeof buf, ",%.6f", v);
        os << buf;
      }
    }
    os << '\n';
  }
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "config");
  os << buf;
  for (ObjectClass c : kReportClasses) {
    std::snprintf(buf, sizeof buf, " | %-22s", std::string(to_string(c)).c_str());
    os << buf;
  }
  os << '\n';
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "");
  os << buf;
  for (std::size_t i = 0; i < kReportClasses.size(); ++i) os << " |      P      R     F1";
  os << '\n';
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), r.name.c_str());
    os << buf;
    for (ObjectClass c : kReportClasses) {
      const auto& m = r.metrics.per_class[static_cast<int>(c)];
      std::snprintf(buf, sizeof buf, " | %6.2f %6.2f %6.2f", m.precision, m.recall, m.f1);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::pair<std::string, RunConfig>> default_ablation_grid(const RunConfig& base) {
  using F = FeatureChannel;
  std::vector<std::pair<std::string, RunConfig>> g;
  RunConfig r = base;
  r.feature_spec = {F::occupancy, F::abs_elev, F::num_returns};
  g.emplace_back("features:occ+ae+nr", r);
  r.feature_spec = {F::occupancy, F::abs_elev, F::rel_elev, F::num_returns};
  g.emplace_back("features:occ+ae+re+nr", r);
  for (LossKind k : {LossKind::wce, LossKind::hlc}) {
    r = base;
    r.loss = k;
    g.emplace_back("loss:" + std::string(to_string(k)), r);
  }
  for (auto [mfa, fs] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    r = base;
    r.loss = LossKind::wce;
    r.use_mfa = mfa;
    r.use_fs = fs;
    std::string name = "modules:baseline";
    if (mfa || fs) name = std::string("modules:") + (mfa ? "+mfa" : "") + (fs ? "+fs" : "");
    g.emplace_back(name, r);
  }
  return g;
}

}  // namespace sunet
