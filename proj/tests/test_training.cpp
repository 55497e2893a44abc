#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "sunet/diff/ops.hpp"
#include "sunet/errors.hpp"
#include "sunet/metrics.hpp"
#include "sunet/training.hpp"
#include "oracles.hpp"

using namespace sunet;

namespace {

std::vector<Scene> small_scenes(int n, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) {
    SynthConfig c;
    c.extent_xy = 15.0;
    c.pylon_spacing = 10.0;
    c.pylon_height = 18.0;
    c.corridor_half_width = 4.0;
    c.rng_seed = seed + static_cast<std::uint64_t>(i);
    out.push_back(generate_synthetic_scene(c, "s" + std::to_string(i)));
  }
  return out;
}

RunConfig small_run() {
  RunConfig r;
  r.tile_dims = {16, 16, 32};
  r.base_channels = 4;
  r.bev_base_channels = 4;
  r.loss = LossKind::wce;
  r.epochs = 5;
  return r;
}

}  // namespace

TEST(Metrics, PerfectPrediction) {
  Rng rng(1);
  std::vector<ObjectClass> t(500);
  for (auto& c : t) c = static_cast<ObjectClass>(rng.index(kNumClasses));
  const auto r = evaluate(t, t);
  for (auto c : kReportClasses) {
    EXPECT_EQ(r.per_class[static_cast<int>(c)].precision, 100.0);
    EXPECT_EQ(r.per_class[static_cast<int>(c)].recall, 100.0);
    EXPECT_EQ(r.per_class[static_cast<int>(c)].f1, 100.0);
  }
  EXPECT_EQ(r.accuracy, 100.0);
  EXPECT_EQ(r.macro_f1(), 100.0);
}

TEST(Metrics, WorkedCase) {
  // pylon: TP 8, FP 2, FN 2
  std::vector<ObjectClass> truth, pred;
  for (int i = 0; i < 8; ++i) truth.push_back(ObjectClass::pylon), pred.push_back(ObjectClass::pylon);
  for (int i = 0; i < 2; ++i) truth.push_back(ObjectClass::ground), pred.push_back(ObjectClass::pylon);
  for (int i = 0; i < 2; ++i) truth.push_back(ObjectClass::pylon), pred.push_back(ObjectClass::ground);
  const auto r = evaluate(pred, truth);
  const auto& m = r.per_class[static_cast<int>(ObjectClass::pylon)];
  EXPECT_EQ(m.precision, 80.0);
  EXPECT_EQ(m.recall, 80.0);
  EXPECT_EQ(m.f1, 80.0);
  EXPECT_EQ(r.per_class[static_cast<int>(ObjectClass::vegetation)].f1, 0.0);
}

TEST(Metrics, BruteForceOracle) {
  Rng rng(2);
  for (int n = 0; n < 1000; ++n) {
    const std::size_t len = rng.index(200);
    std::vector<ObjectClass> p(len), t(len);
    const std::size_t span = 1 + rng.index(kNumClasses);
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = static_cast<ObjectClass>(rng.index(span));
      t[i] = static_cast<ObjectClass>(rng.index(span));
    }
    const auto got = evaluate(p, t);
    const auto want = testutil::brute_force_metrics(p, t);
    ASSERT_EQ(got.confusion, want.confusion);
    for (int c = 0; c < kNumClasses; ++c) {
      ASSERT_EQ(got.per_class[c].precision, want.per_class[c].precision);
      ASSERT_EQ(got.per_class[c].recall, want.per_class[c].recall);
      ASSERT_EQ(got.per_class[c].f1, want.per_class[c].f1);
      std::uint64_t row = 0, truth = 0;
      for (int o = 0; o < kNumClasses; ++o) row += got.confusion[c][o];
      for (auto x : t) truth += static_cast<int>(x) == c;
      ASSERT_EQ(row, truth);
    }
    ASSERT_EQ(got.accuracy, want.accuracy);
    ASSERT_EQ(got.total(), len);
  }
}

TEST(Metrics, ErrorsAndCsv) {
  const std::vector<ObjectClass> a{ObjectClass::pylon}, b{ObjectClass::pylon, ObjectClass::ground};
  EXPECT_THROW(evaluate(a, b), ShapeError);
  const std::string csv = metrics_csv(evaluate(b, b));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,precision,recall,f1,support");
  EXPECT_NE(csv.find("pylon,100.000000,100.000000,100.000000,1"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_NE(metrics_table(evaluate(b, b)).find("powerline"), std::string::npos);
}

TEST(Training, MedianFrequencyWeights) {
  const std::vector<std::size_t> counts{10, 20, 40, 0, 80};
  const auto w = median_frequency_weights(counts);
  ASSERT_EQ(w.size(), 5u);
  // frequencies 1/15, 2/15, 4/15, 8/15; median 3/15
  EXPECT_NEAR(w[0], 3.0, 1e-12);
  EXPECT_NEAR(w[1], 1.5, 1e-12);
  EXPECT_NEAR(w[2], 0.75, 1e-12);
  EXPECT_EQ(w[3], 1.0);
  EXPECT_NEAR(w[4], 0.375, 1e-12);
  const auto capped = median_frequency_weights(std::vector<std::size_t>{1, 1000, 1000, 1000, 1000});
  EXPECT_EQ(capped[0], 10.0);
}

TEST(Training, ValidationCount) {
  EXPECT_EQ(validation_count(0), 0u);
  EXPECT_EQ(validation_count(1), 0u);
  EXPECT_EQ(validation_count(2), 1u);
  EXPECT_EQ(validation_count(10), 1u);
  EXPECT_EQ(validation_count(25), 3u);
  EXPECT_EQ(validation_count(100), 12u);
}

TEST(Training, RunConfigValidation) {
  RunConfig r = small_run();
  EXPECT_NO_THROW(r.validate());
  r.feature_spec.clear();
  EXPECT_THROW(r.validate(), ConfigError);
  r = small_run();
  r.epochs = 0;
  EXPECT_THROW(r.validate(), ConfigError);
  r = small_run();
  r.tile_dims = {16, 16, 20};
  EXPECT_THROW(r.validate(), ConfigError);
  EXPECT_THROW(loss_from_string("mse"), ConfigError);
  EXPECT_EQ(loss_from_string("hlc"), LossKind::hlc);
  RunConfig a = small_run(), b = small_run();
  b.feature_spec.pop_back();
  EXPECT_NE(a.canonical(), b.canonical());
  b = small_run();
  b.epochs = 99;
  b.seed = 5;
  EXPECT_EQ(a.canonical(), b.canonical());
}

TEST(Training, SceneGeometryAndTiles) {
  Scene s;
  PointRecord p;
  p.x = 2.0;
  p.y = 3.0;
  p.z = 1.0;
  p.class_label = ObjectClass::ground;
  p.region_label = Region::corridor;
  s.points.push_back(p);
  p.x = 20.5;
  p.y = 3.5;
  p.z = 4.0;
  s.points.push_back(p);
  s.bounds = compute_bounds(s.points);
  const RunConfig run = small_run();
  const SceneGeometry g = scene_geometry(s, run);
  EXPECT_EQ(g.origin, (std::array<double, 3>{2.0, 3.0, 1.0}));
  EXPECT_EQ(g.tiles_x, 2);
  EXPECT_EQ(g.tiles_y, 1);
  EXPECT_EQ(g.dims, (GridDims{32, 16, 32}));
  const PreparedScene ps = prepare_scene(s, run, 10.0);
  ASSERT_EQ(ps.tiles.size(), 2u);
  EXPECT_EQ(ps.tiles[0].input.shape(), (diff::Shape{16, 16, 32, 4}));
  EXPECT_EQ(ps.tiles[0].occupied + ps.tiles[1].occupied, 2u);
  EXPECT_EQ(ps.tiles[1].tx, 1);
}

TEST(Training, HlcNeedsRegionNetwork) {
  RunConfig run = small_run();
  run.loss = LossKind::hlc;
  SUNet3D model(run.model_config(), 1);
  EXPECT_THROW(train_3d(model, nullptr, run, small_scenes(1, 3), {}), ConfigError);
  Bev2DConfig other = run.bev_config();
  other.base_channels = 8;
  Bev2D bev(other, 1);
  EXPECT_THROW(train_3d(model, &bev, run, small_scenes(1, 3), {}), ArtifactMismatch);
}

TEST(Training, LossDecreasesAndRunsAreBitIdentical) {
  const auto scenes = small_scenes(2, 10);
  const RunConfig run = small_run();
  testutil::TempDir dir("train");
  std::vector<double> losses;
  for (int rep = 0; rep < 2; ++rep) {
    SUNet3D model(run.model_config(), run.seed);
    const TrainResult res = train_3d(model, nullptr, run, scenes, {});
    ASSERT_EQ(res.log.size(), 5u);
    if (rep == 0)
      for (const auto& e : res.log) losses.push_back(e.loss);
    save_model(dir / ("m" + std::to_string(rep) + ".ckpt"), model, run, res.z_max_global);
  }
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "epoch " << i + 1;
  EXPECT_EQ(testutil::slurp(dir / "m0.ckpt"), testutil::slurp(dir / "m1.ckpt"));
}

TEST(Training, CheckpointReloadReproducesMetrics) {
  const auto scenes = small_scenes(3, 20);
  RunConfig run = small_run();
  run.epochs = 2;
  SUNet3D model(run.model_config(), run.seed);
  const std::vector<Scene> train(scenes.begin(), scenes.begin() + 2), val(scenes.begin() + 2, scenes.end());
  const TrainResult res = train_3d(model, nullptr, run, train, val);
  EXPECT_GE(res.best_epoch, 1);
  const MetricsReport before = evaluate_scenes(model, run, res.z_max_global, val);
  EXPECT_EQ(before.macro_f1(), res.best_val_f1);
  testutil::TempDir dir("reload");
  save_model(dir / "m.ckpt", model, run, res.z_max_global);
  SUNet3D fresh(run.model_config(), 77);
  const double z = load_model(dir / "m.ckpt", fresh, run);
  EXPECT_EQ(z, res.z_max_global);
  const MetricsReport after = evaluate_scenes(fresh, run, z, val);
  EXPECT_EQ(after.confusion, before.confusion);

  RunConfig other = run;
  other.base_channels = 8;
  SUNet3D wide(other.model_config(), 1);
  EXPECT_THROW(load_model(dir / "m.ckpt", wide, other), ArtifactMismatch);
  other = run;
  other.feature_spec = {FeatureChannel::occupancy, FeatureChannel::rel_elev, FeatureChannel::abs_elev,
                        FeatureChannel::num_returns};
  SUNet3D permuted(other.model_config(), 1);
  EXPECT_THROW(load_model(dir / "m.ckpt", permuted, other), ArtifactMismatch);
}

TEST(Training, InferMatchesManualTrace) {
  Rng rng(30);
  Scene s = testutil::random_scene(rng, 100, 10.0, 20.0);
  for (auto& p : s.points) p.x += 100.0;
  s.bounds = compute_bounds(s.points);
  const RunConfig run = small_run();
  SUNet3D model(run.model_config(), 31);
  {
    // non-trivial running statistics
    diff::NoGradGuard g;
    model.forward(testutil::random_tensor(rng, {16, 16, 32, 4}, 0.0, 2.0), BnMode::train);
  }
  const double z_max_global = 25.0;
  const auto labels = infer(model, run, z_max_global, s);
  ASSERT_EQ(labels.size(), 100u);
  EXPECT_EQ(labels, infer(model, run, z_max_global, s));

  const std::array<double, 3> origin{s.bounds.min[0], s.bounds.min[1], s.bounds.min[2]};
  const ColumnGeometry cols{origin[0], origin[1], 16, 16, 1.0};
  const ElevationContext ctx = build_context(s, cols, z_max_global);
  const VoxelGrid grid = voxelize(s, origin, {16, 16, 32}, 1.0, run.feature_spec, &ctx);
  diff::Tensor x({16, 16, 32, 4}, grid.features);
  diff::Tensor logits;
  {
    diff::NoGradGuard g;
    logits = model.forward(x, BnMode::eval);
  }
  std::vector<ObjectClass> manual;
  std::set<ObjectClass> seen;
  for (const auto& p : s.points) {
    const int i = static_cast<int>(std::floor(p.x - origin[0]));
    const int j = static_cast<int>(std::floor(p.y - origin[1]));
    const int k = static_cast<int>(std::floor(p.z - origin[2]));
    const std::size_t v = (static_cast<std::size_t>(i) * 16 + j) * 32 + k;
    int best = 0;
    for (int c = 1; c < 5; ++c)
      if (logits[v * 5 + c] > logits[v * 5 + best]) best = c;
    manual.push_back(static_cast<ObjectClass>(best));
    seen.insert(manual.back());
  }
  EXPECT_EQ(labels, manual);
  EXPECT_GE(seen.size(), 2u);
}

TEST(Training, BackprojectEvaluateMatchesVoxelEvaluate) {
  // one point per voxel makes every voxel class-pure
  Scene s;
  Rng rng(40);
  std::vector<ObjectClass> voxel_truth, voxel_pred;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      PointRecord p;
      p.x = i + 0.5;
      p.y = j + 0.5;
      p.z = 0.5 + static_cast<double>(rng.index(5));
      p.class_label = static_cast<ObjectClass>(rng.index(kNumClasses));
      p.region_label = p.class_label == ObjectClass::background ? Region::none : Region::corridor;
      s.points.push_back(p);
    }
  s.bounds = compute_bounds(s.points);
  const VoxelGrid g = voxelize(s, {0, 0, 0}, {10, 10, 5}, 1.0, std::vector{FeatureChannel::occupancy});
  std::vector<ObjectClass> pred(g.labels.size());
  for (auto& c : pred) c = static_cast<ObjectClass>(rng.index(kNumClasses));
  for (std::size_t v = 0; v < g.labels.size(); ++v)
    if (g.occupancy[v]) {
      voxel_truth.push_back(g.labels[v]);
      voxel_pred.push_back(pred[v]);
    }
  const auto point_pred = backproject_labels(g, pred, s);
  std::vector<ObjectClass> point_truth;
  for (const auto& p : s.points) point_truth.push_back(p.class_label);
  EXPECT_EQ(evaluate(point_pred, point_truth).confusion, evaluate(voxel_pred, voxel_truth).confusion);
}

TEST(Ablation, TableShapeAndPlumbing) {
  const auto scenes = small_scenes(3, 50);
  RunConfig base = small_run();
  base.epochs = 1;
  std::vector<std::pair<std::string, RunConfig>> grid;
  grid.emplace_back("a", base);
  RunConfig hlc = base;
  hlc.loss = LossKind::hlc;
  grid.emplace_back("b", hlc);
  grid.emplace_back("a_again", base);
  const auto rows = run_ablation(grid, scenes, 2);
  ASSERT_EQ(rows.size(), 3u);
  const std::string csv = ablation_csv(rows);
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(csv);
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  for (const auto& l : lines) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 12);
  EXPECT_EQ(lines[0].substr(0, 25), "config,pylon_precision,py");
  EXPECT_EQ(rows[0].metrics.confusion, rows[2].metrics.confusion);

  // the row for "a" equals training the same config by hand and evaluating the held-out scene
  SUNet3D model(base.model_config(), base.seed);
  const std::vector<Scene> train(scenes.begin(), scenes.begin() + 2), held(scenes.begin() + 2, scenes.end());
  const auto res = train_3d(model, nullptr, base, train, {});
  const auto m = evaluate_scenes(model, base, res.z_max_global, held);
  EXPECT_EQ(m.confusion, rows[0].metrics.confusion);
  for (auto c : kReportClasses) EXPECT_EQ(m.per_class[static_cast<int>(c)].f1, rows[0].metrics.per_class[static_cast<int>(c)].f1);
  EXPECT_NE(ablation_table(rows).find("a_again"), std::string::npos);

  const auto g = default_ablation_grid(base);
  ASSERT_EQ(g.size(), 8u);
  EXPECT_EQ(g[0].second.feature_spec.size(), 3u);
  EXPECT_EQ(g[1].second.feature_spec.size(), 4u);
  EXPECT_EQ(g[2].second.loss, LossKind::wce);
  EXPECT_EQ(g[3].second.loss, LossKind::hlc);
  EXPECT_FALSE(g[4].second.use_mfa);
  EXPECT_FALSE(g[4].second.use_fs);
  EXPECT_TRUE(g[7].second.use_mfa && g[7].second.use_fs);
}
