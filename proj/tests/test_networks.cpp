#include <gtest/gtest.h>

#include <cmath>

#include "grad_suite.hpp"
#include "sunet/bev2d.hpp"
#include "sunet/diff/grad_check.hpp"
#include "sunet/diff/ops.hpp"
#include "sunet/errors.hpp"
#include "sunet/fusion.hpp"
#include "sunet/sunet3d.hpp"
#include "test_util.hpp"

using namespace sunet;
using namespace sunet::diff;

namespace {

SUNet3DConfig small3d(bool mfa = true, bool fs = false) {
  SUNet3DConfig c;
  c.tile_dims = {8, 8, 16};
  c.levels = 4;
  c.base_channels = 4;
  c.use_mfa = mfa;
  c.use_fs = fs;
  return c;
}

void fill(Tensor& t, double v) {
  for (auto& x : t.values()) x = v;
}

}  // namespace

TEST(SUNet3D, DeskShapeLadder) {
  SUNet3DConfig cfg;
  cfg.tile_dims = {16, 16, 64};
  cfg.base_channels = 8;
  SUNet3D model(cfg, 1);
  Rng rng(1);
  LevelMaps maps;
  Tensor logits;
  {
    NoGradGuard g;
    logits = model.forward(testutil::random_tensor(rng, {16, 16, 64, 4}), BnMode::train, &maps);
  }
  EXPECT_EQ(logits.shape(), (Shape{16, 16, 64, 5}));
  ASSERT_EQ(maps.enc.size(), 4u);
  for (int l = 1; l <= 4; ++l) {
    const int f = 1 << (l - 1);
    const Shape want{16 / f, 16 / f, 64 / f, 8 * f};
    EXPECT_EQ(maps.enc[l - 1].shape(), want);
    EXPECT_EQ(maps.dec[l - 1].shape(), want);
  }
  EXPECT_EQ(model.params().get("sunet3d.mfa.weight").shape(), (Shape{1, 1, 1, 120, 5}));
}

TEST(SUNet3D, ConfigErrors) {
  SUNet3DConfig cfg = small3d();
  cfg.tile_dims = {8, 8, 12};
  EXPECT_THROW(SUNet3D(cfg, 1), ConfigError);
  SUNet3D model(small3d(), 1);
  EXPECT_THROW(model.forward(Tensor({8, 8, 16, 3}, 0.0), BnMode::eval), ShapeError);
}

TEST(SUNet3D, ZeroInputGivesSpatiallyConstantLogits) {
  for (bool mfa : {true, false}) {
    SUNet3D model(small3d(mfa, true), 2);
    Tensor y;
    {
      NoGradGuard g;
      y = model.forward(Tensor({8, 8, 16, 4}, 0.0), BnMode::train);
    }
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], y[i % 5]);
  }
}

TEST(SUNet3D, BaselineHeadIsConvOnFullResolutionDecoder) {
  SUNet3D model(small3d(false), 3);
  Rng rng(3);
  LevelMaps maps;
  NoGradGuard g;
  const Tensor y = model.forward(testutil::random_tensor(rng, {8, 8, 16, 4}), BnMode::eval, &maps);
  const Tensor ref = conv(maps.dec[0], model.params().get("sunet3d.head.weight"),
                          model.params().get("sunet3d.head.bias"));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], ref[i]);
  EXPECT_FALSE(model.params().contains("sunet3d.mfa.weight"));
}

TEST(AttentionGate, PassThroughAndSuppression) {
  SUNet3D model(small3d(), 4);
  AttentionGate gate = model.net().gate(1);
  Rng rng(4);
  Tensor skip = testutil::random_tensor(rng, {8, 8, 16, 4}), gating = testutil::random_tensor(rng, {4, 4, 8, 8});
  Tensor alpha;
  Tensor out = gate.forward(skip, gating, &alpha);
  for (double a : alpha.values()) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  ASSERT_EQ(alpha.shape(), (Shape{8, 8, 16, 1}));

  Tensor psi_w(gate.psi_w.shape(), 0.0);
  gate.psi_w = psi_w;
  gate.psi_b = Tensor({1}, 1000.0);
  out = gate.forward(skip, gating);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], skip[i]);
  gate.psi_b = Tensor({1}, -1000.0);
  out = gate.forward(skip, gating);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);

  EXPECT_THROW(gate.forward(Tensor({8, 8, 16, 3}, 0.0), gating), ShapeError);
}

TEST(AttentionGate, GradientThroughAlphaAndSkip) {
  SUNet3D model(small3d(), 5);
  const AttentionGate& gate = model.net().gate(2);
  Rng rng(5);
  Tensor skip = testutil::random_tensor(rng, {4, 4, 8, 8}), gating = testutil::random_tensor(rng, {2, 2, 4, 16});
  GradCheckOptions o;
  o.tol = 1e-4;
  const auto rep = grad_check([&] { return testutil::probe(gate.forward(skip, gating)); },
                              {skip, gating, gate.skip_w, gate.gate_w, gate.psi_w, gate.psi_b}, o);
  EXPECT_TRUE(rep.passed) << rep.summary();
}

TEST(Mfa, StraightLineOracle) {
  Rng rng(6);
  MfaHead head;
  const int c1 = 2, c2 = 3, c3 = 4, out = 5, total = c1 + c2 + c3;
  head.weight = testutil::random_tensor(rng, {1, 1, 1, total, out});
  head.bias = testutil::random_tensor(rng, {out});
  LevelMaps maps;
  maps.dec = {testutil::random_tensor(rng, {4, 4, 4, c1}), testutil::random_tensor(rng, {2, 2, 2, c2}),
              testutil::random_tensor(rng, {1, 1, 1, c3})};
  const Tensor y = head.forward(maps);
  ASSERT_EQ(y.shape(), (Shape{4, 4, 4, out}));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        std::vector<double> f;
        for (int c = 0; c < c1; ++c) f.push_back(maps.dec[0][((i * 4 + j) * 4 + k) * c1 + c]);
        for (int c = 0; c < c2; ++c) f.push_back(maps.dec[1][(((i / 2) * 2 + j / 2) * 2 + k / 2) * c2 + c]);
        for (int c = 0; c < c3; ++c) f.push_back(maps.dec[2][c]);
        for (int o = 0; o < out; ++o) {
          double s = head.bias[o];
          for (int c = 0; c < total; ++c) s += f[c] * head.weight[c * out + o];
          EXPECT_NEAR(y[((i * 4 + j) * 4 + k) * out + o], s, 1e-12);
        }
      }
  fill(maps.dec[1], 0.0);
  fill(maps.dec[2], 0.0);
  Tensor w1({1, 1, 1, c1, out}, std::vector<double>(head.weight.values().begin(),
                                                     head.weight.values().begin() + c1 * out));
  const Tensor lin = conv(maps.dec[0], w1, head.bias);
  const Tensor y1 = head.forward(maps);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], lin[i], 1e-12);
  maps.dec[1] = Tensor();
  EXPECT_THROW(head.forward(maps), ShapeError);
}

TEST(FeatureSmoothing, IdentityAndGradient) {
  SUNet3D model(small3d(true, true), 7);
  FeatureSmoothing fs = model.net().smoothing();
  Rng rng(7);
  Tensor x = testutil::random_tensor(rng, {3, 3, 2, 5});
  Tensor y = fs.forward(x);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
  for (auto& v : fs.w3.values()) v = rng.uniform(-0.5, 0.5);
  fs.init_identity();
  y = fs.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
  for (Tensor* t : {&fs.w1, &fs.w2, &fs.w3, &fs.b1, &fs.b2, &fs.b3})
    for (auto& v : t->values()) v = rng.uniform(-0.5, 0.5);
  GradCheckOptions o;
  o.tol = 1e-4;
  const auto rep = grad_check([&] { return testutil::probe(fs.forward(x)); }, {x, fs.w1, fs.w2, fs.w3, fs.b3}, o);
  EXPECT_TRUE(rep.passed) << rep.summary();
}

TEST(SUNet3D, ToyEndToEndGradient) {
  const auto small = testutil::toy_end_to_end(3, {4, 4, 8});
  EXPECT_TRUE(small.passed) << small.summary();
  std::size_t unconfirmed = 0;
  const auto rep = testutil::toy_end_to_end(3, {8, 8, 16}, true, &unconfirmed);
  EXPECT_TRUE(rep.passed) << rep.summary();
  EXPECT_EQ(unconfirmed, 0u) << rep.summary();
}

TEST(SUNet3D, SameSeedSameParameters) {
  SUNet3D a(small3d(), 9), b(small3d(), 9), c(small3d(), 10);
  const auto& pa = a.params().params();
  const auto& pb = b.params().params();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    for (std::size_t k = 0; k < pa[i].tensor.size(); ++k) {
      ASSERT_EQ(pa[i].tensor[k], pb[i].tensor[k]);
      differs |= pa[i].tensor[k] != c.params().params()[i].tensor[k];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Bev2DNet, DeskShapeAndSoftmax) {
  Bev2DConfig cfg;
  Bev2D model(cfg, 1);
  Rng rng(10);
  NoGradGuard g;
  const Tensor y = model.forward(testutil::random_tensor(rng, {64, 64, 2}), BnMode::train);
  ASSERT_EQ(y.shape(), (Shape{64, 64, 3}));
  const Tensor p = softmax(y);
  for (std::size_t i = 0; i < p.size(); i += 3) EXPECT_NEAR(p[i] + p[i + 1] + p[i + 2], 1.0, 1e-12);
  cfg.dims = {16, 32};
  Bev2D rect(cfg, 1);
  EXPECT_EQ(rect.forward(testutil::random_tensor(rng, {16, 32, 2}), BnMode::train).shape(), (Shape{16, 32, 3}));
  cfg.dims = {12, 16};
  EXPECT_THROW(Bev2D(cfg, 1), ConfigError);
}

TEST(Bev2DNet, GradientOn16x16) {
  Bev2DConfig cfg;
  cfg.dims = {16, 16};
  cfg.base_channels = 4;
  Bev2D model(cfg, 11);
  Rng rng(11);
  Tensor x = testutil::random_tensor(rng, {16, 16, 2});
  {
    NoGradGuard g;
    model.forward(x, BnMode::train);
  }
  std::vector<Tensor> inputs{x};
  for (const auto& t : model.params().trainable()) inputs.push_back(t);
  for (auto& t : inputs)
    for (auto& v : t.values())
      if (v == 0.0) v = rng.uniform(-0.1, 0.1);
  GradCheckOptions o;
  o.tol = 1e-4;
  o.max_samples_per_tensor = 4;
  o.skip_kinks = true;
  auto f = [&] { return testutil::probe(model.forward(x, BnMode::eval)); };
  const auto rep = grad_check(f, inputs, o);
  EXPECT_TRUE(rep.passed) << rep.summary();
  EXPECT_EQ(testutil::unconfirmed_kinks(f, inputs, rep, 1e-4), 0u) << rep.summary();
}

TEST(Bev2DNet, TransformGroup) {
  Rng rng(12);
  const Scene s = testutil::random_scene(rng, 300, 8.0, 5.0);
  const BevGrid b = project_bev(s, {0, 0}, {8, 8}, 1.0);
  auto same = [](const BevGrid& a, const BevGrid& c) {
    return a.w == c.w && a.h == c.h && a.features == c.features && a.region_labels == c.region_labels;
  };
  for (int turns = 0; turns < 4; ++turns)
    for (int fx = 0; fx < 2; ++fx)
      for (int fy = 0; fy < 2; ++fy) {
        const GridTransform t{fx == 1, fy == 1, turns};
        const BevGrid once = transform_bev(b, t);
        // features and labels move together
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            const std::size_t src = b.flat(i, j);
            bool found = false;
            for (std::size_t d = 0; d < once.region_labels.size() && !found; ++d)
              found = once.features[d * 2] == b.features[src * 2] &&
                      once.features[d * 2 + 1] == b.features[src * 2 + 1] &&
                      once.region_labels[d] == b.region_labels[src];
            EXPECT_TRUE(found);
          }
      }
  EXPECT_TRUE(same(transform_bev(transform_bev(b, {true, false, 0}), {true, false, 0}), b));
  EXPECT_TRUE(same(transform_bev(transform_bev(b, {false, true, 0}), {false, true, 0}), b));
  BevGrid r = b;
  for (int k = 0; k < 4; ++k) r = transform_bev(r, {false, false, 1});
  EXPECT_TRUE(same(r, b));
  EXPECT_TRUE(same(transform_bev(transform_bev(b, {false, false, 1}), {false, false, 3}), b));
  // a quarter turn maps pixel (i, j) to (h-1-j, i)
  const BevGrid q = transform_bev(b, {false, false, 1});
  EXPECT_EQ(q.mean_elevation(7 - 2, 5), b.mean_elevation(5, 2));
  const BevGrid rect = project_bev(s, {0, 0}, {8, 4}, 1.0);
  EXPECT_THROW(transform_bev(rect, {false, false, 1}), ShapeError);
  EXPECT_TRUE(same(transform_bev(transform_bev(rect, {true, true, 2}), {true, true, 2}), rect));
}

TEST(Bev2DNet, SingleStepDescent) {
  Bev2DConfig cfg;
  cfg.dims = {16, 16};
  cfg.base_channels = 4;
  Bev2D model(cfg, 13);
  Rng rng(13);
  const Scene s = testutil::random_scene(rng, 400, 16.0, 5.0);
  const BevGrid b = project_bev(s, {0, 0}, {16, 16}, 1.0);
  const Tensor x = bev_tensor(b);
  const std::vector<double> w(3, 1.0);
  std::vector<std::uint8_t> codes;
  for (auto r : b.region_labels) codes.push_back(static_cast<std::uint8_t>(r));
  auto loss = [&] { return wce_loss(model.forward(x, BnMode::train), codes, w); };
  Tensor before = loss();
  backward(before);
  Adam opt(model.params().trainable(), AdamConfig{1e-4});
  opt.step();
  NoGradGuard g;
  EXPECT_LT(loss().item(), before.item());
}

TEST(Bev2DNet, PretrainDeterministicAndValidated) {
  Bev2DConfig cfg;
  cfg.dims = {16, 16};
  cfg.base_channels = 4;
  Rng rng(14);
  std::vector<BevGrid> data;
  for (int i = 0; i < 2; ++i) data.push_back(project_bev(testutil::random_scene(rng, 300, 16.0, 5.0), {0, 0}, {16, 16}, 1.0));
  Pretrain2DOptions o;
  o.epochs = 3;
  o.frozen_bn_epochs = 1;
  auto run = [&] {
    Bev2D m(cfg, 3);
    return pretrain_2d(m, data, o).epoch_loss;
  };
  const auto a = run();
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a, run());
  Bev2D m(cfg, 3);
  EXPECT_THROW(pretrain_2d(m, {}, o), Error);
  o.frozen_bn_epochs = 4;
  EXPECT_THROW(pretrain_2d(m, data, o), ConfigError);
}
