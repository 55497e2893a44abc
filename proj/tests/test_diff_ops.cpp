#include <gtest/gtest.h>

#include <cmath>

#include "grad_suite.hpp"
#include "sunet/diff/checkpoint.hpp"
#include "sunet/diff/ops.hpp"
#include "sunet/diff/params.hpp"
#include "sunet/errors.hpp"
#include "test_util.hpp"

using namespace sunet;
using namespace sunet::diff;

namespace {

// Direct loop cross-correlation for 3D channel-last inputs.
std::vector<double> conv3d_loops(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int X = x.dim(0), Y = x.dim(1), Z = x.dim(2), C = x.dim(3);
  const int K0 = w.dim(0), K1 = w.dim(1), K2 = w.dim(2), O = w.dim(4);
  const int OX = (X + 2 * pad - K0) / stride + 1, OY = (Y + 2 * pad - K1) / stride + 1,
            OZ = (Z + 2 * pad - K2) / stride + 1;
  std::vector<double> out;
  for (int i = 0; i < OX; ++i)
    for (int j = 0; j < OY; ++j)
      for (int k = 0; k < OZ; ++k)
        for (int o = 0; o < O; ++o) {
          double s = b[o];
          for (int a = 0; a < K0; ++a)
            for (int bb = 0; bb < K1; ++bb)
              for (int c = 0; c < K2; ++c) {
                const int xi = i * stride + a - pad, yj = j * stride + bb - pad, zk = k * stride + c - pad;
                if (xi < 0 || yj < 0 || zk < 0 || xi >= X || yj >= Y || zk >= Z) continue;
                for (int ci = 0; ci < C; ++ci)
                  s += x[((static_cast<std::size_t>(xi) * Y + yj) * Z + zk) * C + ci] *
                       w[(((static_cast<std::size_t>(a) * K1 + bb) * K2 + c) * C + ci) * O + o];
              }
          out.push_back(s);
        }
  return out;
}

}  // namespace

TEST(Conv, IdentityKernel) {
  Rng rng(1);
  Tensor x = testutil::random_tensor(rng, {3, 4, 5, 2});
  Tensor w({1, 1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor y = conv(x, w, Tensor({2}, 0.0));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv, CountingKernel) {
  Tensor x({5, 5, 5, 1}, 1.0);
  Tensor y = conv(x, Tensor({3, 3, 3, 1, 1}, 1.0), Tensor({1}, 0.0), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{5, 5, 5, 1}));
  EXPECT_EQ(y[(2 * 5 + 2) * 5 + 2], 27.0);
  EXPECT_EQ(y[0], 8.0);
}

TEST(Conv, MatchesLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int stride = 1 + static_cast<int>(rng.index(2)), pad = static_cast<int>(rng.index(2));
    Tensor x = testutil::random_tensor(rng, {5, 4, 6, 2});
    Tensor w = testutil::random_tensor(rng, {3, 2, 3, 2, 3});
    Tensor b = testutil::random_tensor(rng, {3});
    Tensor y = conv(x, w, b, stride, pad);
    const auto ref = conv3d_loops(x, w, b, stride, pad);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv, ShapeErrors) {
  Tensor x({4, 4, 4, 2}, 1.0);
  EXPECT_THROW(conv(x, Tensor({3, 3, 3, 3, 1}, 1.0), Tensor()), ShapeError);
  EXPECT_THROW(conv(x, Tensor({5, 5, 5, 2, 1}, 1.0), Tensor()), ShapeError);
  EXPECT_THROW(conv(x, Tensor({3, 3, 2, 1}, 1.0), Tensor()), ShapeError);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  Tensor x({3, 3, 2}, std::vector<double>(18, 4.0));
  BatchNormStats s{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  Tensor beta({2}, std::vector<double>{0.5, -1.5});
  Tensor y = batch_norm(x, Tensor({2}, 1.0), beta, s, BnMode::train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], beta[i % 2], 1e-12);
}

TEST(BatchNorm, TrainModeMomentsAndRunningStats) {
  Rng rng(3);
  Tensor x = testutil::random_tensor(rng, {4, 5, 3, 3}, -5, 9);
  BatchNormStats s{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  Tensor y = batch_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0), s, BnMode::train);
  const std::size_t n = 60;
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t i = 0; i < n; ++i) {
      m += y[i * 3 + c];
      xm += x[i * 3 + c];
    }
    m /= n;
    xm /= n;
    for (std::size_t i = 0; i < n; ++i) {
      v += (y[i * 3 + c] - m) * (y[i * 3 + c] - m);
      xv += (x[i * 3 + c] - xm) * (x[i * 3 + c] - xm);
    }
    v /= n;
    EXPECT_LT(std::abs(m), 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-3);
    EXPECT_NEAR(s.running_mean[c], 0.1 * xm, 1e-12);
    // running variance tracks the unbiased batch variance
    EXPECT_NEAR(s.running_var[c], 0.9 + 0.1 * xv / (n - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNormStats s{Tensor({1}, 2.0), Tensor({1}, 4.0)};
  Tensor y = batch_norm(Tensor({2, 1}, std::vector<double>{2.0, 6.0}), Tensor({1}, 3.0), Tensor({1}, 1.0), s,
                        BnMode::eval);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0 + 3.0 * 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(s.running_mean[0], 2.0);
}

TEST(Activations, Examples) {
  Tensor r = relu(Tensor({2}, std::vector<double>{-1.0, 2.0}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  Tensor s = softmax(Tensor({5}, 3.0));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s[i], 0.2, 1e-15);
  EXPECT_NEAR(sigmoid(Tensor({1}, 0.0))[0], 0.5, 1e-15);
}

TEST(Activations, SoftmaxRowsSumToOne) {
  Rng rng(4);
  Tensor x = testutil::random_tensor(rng, {50, 7}, -30, 30);
  Tensor s = softmax(x), ls = log_softmax(x);
  for (int r = 0; r < 50; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) {
      sum += s[r * 7 + c];
      EXPECT_NEAR(std::exp(ls[r * 7 + c]), s[r * 7 + c], 1e-14);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  Tensor big = softmax(Tensor({2}, std::vector<double>{1000.0, 0.0}));
  EXPECT_EQ(big[0], 1.0);
}

TEST(Resample, UpsampleAndPool) {
  Tensor u = upsample(Tensor({1, 1, 1, 1}, 3.0), 2);
  ASSERT_EQ(u.shape(), (Shape{2, 2, 2, 1}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(u[i], 3.0);

  Tensor x({2, 2, 1}, std::vector<double>{1.0, 4.0, 2.0, 3.0}, true);
  Tensor p = max_pool(x);
  EXPECT_EQ(p.item(), 4.0);
  backward(p);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
  EXPECT_THROW(max_pool(Tensor({3, 2, 1}, 0.0)), ShapeError);
}

TEST(Elementwise, IdentitiesAndConcat) {
  Rng rng(5);
  Tensor a = testutil::random_tensor(rng, {3, 4, 2});
  Tensor z = add(a, Tensor({3, 4, 2}, 0.0)), o = mul(a, Tensor({2}, 1.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(z[i], a[i]);
    EXPECT_EQ(o[i], a[i]);
  }
  Tensor c = concat({Tensor({2, 2}, 1.0), Tensor({2, 3}, 2.0)});
  EXPECT_EQ(c.shape(), (Shape{2, 5}));
  EXPECT_EQ(c[4], 2.0);
  EXPECT_EQ(c[1], 1.0);
  EXPECT_THROW(concat({Tensor({2, 2}, 1.0), Tensor({3, 3}, 2.0)}), ShapeError);
  EXPECT_THROW(add(Tensor({2, 2}, 1.0), Tensor({3}, 1.0)), ShapeError);
}

TEST(Backward, LinearCaseAndAccumulation) {
  Rng rng(6);
  Tensor x = testutil::random_tensor(rng, {10});
  x.set_requires_grad(true);
  std::vector<double> w(10);
  for (auto& v : w) v = rng.uniform(-2, 2);
  backward(weighted_sum(x, w));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(x.grad()[i], w[i]);
  backward(weighted_sum(x, w));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(x.grad()[i], 2.0 * w[i]);
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x({3}, 1.0, true);
  NoGradGuard guard;
  Tensor y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Backward, NonFiniteValuesAreReported) {
  EXPECT_THROW(log_softmax(Tensor({2}, std::vector<double>{NAN, 0.0})), NumericError);
  EXPECT_THROW(scale(Tensor({1}, 1e308), 1e10), NumericError);
}

TEST(GradCheck, SquareSum) {
  auto rep = grad_check([](const Tensor& x) { return sum(mul(x, x)); }, Tensor({1}, 1.0), 1e-8);
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_NEAR(rep.entries[0].numeric, 2.0, 1e-8);
  EXPECT_NEAR(rep.entries[0].analytic, 2.0, 1e-15);
  EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, SignFlippedBackwardFails) {
  auto bad_square = [](const Tensor& x) {
    std::vector<double> v(x.values().begin(), x.values().end());
    for (auto& e : v) e *= e;
    return make_result(x.shape(), v, {x}, [](Node& n) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2.0 * n.parents[0]->value[i] * n.grad[i];
    });
  };
  Rng rng(7);
  auto rep = grad_check([&](const Tensor& x) { return sum(bad_square(x)); }, testutil::random_tensor(rng, {6}, 0.5, 1.5),
                        1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.max_rel_error, 1.0);
}

TEST(GradCheck, KinkDetection) {
  Tensor x({3}, std::vector<double>{1e-6, 0.5, -0.7});
  auto f = [&] { return sum(mul(relu(x), Tensor({3}, std::vector<double>{1.0, 2.0, 3.0}))); };
  GradCheckOptions o;
  EXPECT_FALSE(grad_check(f, {x}, o).passed);
  o.skip_kinks = true;
  const auto rep = grad_check(f, {x}, o);
  EXPECT_TRUE(rep.passed) << rep.summary();
  EXPECT_EQ(rep.kinks, 1u);
  EXPECT_TRUE(rep.entries[0].kink);
  EXPECT_FALSE(rep.entries[1].kink);
}

TEST(GradCheck, PrimitiveSuite) {
  for (const auto& c : testutil::gradient_suite(2)) {
    if (c.name == "sunet_toy_end_to_end") continue;
    EXPECT_LE(c.report.max_rel_error, c.tol) << c.name << " " << c.report.summary();
    EXPECT_GT(c.report.checked, 0u) << c.name;
  }
}

TEST(Optim, AdamFirstStepMatchesFormula) {
  Tensor p({2}, std::vector<double>{1.0, -2.0}, true);
  Adam opt({p}, AdamConfig{0.1});
  p.grad()[0] = 0.5;
  p.grad()[1] = -3.0;
  opt.step();
  // bias-corrected first step moves every coordinate by lr * sign(g) up to eps
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optim, DeterministicTraining) {
  auto train = [] {
    ParamStore store(42);
    Tensor w = store.create("w", {3, 3, 2, 2}, Init::kaiming);
    Tensor b = store.create("b", {2}, Init::zeros);
    Rng rng(8);
    Tensor x = testutil::random_tensor(rng, {6, 6, 2});
    Adam opt(store.trainable());
    for (int i = 0; i < 20; ++i) {
      backward(mean(mul(conv(x, w, b, 1, 1), conv(x, w, b, 1, 1))));
      opt.step();
    }
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  EXPECT_EQ(train(), train());
}

TEST(Optim, KaimingVariance) {
  ParamStore store(9);
  Tensor w = store.create("w", {3, 3, 3, 8, 200}, Init::kaiming);
  double m = 0, v = 0;
  for (double x : w.values()) m += x;
  m /= static_cast<double>(w.size());
  for (double x : w.values()) v += (x - m) * (x - m);
  v /= static_cast<double>(w.size());
  EXPECT_NEAR(v, 2.0 / 216.0, 2.0 / 216.0 * 0.05);
  EXPECT_NEAR(m, 0.0, 0.01);
}

TEST(Checkpoint, RoundTripAndErrors) {
  ParamStore store(10);
  store.create("enc.w", {3, 3, 1, 2}, Init::kaiming);
  store.create("bn.mean", {2}, Init::ones, false);
  CheckpointHeader h;
  h.z_max_global = 42.5;
  h.config_text = "levels=4\n";
  h.config_hash = fnv1a(h.config_text);
  testutil::TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", h, store);
  Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.header.z_max_global, 42.5);
  EXPECT_EQ(ck.header.config_hash, h.config_hash);
  EXPECT_EQ(ck.header.config_text, h.config_text);
  ASSERT_EQ(ck.tensors.size(), 2u);
  const Tensor orig = store.get("enc.w");
  const Tensor back = ck.tensors.at("enc.w");
  EXPECT_EQ(back.shape(), orig.shape());
  for (std::size_t i = 0; i < orig.size(); ++i) EXPECT_EQ(back[i], orig[i]);

  ParamStore other(11);
  other.create("enc.w", {3, 3, 1, 2}, Init::kaiming);
  other.create("bn.mean", {2}, Init::zeros, false);
  other.copy_values_from(ck.tensors);
  EXPECT_EQ(other.get("bn.mean")[1], 1.0);

  const std::string bytes = testutil::slurp(dir / "m.ckpt");
  testutil::spit(dir / "short.ckpt", bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), FormatError);
  testutil::spit(dir / "magic.ckpt", "XXXXXX" + bytes.substr(6));
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
