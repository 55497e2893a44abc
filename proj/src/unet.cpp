#include "sunet/unet.hpp"

#include "sunet/errors.hpp"

namespace sunet {

using diff::Init;
using diff::ParamStore;
using diff::Shape;

namespace {

Shape kernel_shape(int rank, int k, int cin, int cout) {
  return rank == 3 ? Shape{k, k, k, cin, cout} : Shape{k, k, cin, cout};
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) { return diff::conv(x, w, b, 1, 0); }

}  // namespace

void UNetConfig::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) throw ConfigError("spatial_rank must be 2 or 3");
  if (static_cast<int>(input_dims.size()) != spatial_rank) throw ConfigError("input_dims rank mismatch");
  if (levels < 1 || base_channels < 1 || in_channels < 1 || out_channels < 1) {
    throw ConfigError("levels, channels must be positive");
  }
  const int div = 1 << (levels - 1);
  for (int d : input_dims) {
    if (d <= 0 || d % div != 0) {
      throw ConfigError("input dim " + std::to_string(d) + " not divisible by 2^(levels-1) = " + std::to_string(div));
    }
  }
}

Tensor ConvBlock::forward(const Tensor& x, BnMode mode) {
  const int k = weight.dim(0);
  return diff::relu(diff::batch_norm(diff::conv(x, weight, bias, 1, k / 2), gamma, beta, stats, mode));
}

Tensor AttentionGate::forward(const Tensor& skip, const Tensor& gating, Tensor* alpha_out) const {
  if (skip.dim(-1) != skip_w.dim(-2) || gating.dim(-1) != gate_w.dim(-2)) {
    throw ShapeError("attention gate: channel mismatch");
  }
  const Tensor g = diff::upsample(conv1x1(gating, gate_w, gate_b), 2);
  const Tensor s = conv1x1(skip, skip_w, skip_b);
  const Tensor alpha = diff::sigmoid(conv1x1(diff::relu(diff::add(s, g)), psi_w, psi_b));
  if (alpha_out) *alpha_out = alpha;
  return diff::mul(skip, alpha);
}

Tensor MfaHead::forward(const LevelMaps& maps) const {
  if (maps.dec.empty()) throw ShapeError("mfa: no decoder maps");
  std::vector<Tensor> parts;
  for (std::size_t l = 0; l < maps.dec.size(); ++l) {
    if (!maps.dec[l].defined()) throw ShapeError("mfa: missing decoder level " + std::to_string(l + 1));
    parts.push_back(l == 0 ? maps.dec[l] : diff::upsample(maps.dec[l], 1 << l));
  }
  return conv1x1(diff::concat(parts, -1), weight, bias);
}

Tensor FeatureSmoothing::forward(const Tensor& x) const {
  Tensor h = diff::relu(conv1x1(x, w1, b1));
  h = diff::relu(conv1x1(h, w2, b2));
  return diff::add(x, conv1x1(h, w3, b3));
}

void FeatureSmoothing::init_identity() {
  const auto set_eye = [](Tensor& w) {
    auto v = w.values();
    std::fill(v.begin(), v.end(), 0.0);
    const int cin = w.dim(-2), cout = w.dim(-1);
    for (int i = 0; i < std::min(cin, cout); ++i) v[static_cast<std::size_t>(i) * cout + i] = 1.0;
  };
  set_eye(w1);
  set_eye(w2);
  for (Tensor* t : {&b1, &b2, &w3, &b3}) {
    auto v = t->values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

ConvBlock AttentionUNet::make_block(ParamStore& store, const std::string& name, int cin, int cout, int k) {
  ConvBlock b;
  b.weight = store.create(name + ".conv.weight", kernel_shape(cfg_.spatial_rank, k, cin, cout), Init::kaiming);
  b.bias = store.create(name + ".conv.bias", {cout}, Init::zeros);
  b.gamma = store.create(name + ".bn.gamma", {cout}, Init::ones);
  b.beta = store.create(name + ".bn.beta", {cout}, Init::zeros);
  b.stats.running_mean = store.create(name + ".bn.running_mean", {cout}, Init::zeros, false);
  b.stats.running_var = store.create(name + ".bn.running_var", {cout}, Init::ones, false);
  return b;
}

AttentionUNet::AttentionUNet(std::string prefix, UNetConfig cfg, ParamStore& store) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int r = cfg_.spatial_rank;
  const int L = cfg_.levels;
  for (int l = 1; l <= L; ++l) {
    const int cin = l == 1 ? cfg_.in_channels : cfg_.channels_at(l - 1);
    const int c = cfg_.channels_at(l);
    const std::string n = prefix + ".enc" + std::to_string(l);
    enc_.push_back({make_block(store, n + ".block1", cin, c, 3), make_block(store, n + ".block2", c, c, 3)});
  }
  for (int l = 1; l < L; ++l) {
    const int c = cfg_.channels_at(l);
    const int cg = cfg_.channels_at(l + 1);
    const int ci = std::max(1, c / 2);
    const std::string n = prefix + ".dec" + std::to_string(l);
    AttentionGate g;
    g.skip_w = store.create(n + ".gate.skip.weight", kernel_shape(r, 1, c, ci), Init::kaiming);
    g.skip_b = store.create(n + ".gate.skip.bias", {ci}, Init::zeros);
    g.gate_w = store.create(n + ".gate.gating.weight", kernel_shape(r, 1, cg, ci), Init::kaiming);
    g.gate_b = store.create(n + ".gate.gating.bias", {ci}, Init::zeros);
    g.psi_w = store.create(n + ".gate.psi.weight", kernel_shape(r, 1, ci, 1), Init::kaiming);
    g.psi_b = store.create(n + ".gate.psi.bias", {1}, Init::zeros);
    gates_.push_back(g);
    dec_.push_back({make_block(store, n + ".block1", c + cg, c, 3), make_block(store, n + ".block2", c, c, 3)});
  }
  const int out = cfg_.out_channels;
  if (cfg_.use_mfa) {
    int total = 0;
    for (int l = 1; l <= L; ++l) total += cfg_.channels_at(l);
    mfa_.weight = store.create(prefix + ".mfa.weight", kernel_shape(r, 1, total, out), Init::kaiming);
    mfa_.bias = store.create(prefix + ".mfa.bias", {out}, Init::zeros);
  } else {
    head_w_ = store.create(prefix + ".head.weight", kernel_shape(r, 1, cfg_.channels_at(1), out), Init::kaiming);
    head_b_ = store.create(prefix + ".head.bias", {out}, Init::zeros);
  }
  if (cfg_.use_fs) {
    const int h = cfg_.fs_hidden;
    fs_.w1 = store.create(prefix + ".fs.mlp1.weight", kernel_shape(r, 1, out, h), Init::kaiming);
    fs_.b1 = store.create(prefix + ".fs.mlp1.bias", {h}, Init::zeros);
    fs_.w2 = store.create(prefix + ".fs.mlp2.weight", kernel_shape(r, 1, h, h), Init::kaiming);
    fs_.b2 = store.create(prefix + ".fs.mlp2.bias", {h}, Init::zeros);
    fs_.w3 = store.create(prefix + ".fs.mlp3.weight", kernel_shape(r, 1, h, out), Init::zeros);
    fs_.b3 = store.create(prefix + ".fs.mlp3.bias", {out}, Init::zeros);
  }
}

Shape AttentionUNet::level_shape(int level) const {
  Shape s;
  for (int d : cfg_.input_dims) s.push_back(d >> (level - 1));
  s.push_back(cfg_.channels_at(level));
  return s;
}

void AttentionUNet::recalibrate_batch_norm(std::span<const Tensor> inputs) {
  if (inputs.empty()) return;
  std::vector<ConvBlock*> blocks;
  for (auto* levels : {&enc_, &dec_})
    for (auto& pair : *levels)
      for (auto& b : pair) blocks.push_back(&b);
  std::vector<double> saved;
  for (auto* b : blocks) saved.push_back(b->stats.momentum);
  diff::NoGradGuard guard;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    for (auto* b : blocks) b->stats.momentum = 1.0 / static_cast<double>(n + 1);
    forward(inputs[n], BnMode::train);
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i]->stats.momentum = saved[i];
}

Tensor AttentionUNet::forward(const Tensor& x, BnMode mode, LevelMaps* maps) {
  Shape expected(cfg_.input_dims);
  expected.push_back(cfg_.in_channels);
  if (x.shape() != expected) {
    throw ShapeError("network input " + diff::shape_string(x.shape()) + ", expected " +
                     diff::shape_string(expected));
  }
  const int L = cfg_.levels;
  LevelMaps local;
  LevelMaps& m = maps ? *maps : local;
  m.enc.assign(L, Tensor());
  m.dec.assign(L, Tensor());

  Tensor h = x;
  for (int l = 1; l <= L; ++l) {
    if (l > 1) h = diff::max_pool(h, 2);
    h = enc_[l - 1][0].forward(h, mode);
    h = enc_[l - 1][1].forward(h, mode);
    if (h.shape() != level_shape(l)) throw ShapeError("encoder level " + std::to_string(l) + " shape ladder violated");
    m.enc[l - 1] = h;
  }
  m.dec[L - 1] = m.enc[L - 1];
  for (int l = L - 1; l >= 1; --l) {
    const Tensor& gating = m.dec[l];
    const Tensor gated = gates_[l - 1].forward(m.enc[l - 1], gating);
    Tensor d = diff::concat({gated, diff::upsample(gating, 2)}, -1);
    d = dec_[l - 1][0].forward(d, mode);
    d = dec_[l - 1][1].forward(d, mode);
    if (d.shape() != level_shape(l)) throw ShapeError("decoder level " + std::to_string(l) + " shape ladder violated");
    m.dec[l - 1] = d;
  }
  Tensor logits = cfg_.use_mfa ? mfa_.forward(m) : conv1x1(m.dec[0], head_w_, head_b_);
  if (cfg_.use_fs) logits = fs_.forward(logits);
  return logits;
}

}  // namespace sunet
