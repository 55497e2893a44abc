#include "sunet/bev2d.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "sunet/diff/ops.hpp"
#include "sunet/errors.hpp"
#include "sunet/fusion.hpp"
#include "sunet/rng.hpp"

namespace sunet {

void Bev2DConfig::validate() const {
  if (num_regions != kNumRegions) throw ConfigError("num_regions must be 3");
  if (in_channels != 2) throw ConfigError("BEV input has 2 channels");
  if (levels < 1 || base_channels < 1) throw ConfigError("levels and base_channels must be positive");
  const int div = 1 << (levels - 1);
  for (int d : dims) {
    if (d <= 0 || d % div) throw ConfigError("BEV dims must be divisible by " + std::to_string(div));
  }
}

UNetConfig Bev2DConfig::unet() const {
  UNetConfig u;
  u.spatial_rank = 2;
  u.input_dims = {dims[0], dims[1]};
  u.in_channels = in_channels;
  u.levels = levels;
  u.base_channels = base_channels;
  u.out_channels = num_regions;
  u.use_mfa = false;
  u.use_fs = false;
  return u;
}

std::string Bev2DConfig::canonical() const {
  std::ostringstream os;
  os << "model=bev2d\n"
     << "dims=" << dims[0] << "," << dims[1] << "\n"
     << "in_channels=" << in_channels << "\n"
     << "num_regions=" << num_regions << "\n"
     << "levels=" << levels << "\n"
     << "base_channels=" << base_channels << "\n";
  return os.str();
}

Bev2D::Bev2D(const Bev2DConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)), store_(seed), net_("bev2d", cfg_.unet(), store_) {}

Tensor bev_tensor(const BevGrid& bev) { return Tensor({bev.w, bev.h, 2}, bev.features); }

BevGrid transform_bev(const BevGrid& bev, const GridTransform& t) {
  const int turns = ((t.quarter_turns % 4) + 4) % 4;
  if (turns % 2 == 1 && bev.w != bev.h) throw ShapeError("odd quarter turns need a square BEV grid");
  BevGrid out = bev;
  for (int i = 0; i < bev.w; ++i)
    for (int j = 0; j < bev.h; ++j) {
      int a = t.flip_x ? bev.w - 1 - i : i;
      int b = t.flip_y ? bev.h - 1 - j : j;
      int w = bev.w, h = bev.h;
      for (int k = 0; k < turns; ++k) {
        const int na = h - 1 - b;
        const int nb = a;
        a = na;
        b = nb;
        std::swap(w, h);
      }
      const std::size_t src = bev.flat(i, j);
      const std::size_t dst = static_cast<std::size_t>(a) * h + b;
      out.features[dst * 2] = bev.features[src * 2];
      out.features[dst * 2 + 1] = bev.features[src * 2 + 1];
      out.region_labels[dst] = bev.region_labels[src];
    }
  if (turns % 2 == 1) std::swap(out.w, out.h);
  return out;
}

std::vector<double> region_class_weights(const std::vector<BevGrid>& dataset) {
  std::array<double, kNumRegions> count{};
  double total = 0.0;
  for (const auto& b : dataset) {
    for (auto r : b.region_labels) {
      count[static_cast<int>(r)] += 1.0;
      total += 1.0;
    }
  }
  std::vector<double> freq;
  for (double c : count) {
    if (c > 0.0) freq.push_back(c / total);
  }
  std::vector<double> w(kNumRegions, 1.0);
  if (freq.empty()) return w;
  std::sort(freq.begin(), freq.end());
  const double median = freq.size() % 2 ? freq[freq.size() / 2]
                                        : 0.5 * (freq[freq.size() / 2 - 1] + freq[freq.size() / 2]);
  for (int k = 0; k < kNumRegions; ++k) {
    if (count[k] > 0.0) w[k] = std::min(10.0, median / (count[k] / total));
  }
  return w;
}

namespace {

std::span<const std::uint8_t> region_codes(const BevGrid& b) {
  return {reinterpret_cast<const std::uint8_t*>(b.region_labels.data()), b.region_labels.size()};
}

}  // namespace

double pixel_accuracy(Bev2D& model, const std::vector<BevGrid>& dataset) {
  diff::NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  for (const auto& b : dataset) {
    const auto pred = diff::argmax_last(model.forward(bev_tensor(b), BnMode::eval));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == static_cast<int>(b.region_labels[i]);
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

Pretrain2DResult pretrain_2d(Bev2D& model, const std::vector<BevGrid>& dataset, const Pretrain2DOptions& opts) {
  if (dataset.empty()) throw Error("pretrain_2d: empty dataset");
  if (opts.epochs < 1) throw ConfigError("pretrain_2d: epochs must be >= 1");
  if (opts.frozen_bn_epochs < 0 || opts.frozen_bn_epochs > opts.epochs) {
    throw ConfigError("pretrain_2d: frozen_bn_epochs must be within [0, epochs]");
  }
  for (const auto& b : dataset) {
    if (b.w != model.config().dims[0] || b.h != model.config().dims[1]) {
      throw ShapeError("pretrain_2d: BEV dims do not match the network");
    }
  }
  const std::vector<double> weights = region_class_weights(dataset);
  const bool square = model.config().dims[0] == model.config().dims[1];
  diff::Adam adam(model.params().trainable(), {.lr = opts.lr});
  Rng rng(opts.seed);
  Pretrain2DResult result;
  std::vector<std::size_t> order(dataset.size());
  const int freeze_from = opts.epochs - opts.frozen_bn_epochs + 1;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    if (epoch == freeze_from) {
      std::vector<Tensor> inputs;
      for (const auto& b : dataset) inputs.push_back(bev_tensor(b));
      model.net().recalibrate_batch_norm(inputs);
    }
    const BnMode mode = epoch >= freeze_from ? BnMode::eval : BnMode::train;
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      BevGrid sample = dataset[idx];
      if (opts.augment) {
        GridTransform t;
        t.flip_x = rng.unit() < 0.5;
        t.flip_y = rng.unit() < 0.5;
        t.quarter_turns = static_cast<int>(rng.index(4));
        if (!square) t.quarter_turns &= ~1;
        sample = transform_bev(sample, t);
      }
      const Tensor logits = model.forward(bev_tensor(sample), mode);
      const Tensor loss = wce_loss(logits, region_codes(sample), weights);
      diff::backward(loss);
      adam.step();
      epoch_loss += loss.item();
    }
    epoch_loss /= static_cast<double>(dataset.size());
    result.epoch_loss.push_back(epoch_loss);
    result.epochs_run = epoch;
    if (opts.on_epoch) opts.on_epoch(epoch, epoch_loss);
    if (opts.stop_at_accuracy > 0.0 && (epoch % std::max(1, opts.accuracy_every) == 0 || epoch == opts.epochs)) {
      result.final_accuracy = pixel_accuracy(model, dataset);
      if (result.final_accuracy >= opts.stop_at_accuracy) break;
    }
  }
  if (opts.stop_at_accuracy <= 0.0) result.final_accuracy = pixel_accuracy(model, dataset);
  return result;
}

}  // namespace sunet
