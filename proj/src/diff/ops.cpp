#include "sunet/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sunet/errors.hpp"

namespace sunet::diff {

namespace {

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

// Spatial view of a channel-last tensor: 2D maps get Z = 1.
struct Spatial {
  int x, y, z, c;
  bool is3d;
};

Spatial spatial_of(const Tensor& t, const char* op) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), 1, t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw ShapeError(std::string(op) + ": expected (X,Y,C) or (X,Y,Z,C), got " + shape_string(t.shape()));
}

Shape spatial_shape(const Spatial& s) {
  return s.is3d ? Shape{s.x, s.y, s.z, s.c} : Shape{s.x, s.y, s.c};
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s{1, static_cast<std::size_t>(shape[axis]), 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Broadcast { same, per_position, per_channel };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  const int r = a.rank();
  if (b.rank() == r && b.dim(-1) == 1 &&
      std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    return Broadcast::per_position;
  }
  if (b.rank() == 1 && b.dim(0) == a.dim(-1)) return Broadcast::per_channel;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " onto " +
                   shape_string(a.shape()));
}

inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t channels) {
  switch (kind) {
    case Broadcast::same: return i;
    case Broadcast::per_position: return i / channels;
    case Broadcast::per_channel: return i % channels;
  }
  return i;
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, Fwd fwd, Dfdx dfdx) {
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Spatial s = spatial_of(input, "conv");
  const int wr = s.is3d ? 5 : 4;
  if (weight.rank() != wr) {
    throw ShapeError("conv: weight " + shape_string(weight.shape()) + " does not match input rank");
  }
  const int kx = weight.dim(0), ky = weight.dim(1), kz = s.is3d ? weight.dim(2) : 1;
  const int ci = weight.dim(wr - 2), co = weight.dim(wr - 1);
  if (ci != s.c) {
    throw ShapeError("conv: input has " + std::to_string(s.c) + " channels, weight expects " + std::to_string(ci));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co)) throw ShapeError("conv: bias shape mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv: invalid stride/padding");
  const int pz = s.is3d ? padding : 0;
  const int ox = (s.x + 2 * padding - kx) / stride + 1;
  const int oy = (s.y + 2 * padding - ky) / stride + 1;
  const int oz = (s.z + 2 * pz - kz) / stride + 1;
  if (s.x + 2 * padding < kx || s.y + 2 * padding < ky || s.z + 2 * pz < kz) {
    throw ShapeError("conv: kernel larger than padded input");
  }

  struct Geom {
    int X, Y, Z, Ci, KX, KY, KZ, Co, OX, OY, OZ, stride, pad, padz;
  };
  const Geom g{s.x, s.y, s.z, ci, kx, ky, kz, co, ox, oy, oz, stride, padding, pz};

  // Visits every (output position, kernel tap, input position) triple with the tap in range.
  const auto for_each_tap = [](const Geom& g, auto&& fn) {
    for (int x = 0; x < g.OX; ++x)
      for (int y = 0; y < g.OY; ++y)
        for (int z = 0; z < g.OZ; ++z) {
          const std::size_t o = (static_cast<std::size_t>(x) * g.OY + y) * g.OZ + z;
          for (int a = 0; a < g.KX; ++a) {
            const int ix = x * g.stride - g.pad + a;
            if (ix < 0 || ix >= g.X) continue;
            for (int b = 0; b < g.KY; ++b) {
              const int iy = y * g.stride - g.pad + b;
              if (iy < 0 || iy >= g.Y) continue;
              for (int c = 0; c < g.KZ; ++c) {
                const int iz = z * g.stride - g.padz + c;
                if (iz < 0 || iz >= g.Z) continue;
                const std::size_t i = (static_cast<std::size_t>(ix) * g.Y + iy) * g.Z + iz;
                const std::size_t k = (static_cast<std::size_t>(a) * g.KY + b) * g.KZ + c;
                fn(o, k, i);
              }
            }
          }
        }
  };

  const std::size_t nout = static_cast<std::size_t>(ox) * oy * oz;
  std::vector<double> out(nout * co, 0.0);
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t o = 0; o < nout; ++o) std::copy(bv.begin(), bv.end(), out.begin() + o * co);
  }
  {
    const double* in = input.values().data();
    const double* w = weight.values().data();
    double* dst = out.data();
    for_each_tap(g, [&](std::size_t o, std::size_t k, std::size_t i) {
      const double* src = in + i * g.Ci;
      const double* wk = w + k * g.Ci * g.Co;
      double* acc = dst + o * g.Co;
      for (int c = 0; c < g.Ci; ++c) {
        const double v = src[c];
        if (v == 0.0) continue;
        const double* wc = wk + static_cast<std::size_t>(c) * g.Co;
        for (int d = 0; d < g.Co; ++d) acc[d] += v * wc[d];
      }
    });
  }

  Shape out_shape = s.is3d ? Shape{ox, oy, oz, co} : Shape{ox, oy, co};
  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(parents), [g, for_each_tap](Node& self) {
    Node& in_node = *self.parents[0];
    Node& w_node = *self.parents[1];
    const double* go = self.grad.data();
    const double* in = in_node.value.data();
    const double* w = w_node.value.data();
    double* gi = in_node.requires_grad ? in_node.grad_buffer().data() : nullptr;
    double* gw = w_node.requires_grad ? w_node.grad_buffer().data() : nullptr;
    if (gi || gw) {
      for_each_tap(g, [&](std::size_t o, std::size_t k, std::size_t i) {
        const double* gout = go + o * g.Co;
        const double* wk = w + k * g.Ci * g.Co;
        if (gi) {
          double* gdst = gi + i * g.Ci;
          for (int c = 0; c < g.Ci; ++c) {
            const double* wc = wk + static_cast<std::size_t>(c) * g.Co;
            double acc = 0.0;
            for (int d = 0; d < g.Co; ++d) acc += gout[d] * wc[d];
            gdst[c] += acc;
          }
        }
        if (gw) {
          const double* src = in + i * g.Ci;
          double* gwk = gw + k * g.Ci * g.Co;
          for (int c = 0; c < g.Ci; ++c) {
            const double v = src[c];
            if (v == 0.0) continue;
            double* gwc = gwk + static_cast<std::size_t>(c) * g.Co;
            for (int d = 0; d < g.Co; ++d) gwc[d] += v * gout[d];
          }
        }
      });
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      const std::size_t n = self.grad.size() / g.Co;
      for (std::size_t o = 0; o < n; ++o)
        for (int d = 0; d < g.Co; ++d) gb[d] += go[o * g.Co + d];
    }
  });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, BnMode mode) {
  const int c = input.dim(-1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.running_mean, &stats.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) throw ShapeError("batch_norm: parameter shape mismatch");
  }
  const std::size_t n = input.size() / c;
  const auto x = input.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);

  if (mode == BnMode::train) {
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) mu[k] += x[i * c + k];
    for (int k = 0; k < c; ++k) mu[k] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        const double d = x[i * c + k] - mu[k];
        var[k] += d * d;
      }
    auto rm = stats.running_mean.values();
    auto rv = stats.running_var.values();
    for (int k = 0; k < c; ++k) {
      const double biased = var[k] / static_cast<double>(n);
      inv_std[k] = 1.0 / std::sqrt(biased + stats.eps);
      const double unbiased = n > 1 ? var[k] / static_cast<double>(n - 1) : biased;
      rm[k] = (1.0 - stats.momentum) * rm[k] + stats.momentum * mu[k];
      rv[k] = (1.0 - stats.momentum) * rv[k] + stats.momentum * unbiased;
    }
  } else {
    const auto rm = stats.running_mean.values();
    const auto rv = stats.running_var.values();
    for (int k = 0; k < c; ++k) {
      mu[k] = rm[k];
      inv_std[k] = 1.0 / std::sqrt(rv[k] + stats.eps);
    }
  }

  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) out[i * c + k] = gv[k] * (x[i * c + k] - mu[k]) * inv_std[k] + bv[k];

  const bool train = mode == BnMode::train;
  return make_result(input.shape(), std::move(out), {input, gamma, beta},
                     [c, n, train, mu = std::move(mu), inv_std = std::move(inv_std)](Node& self) {
                       const Node& in = *self.parents[0];
                       const Node& gam = *self.parents[1];
                       const double* x = in.value.data();
                       const double* dy = self.grad.data();
                       std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         for (int k = 0; k < c; ++k) {
                           const double xhat = (x[i * c + k] - mu[k]) * inv_std[k];
                           sum_dy[k] += dy[i * c + k];
                           sum_dy_xhat[k] += dy[i * c + k] * xhat;
                         }
                       if (self.parents[1]->requires_grad) {
                         auto& gg = self.parents[1]->grad_buffer();
                         for (int k = 0; k < c; ++k) gg[k] += sum_dy_xhat[k];
                       }
                       if (self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (int k = 0; k < c; ++k) gb[k] += sum_dy[k];
                       }
                       if (!in.requires_grad) return;
                       auto& gx = self.parents[0]->grad_buffer();
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (int k = 0; k < c; ++k) {
                           const double scale = gam.value[k] * inv_std[k];
                           if (train) {
                             const double xhat = (x[i * c + k] - mu[k]) * inv_std[k];
                             gx[i * c + k] +=
                                 scale * (dy[i * c + k] - sum_dy[k] * inv_n - xhat * sum_dy_xhat[k] * inv_n);
                           } else {
                             gx[i * c + k] += scale * dy[i * c + k];
                           }
                         }
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  const auto in = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double m = in[base];
      for (std::size_t k = 1; k < s.n; ++k) m = std::max(m, in[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += (out[base + k * s.inner] = std::exp(in[base + k * s.inner] - m));
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  const auto in = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double m = in[base];
      for (std::size_t k = 1; k < s.n; ++k) m = std::max(m, in[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += std::exp(in[base + k * s.inner] - m);
      const double lse = m + std::log(z);
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] = in[base + k * s.inner] - lse;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double total = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) total += self.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += self.grad[j] - std::exp(self.value[j]) * total;
        }
      }
  });
}

Tensor max_pool(const Tensor& x, int factor) {
  const Spatial s = spatial_of(x, "max_pool");
  const int fz = s.is3d ? factor : 1;
  if (factor < 1 || s.x % factor || s.y % factor || s.z % fz) {
    throw ShapeError("max_pool: spatial dims " + shape_string(x.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  const Spatial o{s.x / factor, s.y / factor, s.z / fz, s.c, s.is3d};
  const std::size_t nout = static_cast<std::size_t>(o.x) * o.y * o.z * o.c;
  std::vector<double> out(nout);
  std::vector<std::size_t> argmax(nout);
  const auto in = x.values();
  for (int i = 0; i < o.x; ++i)
    for (int j = 0; j < o.y; ++j)
      for (int k = 0; k < o.z; ++k)
        for (int c = 0; c < o.c; ++c) {
          const std::size_t dst = ((static_cast<std::size_t>(i) * o.y + j) * o.z + k) * o.c + c;
          bool first = true;
          for (int a = 0; a < factor; ++a)
            for (int b = 0; b < factor; ++b)
              for (int d = 0; d < fz; ++d) {
                const std::size_t src =
                    ((static_cast<std::size_t>(i * factor + a) * s.y + (j * factor + b)) * s.z + (k * fz + d)) * s.c +
                    c;
                if (first || in[src] > out[dst]) {
                  out[dst] = in[src];
                  argmax[dst] = src;
                  first = false;
                }
              }
        }
  return make_result(spatial_shape(o), std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

Tensor upsample(const Tensor& x, int factor) {
  const Spatial s = spatial_of(x, "upsample");
  if (factor < 1) throw ShapeError("upsample: factor must be >= 1");
  const int fz = s.is3d ? factor : 1;
  const Spatial o{s.x * factor, s.y * factor, s.z * fz, s.c, s.is3d};
  std::vector<double> out(static_cast<std::size_t>(o.x) * o.y * o.z * o.c);
  const auto in = x.values();
  const auto src_of = [s, o, factor, fz](int i, int j, int k) {
    return ((static_cast<std::size_t>(i / factor) * s.y + j / factor) * s.z + k / fz) * s.c;
  };
  for (int i = 0; i < o.x; ++i)
    for (int j = 0; j < o.y; ++j)
      for (int k = 0; k < o.z; ++k) {
        const std::size_t dst = ((static_cast<std::size_t>(i) * o.y + j) * o.z + k) * o.c;
        std::copy_n(in.begin() + src_of(i, j, k), o.c, out.begin() + dst);
      }
  return make_result(spatial_shape(o), std::move(out), {x}, [o, src_of](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < o.x; ++i)
      for (int j = 0; j < o.y; ++j)
        for (int k = 0; k < o.z; ++k) {
          const std::size_t dst = ((static_cast<std::size_t>(i) * o.y + j) * o.z + k) * o.c;
          const std::size_t src = src_of(i, j, k);
          for (int c = 0; c < o.c; ++c) g[src + c] += self.grad[dst + c];
        }
  });
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const int r = inputs[0].rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = inputs[0].shape();
  out_shape[axis] = 0;
  for (const auto& t : inputs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int a = 0; a < r; ++a) {
      if (a != axis && t.dim(a) != inputs[0].dim(a)) {
        throw ShapeError("concat: shape mismatch " + shape_string(t.shape()) + " vs " +
                         shape_string(inputs[0].shape()));
      }
    }
    out_shape[axis] += t.dim(axis);
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : inputs) {
    offsets.push_back(off);
    const std::size_t n = static_cast<std::size_t>(t.dim(axis));
    const auto v = t.values();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(v.begin() + o * n * total.inner, n * total.inner,
                  out.begin() + (o * total.n + off) * total.inner);
    }
    off += n;
  }
  return make_result(std::move(out_shape), std::move(out), std::vector<Tensor>(inputs.begin(), inputs.end()),
                     [total, offsets = std::move(offsets)](Node& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         Node& par = *self.parents[p];
                         if (!par.requires_grad) continue;
                         auto& g = par.grad_buffer();
                         const std::size_t n = par.value.size() / (total.outer * total.inner);
                         for (std::size_t o = 0; o < total.outer; ++o) {
                           const double* src = self.grad.data() + (o * total.n + offsets[p]) * total.inner;
                           double* dst = g.data() + o * n * total.inner;
                           for (std::size_t i = 0; i < n * total.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> inputs, int axis) {
  return concat(std::span<const Tensor>(inputs.begin(), inputs.size()), axis);
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const std::size_t ch = static_cast<std::size_t>(a.dim(-1));
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[b_index(kind, i, ch)];
  return make_result(a.shape(), std::move(out), {a, b}, [kind, ch](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[b_index(kind, i, ch)] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const std::size_t ch = static_cast<std::size_t>(a.dim(-1));
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[b_index(kind, i, ch)];
  return make_result(a.shape(), std::move(out), {a, b}, [kind, ch](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[b_index(kind, i, ch)];
    }
    if (pb.requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[b_index(kind, i, ch)] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result({1}, {total}, {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> w) {
  if (w.size() != x.size()) throw ShapeError("weighted_sum: weight size mismatch");
  const auto v = x.values();
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += w[i] * v[i];
  return make_result({1}, {total}, {x}, [w = std::vector<double>(w.begin(), w.end())](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

Tensor slice(const Tensor& x, std::span<const int> start, std::span<const int> extent) {
  const int r = x.rank();
  if (static_cast<int>(start.size()) != r || static_cast<int>(extent.size()) != r) {
    throw ShapeError("slice: start/extent rank mismatch");
  }
  Shape out_shape(extent.begin(), extent.end());
  for (int a = 0; a < r; ++a) {
    if (start[a] < 0 || extent[a] < 1 || start[a] + extent[a] > x.dim(a)) {
      throw ShapeError("slice: window out of range on axis " + std::to_string(a));
    }
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (int a = r - 2; a >= 0; --a) in_stride[a] = in_stride[a + 1] * x.dim(a + 1);
  // Map every output element to its source offset once; reused by backward.
  const std::size_t n = shape_size(out_shape);
  std::vector<std::size_t> src(n);
  std::vector<int> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (int a = 0; a < r; ++a) off += (start[a] + idx[a]) * in_stride[a];
    src[o] = off;
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[a] < extent[a]) break;
      idx[a] = 0;
    }
  }
  std::vector<double> out(n);
  const auto v = x.values();
  for (std::size_t o = 0; o < n; ++o) out[o] = v[src[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += self.grad[o];
  });
}

Tensor expand_axis(const Tensor& x, int axis, int count) {
  const int r = x.rank();
  if (axis < 0) axis += r + 1;
  if (axis < 0 || axis > r) throw ShapeError("expand_axis: axis out of range");
  if (count < 1) throw ShapeError("expand_axis: count must be >= 1");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, count);
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= x.dim(a);
  for (int a = axis; a < r; ++a) inner *= x.dim(a);
  std::vector<double> out(outer * count * inner);
  const auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (int k = 0; k < count; ++k) std::copy_n(v.begin() + o * inner, inner, out.begin() + (o * count + k) * inner);
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, count](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (int k = 0; k < count; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[(o * count + k) * inner + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

std::vector<int> argmax_last(const Tensor& x) {
  const std::size_t c = static_cast<std::size_t>(x.dim(-1));
  const std::size_t n = x.size() / c;
  const auto v = x.values();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[i * c + k] > v[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace sunet::diff
