#include "sunet/diff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sunet/errors.hpp"
#include "sunet/rng.hpp"

namespace sunet::diff {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " checked=" << checked << " max_rel_error=" << max_rel_error
     << " max_abs_error=" << max_abs_error;
  if (kinks) os << " kinks=" << kinks;
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts) {
  std::vector<bool> restore_flag;
  for (auto& t : inputs) {
    restore_flag.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor loss = f();
    if (loss.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    backward(loss);
  }

  double f0 = 0.0;
  if (opts.skip_kinks) {
    NoGradGuard guard;
    f0 = f().item();
  }

  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = inputs[t];
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_samples_per_tensor && idx.size() > opts.max_samples_per_tensor) {
      // Partial Fisher-Yates keeps the selection deterministic under the seed.
      for (std::size_t i = 0; i < opts.max_samples_per_tensor; ++i) {
        std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      }
      idx.resize(opts.max_samples_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    std::vector<GradCheckEntry> local;
    std::vector<double> gaps;
    double scale = 1e-12;
    for (std::size_t i : idx) {
      auto v = x.values();
      const double orig = v[i];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      double fp, fm;
      {
        NoGradGuard guard;
        v[i] = orig + h;
        fp = f().item();
        v[i] = orig - h;
        fm = f().item();
        v[i] = orig;
      }
      const GradCheckEntry e{t, i, x.grad()[i], (fp - fm) / (2.0 * h)};
      scale = std::max({scale, std::abs(e.analytic), std::abs(e.numeric)});
      local.push_back(e);
      gaps.push_back(std::abs((fp - f0) - (f0 - fm)) / h);
    }
    for (std::size_t k = 0; k < local.size(); ++k) {
      auto& e = local[k];
      if (opts.skip_kinks && gaps[k] > opts.tol * scale) {
        e.kink = true;
        ++report.kinks;
        continue;
      }
      const double err = std::abs(e.analytic - e.numeric);
      report.max_abs_error = std::max(report.max_abs_error, err);
      report.max_rel_error = std::max(report.max_rel_error, err / scale);
    }
    report.checked += local.size();
    report.entries.insert(report.entries.end(), local.begin(), local.end());
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    inputs[t].zero_grad();
    inputs[t].set_requires_grad(restore_flag[t]);
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace sunet::diff
