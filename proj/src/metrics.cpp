#include "sunet/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "sunet/errors.hpp"

namespace sunet {

double MetricsReport::macro_f1() const {
  double s = 0.0;
  for (ObjectClass c : kReportClasses) s += per_class[static_cast<int>(c)].f1;
  return s / static_cast<double>(kReportClasses.size());
}

std::uint64_t MetricsReport::total() const {
  std::uint64_t n = 0;
  for (const auto& row : confusion)
    for (auto v : row) n += v;
  return n;
}

void finalize_metrics(MetricsReport& r) {
  std::uint64_t correct = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const std::uint64_t tp = r.confusion[c][c];
    std::uint64_t fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    correct += tp;
    ClassMetrics& m = r.per_class[c];
    m.precision = tp + fp ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  const std::uint64_t n = r.total();
  r.accuracy = n ? 100.0 * static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

MetricsReport evaluate(std::span<const ObjectClass> predicted, std::span<const ObjectClass> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  MetricsReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t >= kNumClasses || p >= kNumClasses) throw Error("evaluate: label out of range");
    ++r.confusion[t][p];
  }
  finalize_metrics(r);
  return r;
}

namespace {

std::string fixed(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "class,precision,recall,f1,support\n";
  for (int c = 0; c < kNumClasses; ++c) {
    std::uint64_t support = 0;
    for (auto v : r.confusion[c]) support += v;
    const auto& m = r.per_class[c];
    os << to_string(static_cast<ObjectClass>(c)) << ',' << fixed(m.precision, 6) << ',' << fixed(m.recall, 6)
       << ',' << fixed(m.f1, 6) << ',' << support << '\n';
  }
  os << "accuracy," << fixed(r.accuracy, 6) << ",,," << r.total() << '\n';
  os << "macro_f1,,," << fixed(r.macro_f1(), 6) << ",\n";
  return os.str();
}

std::string metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %10s %10s %10s\n", "class", "precision", "recall", "f1");
  os << line;
  for (ObjectClass c : kReportClasses) {
    const auto& m = r.per_class[static_cast<int>(c)];
    std::snprintf(line, sizeof line, "%-12s %10.2f %10.2f %10.2f\n", std::string(to_string(c)).c_str(), m.precision,
                  m.recall, m.f1);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-12s %32.2f\n", "macro_f1", r.macro_f1());
  os << line;
  std::snprintf(line, sizeof line, "%-12s %32.2f\n\n", "accuracy", r.accuracy);
  os << line;
  os << "confusion (rows = truth, cols = predicted)\n";
  std::snprintf(line, sizeof line, "%-12s", "");
  os << line;
  for (int c = 0; c < kNumClasses; ++c) {
    std::snprintf(line, sizeof line, " %11s", std::string(to_string(static_cast<ObjectClass>(c))).c_str());
    os << line;
  }
  os << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    std::snprintf(line, sizeof line, "%-12s", std::string(to_string(static_cast<ObjectClass>(t))).c_str());
    os << line;
    for (int p = 0; p < kNumClasses; ++p) {
      std::snprintf(line, sizeof line, " %11llu", static_cast<unsigned long long>(r.confusion[t][p]));
      os << line;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace sunet
