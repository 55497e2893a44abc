#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sunet/point_cloud.hpp"

namespace sunet {

/// Precision, recall and F1 in percent.
struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Confusion rows are ground truth, columns are predictions.
struct MetricsReport {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};
  std::array<ClassMetrics, kNumClasses> per_class{};
  double accuracy = 0.0;  // percent

  /// Mean F1 over the four foreground classes.
  double macro_f1() const;
  std::uint64_t total() const;
};

/// Foreground classes in table order.
inline constexpr std::array<ObjectClass, 4> kReportClasses{ObjectClass::pylon, ObjectClass::powerline,
                                                           ObjectClass::vegetation, ObjectClass::ground};

/// Per-class metrics from a filled confusion matrix.
void finalize_metrics(MetricsReport& report);

MetricsReport evaluate(std::span<const ObjectClass> predicted, std::span<const ObjectClass> truth);

/// "class,precision,recall,f1,support" rows for every class plus an accuracy row.
std::string metrics_csv(const MetricsReport& report);
/// Aligned table of the foreground classes and the confusion matrix.
std::string metrics_table(const MetricsReport& report);

}  // namespace sunet
