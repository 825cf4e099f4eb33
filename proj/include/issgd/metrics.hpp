#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace issgd {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// One line of the metrics CSV. NaN fields are written as empty cells.
struct MetricsRow {
  std::int64_t step = 0;
  double wall_seconds = 0.0;
  double train_loss = kMissing;
  double train_err = kMissing;
  double valid_err = kMissing;
  double test_err = kMissing;
  double tr_ideal = kMissing;
  double tr_stale = kMissing;
  double tr_unif = kMissing;
  double gtrue_sq_est = kMissing;
  double kept_fraction = kMissing;
  std::uint64_t params_version = 0;
  bool fallback_flag = false;
};

inline constexpr const char* kMetricsHeader =
    "step,wall_seconds,train_loss,train_err,valid_err,test_err,tr_ideal,tr_stale,tr_unif,gtrue_sq_est,"
    "kept_fraction,params_version,fallback_flag";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Linear interpolation between closest ranks, q in [0, 1]. Infinities sort last.
double quantile(std::vector<double> values, double q);

struct Quartiles {
  double q1 = kMissing;
  double median = kMissing;
  double q3 = kMissing;
};
Quartiles quartiles(std::span<const double> values);

// First logged step whose train loss is at or below the threshold.
std::optional<std::int64_t> updates_to_loss(std::span<const MetricsRow> rows, double threshold);

}  // namespace issgd
