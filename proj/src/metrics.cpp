#include "issgd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace issgd {

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : fmt::format("{}", v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::runtime_error(fmt::format("metrics line {}: bad number '{}'", line_no, text));
  }
  return v;
}

double parse_cell(const std::string& text, std::size_t line_no) {
  return text.empty() ? kMissing : parse_number<double>(text, line_no);
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    fmt::print(out, "{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.step, cell(r.wall_seconds), cell(r.train_loss),
               cell(r.train_err), cell(r.valid_err), cell(r.test_err), cell(r.tr_ideal), cell(r.tr_stale),
               cell(r.tr_unif), cell(r.gtrue_sq_est), cell(r.kept_fraction), r.params_version,
               r.fallback_flag ? 1 : 0);
  }
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write metrics file {}", path));
  write_metrics_csv(out, rows);
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw std::runtime_error("metrics: unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 13) {
      throw std::runtime_error(fmt::format("metrics line {}: {} columns, expected 13", line_no, cells.size()));
    }
    MetricsRow r;
    r.step = parse_number<std::int64_t>(cells[0], line_no);
    r.wall_seconds = parse_cell(cells[1], line_no);
    r.train_loss = parse_cell(cells[2], line_no);
    r.train_err = parse_cell(cells[3], line_no);
    r.valid_err = parse_cell(cells[4], line_no);
    r.test_err = parse_cell(cells[5], line_no);
    r.tr_ideal = parse_cell(cells[6], line_no);
    r.tr_stale = parse_cell(cells[7], line_no);
    r.tr_unif = parse_cell(cells[8], line_no);
    r.gtrue_sq_est = parse_cell(cells[9], line_no);
    r.kept_fraction = parse_cell(cells[10], line_no);
    r.params_version = parse_number<std::uint64_t>(cells[11], line_no);
    r.fallback_flag = parse_number<int>(cells[12], line_no) != 0;
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot read metrics file {}", path));
  return read_metrics_csv(in);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return kMissing;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi || values[lo] == values[hi]) return values[lo];
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Quartiles quartiles(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  return {quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)};
}

std::optional<std::int64_t> updates_to_loss(std::span<const MetricsRow> rows, double threshold) {
  for (const auto& r : rows) {
    if (r.train_loss <= threshold) return r.step;
  }
  return std::nullopt;
}

}  // namespace issgd
