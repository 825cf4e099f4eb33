#include "issgd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>

namespace issgd {

namespace fs = std::filesystem;

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw DatasetError(fmt::format("dataset has {} feature rows and {} labels", features.rows(), labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DatasetError(fmt::format("row {}: label {} outside [0, {})", i, labels[i], num_classes));
    }
  }
  std::vector<char> owner(labels.size(), 0);
  auto mark = [&](const std::vector<std::uint32_t>& split, const char* name) {
    for (std::uint32_t i : split) {
      if (i >= labels.size()) throw DatasetError(fmt::format("{} split index {} out of range", name, i));
      if (owner[i]) throw DatasetError(fmt::format("index {} appears in more than one split", i));
      owner[i] = 1;
    }
  };
  mark(train, "train");
  mark(valid, "valid");
  mark(test, "test");
}

void assign_default_splits(Dataset& ds, std::uint64_t seed, double test_fraction, double valid_fraction) {
  const std::size_t n = ds.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::floor(valid_fraction * static_cast<double>(n - n_test)));
  ds.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  ds.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                  order.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid));
  ds.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid), order.end());
  std::sort(ds.test.begin(), ds.test.end());
  std::sort(ds.valid.begin(), ds.valid.end());
  std::sort(ds.train.begin(), ds.train.end());
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (spec.classes < 2) throw std::invalid_argument("synth_dataset: classes must be >= 2");
  if (spec.dims < 1) throw std::invalid_argument("synth_dataset: dims must be >= 1");
  if (!(spec.difficulty_tail >= 0.0 && spec.difficulty_tail <= 1.0)) {
    throw std::invalid_argument("synth_dataset: difficulty_tail must be in [0, 1]");
  }
  constexpr double kCentreRadius = 4.0;
  constexpr double kCoreSpread = 0.7;
  constexpr double kTailSpread = 0.3;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.classes - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, spec.classes - 2);

  Matrix centres(spec.classes, spec.dims);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    auto row = centres.row(c);
    for (double& v : row) v = normal(rng);
    const double norm = std::sqrt(sq_norm(row));
    for (double& v : row) v *= kCentreRadius / norm;
  }

  Dataset ds;
  ds.num_classes = spec.classes;
  ds.features = Matrix(spec.n, spec.dims);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = pick_class(rng);
    ds.labels[i] = static_cast<Label>(c);
    auto x = ds.features.row(i);
    auto own = centres.row(c);
    if (unit(rng) < spec.difficulty_tail) {
      std::size_t other = pick_other(rng);
      if (other >= c) ++other;
      // Between 30% and 45% of the way towards the other centre: still on the
      // own side of the midplane, but close to it.
      const double t = 0.30 + 0.15 * unit(rng);
      auto far = centres.row(other);
      for (std::size_t j = 0; j < spec.dims; ++j) {
        x[j] = (1.0 - t) * own[j] + t * far[j] + kTailSpread * normal(rng);
      }
    } else {
      for (std::size_t j = 0; j < spec.dims; ++j) x[j] = own[j] + kCoreSpread * normal(rng);
    }
  }
  assign_default_splits(ds, spec.seed ^ 0x5eed5eedULL);
  return ds;
}

namespace {

void write_split(const fs::path& path, const std::vector<std::uint32_t>& split) {
  auto out = fmt::output_file(path.string());
  for (std::uint32_t i : split) out.print("{}\n", i);
}

std::vector<std::uint32_t> read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot open split file {}", path.string()));
  std::vector<std::uint32_t> split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw DatasetError(fmt::format("{}:{}: bad index '{}'", path.string(), line_no, line));
    }
    split.push_back(v);
  }
  return split;
}

fs::path split_path(const fs::path& path, const char* name) {
  fs::path p = path;
  p += std::string(".") + name;
  return p;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& path) {
  ds.validate();
  {
    auto out = fmt::output_file(path.string());
    out.print("issgd-ds v1 {} {} {}\n", ds.size(), ds.dims(), ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      out.print("{}", ds.labels[i]);
      for (double v : ds.features.row(i)) out.print(",{}", v);
      out.print("\n");
    }
  }
  write_split(split_path(path, "train"), ds.train);
  write_split(split_path(path, "valid"), ds.valid);
  write_split(split_path(path, "test"), ds.test);
}

Dataset load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot open dataset {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw DatasetError(fmt::format("{}:1: missing header", path.string()));
  std::istringstream header(line);
  std::string magic;
  std::string version;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t c = 0;
  std::string extra;
  if (!(header >> magic >> version >> n >> d >> c) || magic != "issgd-ds" || version != "v1" || (header >> extra)) {
    throw DatasetError(fmt::format("{}:1: malformed header '{}'", path.string(), line));
  }
  if (d == 0 || c == 0) throw DatasetError(fmt::format("{}:1: dims and classes must be >= 1", path.string()));

  Dataset ds;
  ds.num_classes = c;
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 2;
    if (!std::getline(in, line)) {
      throw DatasetError(fmt::format("{}:{}: expected {} rows, file ends after {}", path.string(), line_no, n, i));
    }
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto fail = [&](const std::string& why) {
      return DatasetError(fmt::format("{}:{}: {}", path.string(), line_no, why));
    };
    Label label = 0;
    auto [lp, lec] = std::from_chars(p, end, label);
    if (lec != std::errc{}) throw fail("bad label");
    if (label >= c) throw fail(fmt::format("label {} outside [0, {})", label, c));
    ds.labels[i] = label;
    p = lp;
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      if (p == end || *p != ',') throw fail(fmt::format("expected {} features, found {}", d, j));
      ++p;
      auto [fp, fec] = std::from_chars(p, end, row[j]);
      if (fec != std::errc{}) throw fail(fmt::format("bad feature {}", j));
      p = fp;
    }
    if (p != end) throw fail("trailing characters");
  }
  while (std::getline(in, line)) {
    if (!line.empty()) throw DatasetError(fmt::format("{}: more rows than the header declares", path.string()));
  }

  const auto train = split_path(path, "train");
  const auto valid = split_path(path, "valid");
  const auto test = split_path(path, "test");
  if (fs::exists(train) || fs::exists(valid) || fs::exists(test)) {
    ds.train = read_split(train);
    ds.valid = read_split(valid);
    ds.test = read_split(test);
  } else {
    assign_default_splits(ds, 0);
  }
  ds.validate();
  return ds;
}

TrainingData TrainingData::from(const Dataset& ds) {
  TrainingData td;
  td.num_classes = ds.num_classes;
  auto take = [&](const std::vector<std::uint32_t>& idx, Matrix& x, std::vector<Label>& y) {
    x = gather_rows(ds.features, std::span<const std::uint32_t>(idx));
    y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = ds.labels[idx[i]];
  };
  take(ds.train, td.train_x, td.train_y);
  take(ds.valid, td.valid_x, td.valid_y);
  take(ds.test, td.test_x, td.test_y);
  return td;
}

}  // namespace issgd
