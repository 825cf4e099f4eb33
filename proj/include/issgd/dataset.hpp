#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "issgd/matrix.hpp"
#include "issgd/mlp.hpp"

namespace issgd {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> valid;
  std::vector<std::uint32_t> test;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return features.cols(); }

  // Labels in range and splits disjoint and in range.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Shuffled split: test_fraction of the rows are held out for test, then
// valid_fraction of the remaining pool becomes the validation set.
void assign_default_splits(Dataset& ds, std::uint64_t seed, double test_fraction = 0.1, double valid_fraction = 0.05);

struct SynthSpec {
  std::size_t n = 10000;
  std::size_t dims = 32;
  std::size_t classes = 10;
  // Fraction of examples placed close to a boundary with another class.
  double difficulty_tail = 0.2;
  std::uint64_t seed = 0;
};

// Gaussian class clusters; a difficulty_tail fraction of the examples sit
// between their own class centre and a neighbouring one.
Dataset synth_dataset(const SynthSpec& spec);

// Text format: header "issgd-ds v1 N D C", then one row per example with the
// label first and D decimal features, comma separated. Splits are written to
// <path>.train / <path>.valid / <path>.test as one index per line.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

// Missing split files fall back to assign_default_splits with seed 0.
Dataset load_dataset(const std::filesystem::path& path);

// Split-gathered copies used by the training actors.
struct TrainingData {
  Matrix train_x;
  std::vector<Label> train_y;
  Matrix valid_x;
  std::vector<Label> valid_y;
  Matrix test_x;
  std::vector<Label> test_y;
  std::size_t num_classes = 0;

  static TrainingData from(const Dataset& ds);
  std::size_t train_size() const { return train_y.size(); }
};

}  // namespace issgd
