#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "issgd/actors.hpp"
#include "issgd/dataset.hpp"

using namespace issgd;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "issgd_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Per-example gradient norms after a short stretch of plain SGD.
std::vector<double> norms_after_training(double tail) {
  SynthSpec spec;
  spec.n = 3000;
  spec.dims = 16;
  spec.classes = 5;
  spec.difficulty_tail = tail;
  spec.seed = 4;
  const auto data = TrainingData::from(synth_dataset(spec));
  auto params = init_params(mlp_architecture(16, std::vector<std::size_t>{32}, 5), 1);
  MasterConfig cfg;
  cfg.mode = TrainMode::sgd;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 64;
  Rng rng(2);
  for (int t = 0; t < 300; ++t) master_step(params, nullptr, data.train_x, data.train_y, cfg, rng);
  auto sq = naive_per_example_norms(params, data.train_x, data.train_y);
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

double top_decile_share(std::vector<double> v) {
  std::sort(v.begin(), v.end(), std::greater<>());
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 10), 0.0) / total;
}

}  // namespace

TEST_CASE("generation is deterministic and splits are disjoint") {
  SynthSpec spec;
  spec.n = 500;
  spec.seed = 9;
  const auto a = synth_dataset(spec);
  const auto b = synth_dataset(spec);
  CHECK(a == b);
  CHECK(a.size() == 500);
  CHECK(a.dims() == 32);
  CHECK_NOTHROW(a.validate());
  CHECK(a.train.size() + a.valid.size() + a.test.size() == 500);
  spec.seed = 10;
  CHECK_FALSE(synth_dataset(spec) == a);

  const auto p1 = temp_path("det_a.txt");
  const auto p2 = temp_path("det_b.txt");
  save_dataset(a, p1);
  save_dataset(b, p2);
  CHECK(read_all(p1) == read_all(p2));
}

TEST_CASE("save then load is the identity") {
  SynthSpec spec;
  spec.n = 300;
  spec.dims = 5;
  spec.classes = 3;
  spec.seed = 1;
  const auto ds = synth_dataset(spec);
  const auto path = temp_path("round.txt");
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);
}

TEST_CASE("a single example survives the round trip") {
  SynthSpec spec;
  spec.n = 1;
  spec.dims = 3;
  spec.classes = 2;
  const auto ds = synth_dataset(spec);
  const auto path = temp_path("one.txt");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  CHECK(back == ds);
  CHECK(back.train.size() == 1);
}

TEST_CASE("missing files and malformed rows") {
  CHECK_THROWS_AS(load_dataset(temp_path("does_not_exist.txt")), DatasetError);
  const auto path = temp_path("bad.txt");
  {
    std::ofstream out(path);
    out << "issgd-ds v1 2 2 2\n0,1.0,2.0\n1,3.0,oops\n";
  }
  try {
    load_dataset(path);
    FAIL("expected a parse error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "issgd-ds v1 2 2 2\n0,1.0,2.0\n5,3.0,4.0\n";
  }
  CHECK_THROWS_AS(load_dataset(path), DatasetError);
}

TEST_CASE("without split files the default split is used") {
  const auto path = temp_path("nosplit.txt");
  {
    std::ofstream out(path);
    out << "issgd-ds v1 40 1 2\n";
    for (int i = 0; i < 40; ++i) out << (i % 2) << "," << i << "\n";
  }
  fs::remove(path.string() + ".train");
  const auto ds = load_dataset(path);
  CHECK(ds.train.size() + ds.valid.size() + ds.test.size() == 40);
  CHECK_FALSE(ds.test.empty());
  CHECK(load_dataset(path) == ds);
}

TEST_CASE("the difficulty tail concentrates gradient norm mass") {
  const auto easy = norms_after_training(0.0);
  const auto hard = norms_after_training(0.2);
  const double easy_share = top_decile_share(easy);
  const double hard_share = top_decile_share(hard);
  MESSAGE("top-10% norm share: tail 0 -> " << easy_share << ", tail 0.2 -> " << hard_share);
  CHECK(hard_share > easy_share);
}
