#include <doctest.h>

#include <cmath>
#include <vector>

#include "issgd/experiment.hpp"

using namespace issgd;

namespace {

Dataset small_task() {
  SynthSpec spec;
  spec.n = 800;
  spec.dims = 8;
  spec.classes = 4;
  spec.seed = 5;
  return synth_dataset(spec);
}

ExperimentConfig small_config(TrainMode mode) {
  ExperimentConfig cfg;
  cfg.master.mode = mode;
  cfg.master.total_updates = 80;
  cfg.master.metrics_every = 20;
  cfg.master.batch_size = 16;
  cfg.master.learning_rate = 0.05;
  cfg.master.param_push_every = 5;
  cfg.master.barrier_timeout_seconds = 30.0;
  cfg.hidden = {16};
  cfg.num_workers = 2;
  cfg.scoring_batch = 64;
  return cfg;
}

}  // namespace

TEST_CASE("threaded workers over loopback TCP, relaxed mode") {
  auto cfg = small_config(TrainMode::issgd);
  cfg.transport = Transport::local_tcp;
  const auto result = run_experiment(cfg, small_task());
  const auto& rows = result.runs.at(0).rows;
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.train_loss));
    CHECK(std::isfinite(r.tr_ideal));
    CHECK(std::isfinite(r.tr_unif));
    CHECK(r.params_version >= 1);
  }
  CHECK(rows.back().train_loss < rows.front().train_loss);
}

TEST_CASE("threaded workers, exact mode over TCP") {
  auto cfg = small_config(TrainMode::issgd_exact);
  cfg.transport = Transport::local_tcp;
  cfg.master.smoothing = 0.0;
  const auto result = run_experiment(cfg, small_task());
  for (const auto& r : result.runs.at(0).rows) {
    CHECK_FALSE(r.fallback_flag);
    CHECK(std::abs(r.tr_stale - r.tr_ideal) <= 1e-9);
    CHECK(r.kept_fraction == 1.0);
  }
}

TEST_CASE("lockstep TCP and in-process runs agree exactly") {
  auto cfg = small_config(TrainMode::issgd);
  cfg.lockstep = true;
  cfg.worker_ticks_per_step = 1;
  const auto ds = small_task();
  const auto local = run_experiment(cfg, ds);
  cfg.transport = Transport::local_tcp;
  const auto tcp = run_experiment(cfg, ds);
  const auto& a = local.runs[0].rows;
  const auto& b = tcp.runs[0].rows;
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train_loss == b[i].train_loss);
    CHECK(a[i].tr_stale == b[i].tr_stale);
  }
}

TEST_CASE("multiple seeds and summary") {
  auto cfg = small_config(TrainMode::sgd);
  cfg.seeds = 3;
  cfg.seed = 10;
  cfg.loss_threshold = 10.0;
  const auto result = run_experiment(cfg, small_task());
  REQUIRE(result.runs.size() == 3);
  CHECK(result.runs[0].seed == 10);
  CHECK(result.runs[2].seed == 12);
  CHECK(result.runs[0].rows.back().train_loss != result.runs[1].rows.back().train_loss);
  REQUIRE(result.summary.updates_to_threshold);
  CHECK(result.summary.updates_to_threshold->median == 20.0);
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = small_config(TrainMode::issgd_exact);
  cfg.num_workers = 0;
  CHECK_THROWS(run_experiment(cfg, small_task()));
  cfg = small_config(TrainMode::issgd);
  cfg.transport = Transport::remote_tcp;
  CHECK_THROWS(run_experiment(cfg, small_task()));
  cfg = small_config(TrainMode::sgd);
  cfg.seeds = 0;
  CHECK_THROWS(run_experiment(cfg, small_task()));
}
