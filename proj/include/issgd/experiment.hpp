#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "issgd/actors.hpp"
#include "issgd/dataset.hpp"
#include "issgd/metrics.hpp"
#include "issgd/tcp.hpp"

namespace issgd {

enum class Transport {
  // Store and workers live in this process and share memory through LocalStoreClient.
  inproc,
  // A TCP store is started in this process; master and workers connect over loopback.
  local_tcp,
  // An external store; workers are threads here unless num_workers is 0.
  remote_tcp,
};

struct ExperimentConfig {
  MasterConfig master;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t num_workers = 2;
  std::size_t scoring_batch = 256;
  Transport transport = Transport::inproc;
  std::optional<Endpoint> store_endpoint;
  std::uint16_t store_port = 0;
  // Workers are stepped in the master's thread: deterministic and reproducible.
  bool lockstep = false;
  // Chunks each worker scores per master update in lockstep relaxed mode.
  std::size_t worker_ticks_per_step = 1;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  std::optional<double> loss_threshold;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

struct ExperimentSummary {
  Quartiles final_train_loss;
  Quartiles final_test_err;
  // Seeds that never reach the threshold count as +inf.
  std::optional<Quartiles> updates_to_threshold;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  ExperimentSummary summary;
};

// One training run per seed; seed k uses cfg.seed + k for both initialization
// and sampling.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data);

ExperimentSummary summarize(const std::vector<SeedRun>& runs, std::optional<double> loss_threshold);

// "out.csv" for a single seed, "out.seed3.csv" for seed index 3 otherwise.
std::string metrics_path_for(const std::string& base, std::size_t seed_index, std::size_t seeds);

std::string format_summary(const ExperimentSummary& summary, std::size_t seeds);

}  // namespace issgd
