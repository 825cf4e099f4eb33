#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <stop_token>
#include <string_view>
#include <vector>

#include "issgd/dataset.hpp"
#include "issgd/metrics.hpp"
#include "issgd/mlp.hpp"
#include "issgd/sampler.hpp"
#include "issgd/store.hpp"
#include "issgd/variance.hpp"

namespace issgd {

enum class TrainMode { sgd, issgd, issgd_exact };

std::string_view to_string(TrainMode mode);
// Accepts "sgd", "issgd" and "issgd-exact".
TrainMode parse_mode(std::string_view text);

class BarrierTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MasterConfig {
  TrainMode mode = TrainMode::issgd;
  double learning_rate = 0.01;
  std::size_t batch_size = 128;
  double smoothing = 1.0;
  // Relaxed mode: keep only weights written within this many store seconds.
  std::optional<double> staleness_seconds;
  // Relaxed mode: keep only weights scored against the latest pushed version.
  bool staleness_by_version = false;
  std::size_t param_push_every = 20;
  std::size_t total_updates = 1000;
  std::uint64_t seed = 0;
  // Sample uniformly until this fraction of the training set has a weight.
  double bootstrap_min_coverage = 0.95;
  std::size_t metrics_every = 50;
  // Examples audited for fresh gradient norms at metric steps (whole set if smaller).
  std::size_t audit_size = 2048;
  std::size_t proposal_refresh_every = 1;
  // Barrier size in exact mode.
  std::size_t num_workers = 1;
  double barrier_timeout_seconds = 120.0;
  double poll_interval_seconds = 0.0005;

  void validate() const;
};

struct WorkerConfig {
  std::uint32_t worker_id = 0;
  std::uint32_t num_workers = 1;
  std::size_t scoring_batch = 256;
  double poll_interval_seconds = 0.01;
  // Keep rescoring the latest parameters; otherwise score each version once.
  bool continuous = true;
};

ParamsSnapshot to_snapshot(const ModelParams& params);
ModelParams from_snapshot(const ParamsSnapshot& snapshot);

// Residue class worker_id mod num_workers over [0, population).
std::vector<std::uint32_t> shard_indices(std::uint32_t worker_id, std::uint32_t num_workers, std::size_t population);

struct MinibatchGradient {
  Minibatch batch;
  BackwardResult gradient;
  // sum_m c_m * loss_m, an unbiased estimate of the mean training loss.
  double scaled_loss = 0.0;
};

// Draws a minibatch (uniform when proposal is null) and differentiates the
// importance-scaled loss.
MinibatchGradient minibatch_gradient(const ModelParams& params, const Proposal* proposal, const Matrix& x,
                                     std::span<const Label> y, std::size_t batch_size, Rng& rng);

struct StepOutcome {
  double scaled_loss = 0.0;
  Minibatch batch;
};

// One plain SGD update on the importance-scaled loss. In sgd mode the proposal
// is ignored and every coefficient is 1/M.
StepOutcome master_step(ModelParams& params, const Proposal* proposal, const Matrix& x, std::span<const Label> y,
                        const MasterConfig& cfg, Rng& rng);

struct StepRecord {
  std::int64_t step = 0;
  StepOutcome outcome;
  bool fallback = false;
  std::optional<VarianceReport> report;
  double kept_fraction = kMissing;
};

// The trainer. Talks to the workers only through the store.
class Master {
 public:
  // store may be null in sgd mode.
  Master(MasterConfig cfg, const TrainingData& data, ModelParams initial, StoreClient* store);

  // Called repeatedly while the exact-mode barrier waits; defaults to sleeping.
  void set_wait_hook(std::function<void()> hook) { wait_hook_ = std::move(hook); }
  // Called after every parameter update.
  void set_step_hook(std::function<void(std::int64_t)> hook) { step_hook_ = std::move(hook); }

  // Runs cfg.total_updates steps and returns one metrics row per logged step.
  std::vector<MetricsRow> run();

  // One full iteration of the configured mode. In exact mode this is a
  // synchronized round: push, barrier, proposal at the pushed version, update.
  StepRecord advance(bool with_report);

  // Fresh-norm diagnostics for the current parameters and proposal.
  VarianceReport variance_report(std::int64_t step) const;

  const ModelParams& params() const { return params_; }
  std::uint64_t version() const { return version_; }
  const std::optional<Proposal>& proposal() const { return proposal_; }
  std::span<const std::uint32_t> audit_indices() const { return audit_; }
  std::int64_t steps_done() const { return steps_; }

 private:
  void start();
  void push_params();
  void wait_for_workers(std::uint64_t version);
  void refresh_relaxed();
  void refresh_exact();
  void install(std::vector<WeightEntry> entries);
  MetricsRow make_row(const StepRecord& rec, bool fallback_since_last) const;

  MasterConfig cfg_;
  const TrainingData& data_;
  ModelParams params_;
  StoreClient* store_;
  Rng rng_;
  std::uint64_t version_ = 0;
  std::int64_t steps_ = 0;
  bool started_ = false;
  bool bootstrapped_ = false;
  std::optional<Proposal> proposal_;
  std::vector<std::uint32_t> audit_;
  std::chrono::steady_clock::time_point t0_;
  std::function<void()> wait_hook_;
  std::function<void(std::int64_t)> step_hook_;
};

// Synchronized round; requires a master in exact mode.
StepRecord run_exact_round(Master& master);

// Scores per-example gradient norms against the latest parameters in the store.
class Worker {
 public:
  Worker(WorkerConfig cfg, StoreClient& store, const Matrix& x, std::span<const Label> y);

  // Scores one chunk of the shard, starting a new sweep if none is in progress.
  // Returns the number of weights pushed; 0 when idle.
  std::size_t tick();
  // Finishes the current sweep, or runs a whole new one.
  std::size_t sweep();
  // Loops until stop is requested, backing off while the store is unreachable.
  void run(std::stop_token stop);

  std::uint64_t scored_version() const { return scored_version_; }
  std::span<const std::uint32_t> shard() const { return shard_; }

 private:
  bool begin_sweep();
  void finish_sweep();

  WorkerConfig cfg_;
  StoreClient& store_;
  const Matrix& x_;
  std::span<const Label> y_;
  std::vector<std::uint32_t> shard_;
  std::optional<ModelParams> model_;
  std::size_t cursor_ = 0;
  std::uint64_t scored_version_ = 0;
};

}  // namespace issgd
