#include "issgd/experiment.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace issgd {

namespace {

std::vector<MetricsRow> run_seed(const ExperimentConfig& cfg, const TrainingData& data, std::uint64_t seed) {
  const auto specs = mlp_architecture(data.train_x.cols(), cfg.hidden, data.num_classes);
  ModelParams init = init_params(specs, seed);

  MasterConfig mc = cfg.master;
  mc.seed = seed;
  mc.num_workers = cfg.num_workers;
  if (mc.mode == TrainMode::sgd) {
    Master master(mc, data, std::move(init), nullptr);
    return master.run();
  }

  const auto population = static_cast<std::uint32_t>(data.train_size());
  std::shared_ptr<WeightStore> store;
  std::unique_ptr<StoreServer> server;
  Endpoint endpoint;
  switch (cfg.transport) {
    case Transport::inproc:
      store = std::make_shared<WeightStore>(population);
      break;
    case Transport::local_tcp:
      store = std::make_shared<WeightStore>(population);
      server = std::make_unique<StoreServer>(store, cfg.store_port);
      endpoint = Endpoint{"127.0.0.1", server->port()};
      break;
    case Transport::remote_tcp:
      if (!cfg.store_endpoint) throw std::invalid_argument("remote store transport needs an endpoint");
      endpoint = *cfg.store_endpoint;
      break;
  }
  auto make_client = [&]() -> std::unique_ptr<StoreClient> {
    if (store && cfg.transport == Transport::inproc) return std::make_unique<LocalStoreClient>(store);
    return std::make_unique<TcpStoreClient>(endpoint);
  };

  // External worker processes serve a remote store; otherwise the workers are ours.
  const std::size_t own_workers = cfg.transport == Transport::remote_tcp ? 0 : cfg.num_workers;
  std::vector<std::unique_ptr<StoreClient>> worker_clients;
  std::vector<std::unique_ptr<Worker>> workers;
  for (std::size_t k = 0; k < own_workers; ++k) {
    worker_clients.push_back(make_client());
    WorkerConfig wc;
    wc.worker_id = static_cast<std::uint32_t>(k);
    wc.num_workers = static_cast<std::uint32_t>(cfg.num_workers);
    wc.scoring_batch = cfg.scoring_batch;
    wc.continuous = mc.mode == TrainMode::issgd;
    wc.poll_interval_seconds = 0.002;
    workers.push_back(std::make_unique<Worker>(wc, *worker_clients.back(), data.train_x, data.train_y));
  }

  auto master_client = make_client();
  Master master(mc, data, std::move(init), master_client.get());
  std::vector<std::jthread> threads;
  if (cfg.lockstep) {
    if (mc.mode == TrainMode::issgd_exact) {
      master.set_wait_hook([&] {
        for (auto& w : workers) w->tick();
      });
    } else {
      master.set_step_hook([&](std::int64_t) {
        for (auto& w : workers) {
          for (std::size_t t = 0; t < cfg.worker_ticks_per_step; ++t) w->tick();
        }
      });
    }
  } else {
    for (auto& w : workers) {
      threads.emplace_back([worker = w.get()](std::stop_token stop) { worker->run(stop); });
    }
  }
  auto rows = master.run();
  threads.clear();
  return rows;
}

Quartiles quartiles_of(const std::vector<double>& v) { return quartiles(v); }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data) {
  if (cfg.seeds < 1) throw std::invalid_argument("seeds must be >= 1");
  if (cfg.master.mode == TrainMode::issgd_exact && cfg.num_workers < 1) {
    throw std::invalid_argument("exact mode needs at least one worker");
  }
  if (cfg.master.mode == TrainMode::issgd && cfg.num_workers < 1 && cfg.transport != Transport::remote_tcp) {
    throw std::invalid_argument("issgd mode needs at least one worker");
  }
  cfg.master.validate();
  data.validate();
  const auto td = TrainingData::from(data);
  ExperimentResult result;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    spdlog::info("{} run, seed {} ({} of {})", to_string(cfg.master.mode), seed, k + 1, cfg.seeds);
    result.runs.push_back({seed, run_seed(cfg, td, seed)});
  }
  result.summary = summarize(result.runs, cfg.loss_threshold);
  return result;
}

ExperimentSummary summarize(const std::vector<SeedRun>& runs, std::optional<double> loss_threshold) {
  std::vector<double> losses;
  std::vector<double> test_errs;
  std::vector<double> updates;
  for (const auto& run : runs) {
    if (!run.rows.empty()) {
      losses.push_back(run.rows.back().train_loss);
      if (!std::isnan(run.rows.back().test_err)) test_errs.push_back(run.rows.back().test_err);
    }
    if (loss_threshold) {
      const auto hit = updates_to_loss(run.rows, *loss_threshold);
      updates.push_back(hit ? static_cast<double>(*hit) : std::numeric_limits<double>::infinity());
    }
  }
  ExperimentSummary s;
  s.final_train_loss = quartiles_of(losses);
  s.final_test_err = quartiles_of(test_errs);
  if (loss_threshold) s.updates_to_threshold = quartiles_of(updates);
  return s;
}

std::string metrics_path_for(const std::string& base, std::size_t seed_index, std::size_t seeds) {
  if (seeds <= 1) return base;
  const auto dot = base.rfind('.');
  const auto slash = base.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return fmt::format("{}.seed{}", base, seed_index);
  }
  return fmt::format("{}.seed{}{}", base.substr(0, dot), seed_index, base.substr(dot));
}

std::string format_summary(const ExperimentSummary& s, std::size_t seeds) {
  auto q = [](const Quartiles& v) { return fmt::format("{} [q1 {}, q3 {}]", v.median, v.q1, v.q3); };
  std::string out = fmt::format("summary over {} seed(s): final train loss {}; final test error {}", seeds,
                                q(s.final_train_loss), q(s.final_test_err));
  if (s.updates_to_threshold) out += fmt::format("; updates to loss threshold {}", q(*s.updates_to_threshold));
  return out;
}

}  // namespace issgd
