#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "issgd/actors.hpp"
#include "issgd/dataset.hpp"
#include "issgd/experiment.hpp"
#include "issgd/log.hpp"
#include "issgd/metrics.hpp"
#include "issgd/store.hpp"
#include "issgd/tcp.hpp"

extern char** environ;

namespace {

using namespace issgd;

// A child copy of this executable running one actor subcommand.
class Child {
 public:
  Child(const std::vector<std::string>& args, int stdout_fd = -1) {
    std::vector<char*> argv;
    std::string exe = "/proc/self/exe";
    argv.push_back(exe.data());
    std::vector<std::string> owned = args;
    for (auto& a : owned) argv.push_back(a.data());
    argv.push_back(nullptr);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    if (stdout_fd >= 0) posix_spawn_file_actions_adddup2(&actions, stdout_fd, STDOUT_FILENO);
    const int rc = posix_spawn(&pid_, exe.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw std::runtime_error(fmt::format("spawn {} failed: {}", args.front(), std::strerror(rc)));
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;
  ~Child() { terminate(); }

  void terminate() {
    if (pid_ <= 0) return;
    ::kill(pid_, SIGTERM);
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }

 private:
  pid_t pid_ = -1;
};

// Blocks SIGINT and SIGTERM so sigwait can pick them up; call before starting threads.
sigset_t block_termination_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int cmd_gen(const SynthSpec& spec, const std::string& out) {
  const auto ds = synth_dataset(spec);
  save_dataset(ds, out);
  spdlog::info("wrote {} examples ({} train, {} valid, {} test) to {}", ds.size(), ds.train.size(), ds.valid.size(),
               ds.test.size(), out);
  return 0;
}

int cmd_store(std::uint16_t port, const std::string& bind, std::uint32_t population) {
  const auto signals = block_termination_signals();
  auto store = std::make_shared<WeightStore>(population);
  StoreServer server(store, port, bind);
  // The first stdout line announces the port; orchestrators read it.
  std::cout << "port " << server.port() << std::endl;
  spdlog::info("store listening on {}:{}", bind, server.port());
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("store shutting down");
  server.stop();
  return 0;
}

int cmd_worker(const std::string& endpoint, std::uint32_t id, std::uint32_t of, const std::string& dataset,
               std::size_t scoring_batch, bool once_per_version) {
  if (of < 1 || id >= of) throw CLI::ValidationError("--id", "worker id must be in [0, K)");
  const auto signals = block_termination_signals();
  const auto data = TrainingData::from(load_dataset(dataset));
  TcpStoreClient client(parse_endpoint(endpoint));
  WorkerConfig wc;
  wc.worker_id = id;
  wc.num_workers = of;
  wc.scoring_batch = scoring_batch;
  wc.continuous = !once_per_version;
  Worker worker(wc, client, data.train_x, data.train_y);
  spdlog::info("worker {}/{} scoring {} examples from {}", id, of, worker.shard().size(), endpoint);
  std::jthread loop([&](std::stop_token stop) { worker.run(stop); });
  int sig = 0;
  sigwait(&signals, &sig);
  return 0;
}

struct TrainArgs {
  std::string mode = "issgd";
  std::string dataset;
  std::size_t updates = 1000;
  std::size_t batch_size = 128;
  double lr = 0.01;
  double smoothing = 1.0;
  std::optional<double> staleness_sec;
  bool staleness_version = false;
  std::size_t workers = 2;
  std::string store;
  bool inproc = false;
  bool lockstep = false;
  std::size_t param_push_every = 20;
  std::size_t metrics_every = 50;
  std::string metrics;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t audit_size = 2048;
  std::size_t scoring_batch = 256;
  double bootstrap_coverage = 0.95;
  std::optional<double> loss_threshold;
};

// Starts a store process and returns its endpoint once it is listening.
Endpoint spawn_store(std::vector<std::unique_ptr<Child>>& children, std::size_t population) {
  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  children.push_back(std::make_unique<Child>(
      std::vector<std::string>{"store", "--port", "0", "--population", std::to_string(population)}, fds[1]));
  ::close(fds[1]);
  std::string line;
  char c = 0;
  while (::read(fds[0], &c, 1) == 1 && c != '\n') line.push_back(c);
  ::close(fds[0]);
  unsigned port = 0;
  if (std::sscanf(line.c_str(), "port %u", &port) != 1) throw std::runtime_error("store process did not start");
  return Endpoint{"127.0.0.1", static_cast<std::uint16_t>(port)};
}

void spawn_workers(std::vector<std::unique_ptr<Child>>& children, const TrainArgs& a, const Endpoint& ep,
                   bool exact) {
  for (std::size_t k = 0; k < a.workers; ++k) {
    std::vector<std::string> args{"worker",      "--store", fmt::format("{}:{}", ep.host, ep.port),
                                  "--id",        std::to_string(k),
                                  "--of",        std::to_string(a.workers),
                                  "--dataset",   a.dataset,
                                  "--scoring-batch", std::to_string(a.scoring_batch)};
    if (exact) args.push_back("--once-per-version");
    children.push_back(std::make_unique<Child>(args));
  }
}

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg;
  cfg.master.mode = parse_mode(a.mode);
  cfg.master.learning_rate = a.lr;
  cfg.master.batch_size = a.batch_size;
  cfg.master.smoothing = a.smoothing;
  cfg.master.staleness_seconds = a.staleness_sec;
  cfg.master.staleness_by_version = a.staleness_version;
  cfg.master.param_push_every = a.param_push_every;
  cfg.master.total_updates = a.updates;
  cfg.master.metrics_every = a.metrics_every;
  cfg.master.audit_size = a.audit_size;
  cfg.master.bootstrap_min_coverage = a.bootstrap_coverage;
  cfg.hidden = a.hidden;
  cfg.num_workers = a.workers;
  cfg.scoring_batch = a.scoring_batch;
  cfg.lockstep = a.lockstep;
  cfg.seed = a.seed;
  cfg.seeds = a.seeds;
  cfg.loss_threshold = a.loss_threshold;
  if (a.lockstep && !a.inproc) throw CLI::ValidationError("--lockstep", "requires --inproc");

  const auto data = load_dataset(a.dataset);
  const bool uses_store = cfg.master.mode != TrainMode::sgd;
  ExperimentResult result;
  if (a.inproc || !uses_store) {
    cfg.transport = Transport::inproc;
    result = run_experiment(cfg, data);
  } else {
    // Actor processes: a store (unless --store names one) and K workers, fresh per seed.
    const bool exact = cfg.master.mode == TrainMode::issgd_exact;
    cfg.transport = Transport::remote_tcp;
    for (std::size_t k = 0; k < a.seeds; ++k) {
      std::vector<std::unique_ptr<Child>> children;
      const Endpoint ep = a.store.empty() ? spawn_store(children, data.train.size()) : parse_endpoint(a.store);
      spawn_workers(children, a, ep, exact);
      ExperimentConfig one = cfg;
      one.store_endpoint = ep;
      one.seed = a.seed + k;
      one.seeds = 1;
      auto r = run_experiment(one, data);
      result.runs.push_back(std::move(r.runs.front()));
      for (auto it = children.rbegin(); it != children.rend(); ++it) (*it)->terminate();
    }
    result.summary = summarize(result.runs, a.loss_threshold);
  }

  if (!a.metrics.empty()) {
    for (std::size_t k = 0; k < result.runs.size(); ++k) {
      const auto path = metrics_path_for(a.metrics, k, a.seeds);
      write_metrics_csv(path, result.runs[k].rows);
      spdlog::info("metrics for seed {} written to {}", result.runs[k].seed, path);
    }
  }
  if (a.seeds > 1) std::cout << format_summary(result.summary, a.seeds) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  issgd::init_logging();
  CLI::App app{"Distributed importance-sampling SGD on a parameter store"};
  app.require_subcommand(1);

  SynthSpec gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic classification dataset");
  gen_cmd->add_option("--n", gen.n, "Number of examples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--dims", gen.dims, "Feature dimension")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--tail", gen.difficulty_tail, "Fraction of hard boundary examples")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--out", gen_out, "Output path")->required();

  std::uint16_t store_port = 0;
  std::string store_bind = "127.0.0.1";
  std::uint32_t store_population = 0;
  auto* store_cmd = app.add_subcommand("store", "Serve a weight store over TCP");
  store_cmd->add_option("--port", store_port, "Listen port (0 picks a free one)");
  store_cmd->add_option("--bind", store_bind, "Listen address");
  store_cmd->add_option("--population", store_population, "Reject weight indices >= this (0 disables)");

  std::string w_store;
  std::string w_dataset;
  std::uint32_t w_id = 0;
  std::uint32_t w_of = 1;
  std::size_t w_batch = 256;
  bool w_once = false;
  auto* worker_cmd = app.add_subcommand("worker", "Score gradient norms for one shard");
  worker_cmd->add_option("--store", w_store, "Store endpoint host:port")->required();
  worker_cmd->add_option("--id", w_id, "Worker id in [0, K)")->required();
  worker_cmd->add_option("--of", w_of, "Number of workers K")->required();
  worker_cmd->add_option("--dataset", w_dataset, "Dataset path")->required();
  worker_cmd->add_option("--scoring-batch", w_batch, "Examples per forward/backward pass")->check(CLI::PositiveNumber);
  worker_cmd->add_flag("--once-per-version", w_once, "Score each parameter version once (exact mode)");

  TrainArgs t;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics");
  train_cmd->add_option("--mode", t.mode, "sgd, issgd or issgd-exact")
      ->check(CLI::IsMember({"sgd", "issgd", "issgd-exact"}));
  train_cmd->add_option("--dataset", t.dataset, "Dataset path")->required();
  train_cmd->add_option("--updates", t.updates, "Number of parameter updates");
  train_cmd->add_option("--batch-size", t.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", t.lr, "Learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--smoothing", t.smoothing, "Constant added to every weight")->check(CLI::NonNegativeNumber);
  auto* stale_sec = train_cmd->add_option("--staleness-sec", t.staleness_sec, "Drop weights older than this");
  auto* stale_ver =
      train_cmd->add_flag("--staleness-version", t.staleness_version, "Keep only weights for the latest version");
  stale_sec->excludes(stale_ver);
  train_cmd->add_option("--workers", t.workers, "Number of workers K");
  auto* store_opt = train_cmd->add_option("--store", t.store, "Use an existing store at host:port");
  auto* inproc_opt = train_cmd->add_flag("--inproc", t.inproc, "Run store and workers as threads");
  store_opt->excludes(inproc_opt);
  train_cmd->add_flag("--lockstep", t.lockstep, "Step workers in the master thread (deterministic)");
  train_cmd->add_option("--param-push-every", t.param_push_every, "Updates between parameter pushes")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--metrics-every", t.metrics_every, "Updates between metric rows")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--metrics", t.metrics, "Metrics CSV path");
  train_cmd->add_option("--seed", t.seed, "First seed");
  train_cmd->add_option("--seeds", t.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  train_cmd->add_option("--hidden", t.hidden, "Hidden layer widths")->delimiter(',');
  train_cmd->add_option("--audit-size", t.audit_size, "Examples audited for variance metrics");
  train_cmd->add_option("--scoring-batch", t.scoring_batch, "Worker chunk size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--bootstrap-coverage", t.bootstrap_coverage, "Weight coverage before leaving uniform")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--loss-threshold", t.loss_threshold, "Report updates needed to reach this train loss");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen_cmd) return cmd_gen(gen, gen_out);
    if (*store_cmd) return cmd_store(store_port, store_bind, store_population);
    if (*worker_cmd) return cmd_worker(w_store, w_id, w_of, w_dataset, w_batch, w_once);
    if (*train_cmd) return cmd_train(t);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
