#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "issgd/sampler.hpp"
#include "issgd/wire.hpp"

namespace issgd {

using wire::ErrorCode;
using wire::IndexWeight;
using wire::LayerShape;
using wire::ParamsSnapshot;
using wire::WorkerStatus;

class StoreError : public std::runtime_error {
 public:
  StoreError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Shared state between the master and the workers: the latest parameter
// snapshot, one weight entry per example and the last version each worker
// scored. All methods are serialized by one mutex; parameter snapshots are
// swapped atomically so readers never observe a partial write.
class WeightStore {
 public:
  // Seconds since some fixed origin; the store never lets its clock go backwards.
  using Clock = std::function<double()>;

  // population == 0 disables the index range check.
  explicit WeightStore(std::uint32_t population = 0, Clock clock = {});

  void put_params(ParamsSnapshot snapshot);
  std::shared_ptr<const ParamsSnapshot> get_params() const;

  void put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries);
  std::vector<WeightEntry> get_weights(const WeightFilter& filter) const;

  void put_worker_status(const WorkerStatus& status);
  std::vector<WorkerStatus> get_worker_status() const;

  double now() const;
  std::uint32_t population() const { return population_; }

 private:
  double tick_locked() const;

  std::uint32_t population_;
  Clock clock_;
  mutable std::mutex mu_;
  mutable double last_time_ = 0.0;
  std::shared_ptr<const ParamsSnapshot> params_;
  std::map<std::uint32_t, WeightEntry> weights_;
  std::map<std::uint32_t, std::uint64_t> workers_;
};

// Monotonic wall clock in seconds since construction.
WeightStore::Clock steady_clock_seconds();

// Applies one request to the store and produces its reply. Store errors become
// ErrorReply messages; reply kinds are rejected as bad requests.
wire::Message handle_request(WeightStore& store, const wire::Message& request);

// What actors see of the store, whichever transport backs it.
class StoreClient {
 public:
  virtual ~StoreClient() = default;

  virtual void put_params(const ParamsSnapshot& snapshot) = 0;
  virtual std::optional<ParamsSnapshot> get_params() = 0;
  virtual void put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries) = 0;
  virtual std::vector<WeightEntry> get_weights(const WeightFilter& filter) = 0;
  virtual void put_worker_status(const WorkerStatus& status) = 0;
  virtual std::vector<WorkerStatus> get_worker_status() = 0;
};

class LocalStoreClient final : public StoreClient {
 public:
  explicit LocalStoreClient(std::shared_ptr<WeightStore> store) : store_(std::move(store)) {}

  void put_params(const ParamsSnapshot& snapshot) override { store_->put_params(snapshot); }
  std::optional<ParamsSnapshot> get_params() override;
  void put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries) override {
    store_->put_weights(param_version, entries);
  }
  std::vector<WeightEntry> get_weights(const WeightFilter& filter) override { return store_->get_weights(filter); }
  void put_worker_status(const WorkerStatus& status) override { store_->put_worker_status(status); }
  std::vector<WorkerStatus> get_worker_status() override { return store_->get_worker_status(); }

 private:
  std::shared_ptr<WeightStore> store_;
};

}  // namespace issgd
