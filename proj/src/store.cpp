#include "issgd/store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace issgd {

WeightStore::Clock steady_clock_seconds() {
  const auto origin = std::chrono::steady_clock::now();
  return [origin] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin).count();
  };
}

WeightStore::WeightStore(std::uint32_t population, Clock clock)
    : population_(population), clock_(clock ? std::move(clock) : steady_clock_seconds()) {}

double WeightStore::tick_locked() const {
  last_time_ = std::max(last_time_, clock_());
  return last_time_;
}

double WeightStore::now() const {
  std::lock_guard lock(mu_);
  return tick_locked();
}

void WeightStore::put_params(ParamsSnapshot snapshot) {
  if (snapshot.values.size() != wire::param_count(snapshot.shapes)) {
    throw StoreError(ErrorCode::bad_request, fmt::format("parameter vector has {} values, shapes require {}",
                                                         snapshot.values.size(), wire::param_count(snapshot.shapes)));
  }
  auto fresh = std::make_shared<const ParamsSnapshot>(std::move(snapshot));
  std::lock_guard lock(mu_);
  const std::uint64_t stored = params_ ? params_->version : 0;
  if (fresh->version <= stored) {
    throw StoreError(ErrorCode::stale_version,
                     fmt::format("parameter version {} is not newer than stored version {}", fresh->version, stored));
  }
  params_ = std::move(fresh);
}

std::shared_ptr<const ParamsSnapshot> WeightStore::get_params() const {
  std::lock_guard lock(mu_);
  return params_;
}

void WeightStore::put_weights(std::uint64_t param_version, std::span<const IndexWeight> entries) {
  for (const auto& e : entries) {
    if (population_ != 0 && e.index >= population_) {
      throw StoreError(ErrorCode::index_out_of_range,
                       fmt::format("index {} outside [0, {})", e.index, population_));
    }
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw StoreError(ErrorCode::invalid_weight, fmt::format("invalid weight {} for index {}", e.weight, e.index));
    }
  }
  std::lock_guard lock(mu_);
  const double t = tick_locked();
  for (const auto& e : entries) weights_[e.index] = WeightEntry{e.index, e.weight, param_version, t};
}

std::vector<WeightEntry> WeightStore::get_weights(const WeightFilter& filter) const {
  std::lock_guard lock(mu_);
  const double t = tick_locked();
  std::vector<WeightEntry> out;
  out.reserve(weights_.size());
  for (const auto& [index, entry] : weights_) {
    if (filter.accepts(entry, t)) out.push_back(entry);
  }
  return out;
}

void WeightStore::put_worker_status(const WorkerStatus& status) {
  std::lock_guard lock(mu_);
  workers_[status.worker_id] = status.scored_version;
}

std::vector<WorkerStatus> WeightStore::get_worker_status() const {
  std::lock_guard lock(mu_);
  std::vector<WorkerStatus> out;
  out.reserve(workers_.size());
  for (const auto& [id, version] : workers_) out.push_back({id, version});
  return out;
}

namespace {

using namespace wire;

struct RequestHandler {
  WeightStore& store;
  Message operator()(const PutParams& m) const {
    store.put_params(m.params);
    return Ack{Kind::put_params};
  }
  Message operator()(const GetParams&) const {
    auto p = store.get_params();
    return p ? ParamsReply{*p} : ParamsReply{};
  }
  Message operator()(const PutWeights& m) const {
    store.put_weights(m.param_version, m.entries);
    return Ack{Kind::put_weights};
  }
  Message operator()(const GetWeights& m) const { return WeightsReply{store.get_weights(m.filter)}; }
  Message operator()(const PutWorkerStatus& m) const {
    store.put_worker_status(m.status);
    return Ack{Kind::put_worker_status};
  }
  Message operator()(const GetWorkerStatus&) const { return WorkerStatusReply{store.get_worker_status()}; }
  Message operator()(const auto& reply) const {
    return ErrorReply{ErrorCode::bad_request,
                      fmt::format("message kind 0x{:02x} is not a request", static_cast<int>(kind_of(reply)))};
  }
};

}  // namespace

wire::Message handle_request(WeightStore& store, const wire::Message& request) {
  try {
    return std::visit(RequestHandler{store}, request);
  } catch (const StoreError& e) {
    return ErrorReply{e.code(), e.what()};
  }
}

std::optional<ParamsSnapshot> LocalStoreClient::get_params() {
  auto p = store_->get_params();
  if (!p) return std::nullopt;
  return *p;
}

}  // namespace issgd
