#include "issgd/actors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace issgd {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::sgd:
      return "sgd";
    case TrainMode::issgd:
      return "issgd";
    case TrainMode::issgd_exact:
      return "issgd-exact";
  }
  return "?";
}

TrainMode parse_mode(std::string_view text) {
  if (text == "sgd") return TrainMode::sgd;
  if (text == "issgd") return TrainMode::issgd;
  if (text == "issgd-exact" || text == "issgd_exact") return TrainMode::issgd_exact;
  throw std::invalid_argument(fmt::format("unknown mode '{}'", text));
}

void MasterConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(smoothing >= 0.0)) throw std::invalid_argument("smoothing must be >= 0");
  if (param_push_every < 1) throw std::invalid_argument("param_push_every must be >= 1");
  if (metrics_every < 1) throw std::invalid_argument("metrics_every must be >= 1");
  if (proposal_refresh_every < 1) throw std::invalid_argument("proposal_refresh_every must be >= 1");
  if (!(bootstrap_min_coverage >= 0.0 && bootstrap_min_coverage <= 1.0)) {
    throw std::invalid_argument("bootstrap coverage must be in [0, 1]");
  }
  if (staleness_seconds && !(*staleness_seconds >= 0.0)) throw std::invalid_argument("staleness must be >= 0");
  if (mode == TrainMode::issgd_exact && num_workers < 1) throw std::invalid_argument("exact mode needs workers");
}

ParamsSnapshot to_snapshot(const ModelParams& params) {
  ParamsSnapshot snap;
  snap.version = params.version;
  for (const auto& layer : params.layers) {
    snap.shapes.push_back({static_cast<std::uint32_t>(layer.weights.rows()),
                           static_cast<std::uint32_t>(layer.weights.cols())});
  }
  const auto flat = params.flatten();
  snap.values.assign(flat.begin(), flat.end());
  return snap;
}

ModelParams from_snapshot(const ParamsSnapshot& snapshot) {
  if (snapshot.shapes.empty()) throw DimensionError("parameter snapshot has no layers");
  ModelParams params;
  params.version = snapshot.version;
  for (const auto& s : snapshot.shapes) {
    params.layers.push_back({Matrix(s.in, s.out), std::vector<double>(s.out, 0.0)});
  }
  params.validate();
  const std::vector<double> flat(snapshot.values.begin(), snapshot.values.end());
  params.assign_flat(flat);
  return params;
}

std::vector<std::uint32_t> shard_indices(std::uint32_t worker_id, std::uint32_t num_workers, std::size_t population) {
  if (num_workers < 1) throw std::invalid_argument("shard stride must be >= 1");
  if (worker_id >= num_workers) throw std::invalid_argument("worker id must be < number of workers");
  std::vector<std::uint32_t> out;
  for (std::size_t i = worker_id; i < population; i += num_workers) out.push_back(static_cast<std::uint32_t>(i));
  return out;
}

MinibatchGradient minibatch_gradient(const ModelParams& params, const Proposal* proposal, const Matrix& x,
                                     std::span<const Label> y, std::size_t batch_size, Rng& rng) {
  MinibatchGradient out;
  if (proposal) {
    out.batch = draw_minibatch(*proposal, batch_size, rng);
  } else {
    out.batch = draw_minibatch(uniform_proposal(y.size()), batch_size, rng);
  }
  std::vector<Label> labels(out.batch.indices.size());
  for (std::size_t m = 0; m < labels.size(); ++m) labels[m] = y[out.batch.indices[m]];
  const auto cache = forward(params, gather_rows(x, std::span<const std::uint32_t>(out.batch.indices)), labels);
  out.gradient = backward(params, cache, out.batch.coefficients);
  for (std::size_t m = 0; m < labels.size(); ++m) out.scaled_loss += out.batch.coefficients[m] * cache.losses[m];
  return out;
}

StepOutcome master_step(ModelParams& params, const Proposal* proposal, const Matrix& x, std::span<const Label> y,
                        const MasterConfig& cfg, Rng& rng) {
  const Proposal* used = cfg.mode == TrainMode::sgd ? nullptr : proposal;
  auto g = minibatch_gradient(params, used, x, y, cfg.batch_size, rng);
  sgd_update(params, g.gradient, cfg.learning_rate);
  return {g.scaled_loss, std::move(g.batch)};
}

Master::Master(MasterConfig cfg, const TrainingData& data, ModelParams initial, StoreClient* store)
    : cfg_(std::move(cfg)), data_(data), params_(std::move(initial)), store_(store), rng_(cfg_.seed) {
  cfg_.validate();
  params_.validate();
  if (data_.train_size() == 0) throw std::invalid_argument("master: empty training set");
  if (cfg_.mode != TrainMode::sgd && store_ == nullptr) {
    throw std::invalid_argument(fmt::format("mode {} needs a store", to_string(cfg_.mode)));
  }
  const std::size_t n = data_.train_size();
  if (n <= cfg_.audit_size) {
    audit_.resize(n);
    std::iota(audit_.begin(), audit_.end(), 0u);
  } else {
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    Rng audit_rng(cfg_.seed ^ 0xa0d17a0d17ULL);
    std::sample(all.begin(), all.end(), std::back_inserter(audit_), cfg_.audit_size, audit_rng);
    std::sort(audit_.begin(), audit_.end());
  }
}

void Master::start() {
  if (started_) return;
  started_ = true;
  t0_ = std::chrono::steady_clock::now();
  if (cfg_.mode == TrainMode::sgd || store_ == nullptr) return;
  if (auto existing = store_->get_params()) version_ = existing->version;
  push_params();
}

void Master::push_params() {
  params_.version = ++version_;
  store_->put_params(to_snapshot(params_));
}

void Master::wait_for_workers(std::uint64_t version) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::duration<double>(cfg_.barrier_timeout_seconds);
  while (true) {
    const auto statuses = store_->get_worker_status();
    const auto ready = std::count_if(statuses.begin(), statuses.end(),
                                     [&](const WorkerStatus& s) { return s.scored_version == version; });
    if (static_cast<std::size_t>(ready) >= cfg_.num_workers) return;
    if (std::chrono::steady_clock::now() > deadline) {
      throw BarrierTimeout(fmt::format("{} of {} workers scored version {} within {} s", ready, cfg_.num_workers,
                                       version, cfg_.barrier_timeout_seconds));
    }
    if (wait_hook_) {
      wait_hook_();
    } else {
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.poll_interval_seconds));
    }
  }
}

void Master::install(std::vector<WeightEntry> entries) {
  try {
    proposal_ = build_proposal(entries, data_.train_size(), cfg_.smoothing);
  } catch (const StalenessStarvation& e) {
    spdlog::debug("step {}: {}; sampling uniformly", steps_ + 1, e.what());
    proposal_.reset();
  } catch (const DegenerateProposal& e) {
    spdlog::debug("step {}: {}; sampling uniformly", steps_ + 1, e.what());
    proposal_.reset();
  }
}

void Master::refresh_relaxed() {
  const auto needed = static_cast<std::size_t>(
      std::ceil(cfg_.bootstrap_min_coverage * static_cast<double>(data_.train_size())));
  WeightFilter filter = WeightFilter::all();
  if (cfg_.staleness_by_version) {
    filter = WeightFilter::exact_version(version_);
  } else if (cfg_.staleness_seconds) {
    filter = WeightFilter::max_age(*cfg_.staleness_seconds);
  }
  if (!bootstrapped_) {
    auto all = store_->get_weights(WeightFilter::all());
    if (all.size() < needed) {
      proposal_.reset();
      return;
    }
    bootstrapped_ = true;
    if (filter.kind == WeightFilter::Kind::all) {
      install(std::move(all));
      return;
    }
  }
  install(store_->get_weights(filter));
}

void Master::refresh_exact() {
  const auto needed = static_cast<std::size_t>(
      std::ceil(cfg_.bootstrap_min_coverage * static_cast<double>(data_.train_size())));
  auto entries = store_->get_weights(WeightFilter::exact_version(version_));
  if (entries.size() < needed) {
    proposal_.reset();
    return;
  }
  install(std::move(entries));
}

StepRecord Master::advance(bool with_report) {
  start();
  StepRecord rec;
  rec.step = steps_ + 1;
  switch (cfg_.mode) {
    case TrainMode::sgd:
      break;
    case TrainMode::issgd:
      if (steps_ % static_cast<std::int64_t>(cfg_.proposal_refresh_every) == 0) refresh_relaxed();
      break;
    case TrainMode::issgd_exact:
      if (steps_ > 0) push_params();
      wait_for_workers(version_);
      refresh_exact();
      break;
  }
  if (cfg_.mode != TrainMode::sgd) {
    rec.fallback = !proposal_.has_value();
    if (proposal_) rec.kept_fraction = proposal_->kept_fraction();
    if (with_report) rec.report = variance_report(rec.step);
  }
  rec.outcome = master_step(params_, proposal_ ? &*proposal_ : nullptr, data_.train_x, data_.train_y, cfg_, rng_);
  ++steps_;
  if (cfg_.mode == TrainMode::issgd && steps_ % static_cast<std::int64_t>(cfg_.param_push_every) == 0) {
    push_params();
  }
  if (step_hook_) step_hook_(rec.step);
  return rec;
}

VarianceReport Master::variance_report(std::int64_t step) const {
  VarianceReport report;
  report.step = step;
  std::vector<IndexedValue> fresh_sq;
  fresh_sq.reserve(audit_.size());
  std::vector<double> chunk_norms;
  const std::size_t chunk = std::max<std::size_t>(cfg_.batch_size, 1);
  std::vector<double> ones;
  std::vector<Label> labels;
  for (std::size_t start = 0; start < audit_.size(); start += chunk) {
    const std::size_t end = std::min(audit_.size(), start + chunk);
    const std::span<const std::uint32_t> idx(audit_.data() + start, end - start);
    labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data_.train_y[idx[i]];
    const auto cache = forward(params_, gather_rows(data_.train_x, idx), labels);
    ones.assign(idx.size(), 1.0);
    const auto back = backward(params_, cache, ones);
    const auto sq = per_example_grad_sq_norms(cache, back);
    for (std::size_t i = 0; i < idx.size(); ++i) fresh_sq.push_back({idx[i], sq[i]});
    // The summed gradient divided by the chunk size is the chunk's mean gradient.
    chunk_norms.push_back(std::sqrt(sq_norm(back.flatten())) / static_cast<double>(idx.size()));
  }
  report.gtrue_sq_estimate = estimate_gtrue_sq(chunk_norms);

  std::vector<double> sq_values(fresh_sq.size());
  std::vector<double> norms(fresh_sq.size());
  for (std::size_t i = 0; i < fresh_sq.size(); ++i) {
    sq_values[i] = fresh_sq[i].value;
    norms[i] = std::sqrt(fresh_sq[i].value);
  }
  report.tr_ideal = tr_sigma_ideal(norms, report.gtrue_sq_estimate);
  report.tr_unif = tr_sigma_unif(sq_values, report.gtrue_sq_estimate);

  if (proposal_) {
    std::vector<IndexedValue> old;
    old.reserve(proposal_->retained().size());
    for (const auto& r : proposal_->retained()) old.push_back({r.index, r.smoothed_weight});
    const auto aligned = intersect_by_index(old, fresh_sq);
    if (!aligned.first.empty()) {
      report.tr_stale = tr_sigma_stale(aligned.first, aligned.second, report.gtrue_sq_estimate);
    }
  }
  return report;
}

MetricsRow Master::make_row(const StepRecord& rec, bool fallback_since_last) const {
  MetricsRow row;
  row.step = rec.step;
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  const auto train = evaluate(params_, data_.train_x, data_.train_y);
  row.train_loss = train.mean_loss;
  row.train_err = train.error_rate;
  if (data_.valid_y.size() > 0) row.valid_err = evaluate(params_, data_.valid_x, data_.valid_y).error_rate;
  if (data_.test_y.size() > 0) row.test_err = evaluate(params_, data_.test_x, data_.test_y).error_rate;
  if (rec.report) {
    row.tr_ideal = rec.report->tr_ideal;
    row.tr_stale = rec.report->tr_stale;
    row.tr_unif = rec.report->tr_unif;
    row.gtrue_sq_est = rec.report->gtrue_sq_estimate;
  }
  row.kept_fraction = rec.kept_fraction;
  row.params_version = version_;
  row.fallback_flag = fallback_since_last;
  return row;
}

std::vector<MetricsRow> Master::run() {
  std::vector<MetricsRow> rows;
  if (cfg_.total_updates == 0) return rows;
  bool fallback_since_last = false;
  const auto total = static_cast<std::int64_t>(cfg_.total_updates);
  const auto every = static_cast<std::int64_t>(cfg_.metrics_every);
  while (steps_ < total) {
    const std::int64_t step = steps_ + 1;
    const bool log_row = step % every == 0 || step == total;
    const auto rec = advance(log_row);
    fallback_since_last = fallback_since_last || rec.fallback;
    if (log_row) {
      rows.push_back(make_row(rec, fallback_since_last));
      fallback_since_last = false;
      spdlog::debug("step {} loss {:.5f}", rows.back().step, rows.back().train_loss);
    }
  }
  return rows;
}

StepRecord run_exact_round(Master& master) { return master.advance(true); }

Worker::Worker(WorkerConfig cfg, StoreClient& store, const Matrix& x, std::span<const Label> y)
    : cfg_(cfg), store_(store), x_(x), y_(y) {
  if (x_.rows() != y_.size()) throw DimensionError("worker: feature and label counts differ");
  if (cfg_.scoring_batch < 1) throw std::invalid_argument("worker: scoring batch must be >= 1");
  shard_ = shard_indices(cfg_.worker_id, cfg_.num_workers, y_.size());
}

bool Worker::begin_sweep() {
  auto snap = store_.get_params();
  if (!snap) return false;
  if (!cfg_.continuous && snap->version == scored_version_) return false;
  model_ = from_snapshot(*snap);
  cursor_ = 0;
  return true;
}

void Worker::finish_sweep() {
  store_.put_worker_status({cfg_.worker_id, model_->version});
  scored_version_ = model_->version;
  model_.reset();
}

std::size_t Worker::tick() {
  if (!model_ && !begin_sweep()) return 0;
  const std::size_t end = std::min(shard_.size(), cursor_ + cfg_.scoring_batch);
  const std::span<const std::uint32_t> idx(shard_.data() + cursor_, end - cursor_);
  std::size_t pushed = 0;
  if (!idx.empty()) {
    std::vector<Label> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = y_[idx[i]];
    const auto cache = forward(*model_, gather_rows(x_, idx), labels);
    const std::vector<double> ones(idx.size(), 1.0);
    const auto sq = per_example_grad_sq_norms(cache, backward(*model_, cache, ones));
    std::vector<IndexWeight> entries(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) entries[i] = {idx[i], std::sqrt(sq[i])};
    store_.put_weights(model_->version, entries);
    pushed = entries.size();
  }
  cursor_ = end;
  if (cursor_ >= shard_.size()) finish_sweep();
  return pushed;
}

std::size_t Worker::sweep() {
  if (!model_ && !begin_sweep()) return 0;
  std::size_t pushed = 0;
  while (model_) pushed += tick();
  return pushed;
}

void Worker::run(std::stop_token stop) {
  using namespace std::chrono;
  const auto poll = duration<double>(cfg_.poll_interval_seconds);
  duration<double> backoff = poll;
  while (!stop.stop_requested()) {
    try {
      if (tick() == 0 && !model_) std::this_thread::sleep_for(poll);
      backoff = poll;
    } catch (const std::exception& e) {
      // Store unreachable or rejected the request: drop the sweep and retry.
      spdlog::warn("worker {}: {}; retrying in {:.2f} s", cfg_.worker_id, e.what(), backoff.count());
      model_.reset();
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, duration<double>(1.0));
    }
  }
}

}  // namespace issgd
