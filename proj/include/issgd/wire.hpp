#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "issgd/sampler.hpp"

// Binary request/response protocol spoken between the store and its clients.
//
// Frame: magic 0x49 | kind u8 | payload_len u32 | payload. Every integer is
// little-endian; parameters travel as f32, weights and timestamps as f64.
// Successful puts are answered with an empty frame of kind (request | 0x80).
namespace issgd::wire {

inline constexpr std::uint8_t kMagic = 0x49;
inline constexpr std::size_t kHeaderSize = 6;

enum class Kind : std::uint8_t {
  put_params = 0x01,
  get_params = 0x02,
  put_weights = 0x03,
  get_weights = 0x04,
  put_worker_status = 0x05,
  get_worker_status = 0x06,
  error = 0x7F,
  put_params_ok = 0x81,
  params_reply = 0x82,
  put_weights_ok = 0x83,
  weights_reply = 0x84,
  put_worker_status_ok = 0x85,
  worker_status_reply = 0x86,
};

struct LayerShape {
  std::uint32_t in = 0;
  std::uint32_t out = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// Number of f32 values a parameter vector with these shapes carries.
std::size_t param_count(std::span<const LayerShape> shapes);

struct ParamsSnapshot {
  std::uint64_t version = 0;
  std::vector<LayerShape> shapes;
  std::vector<float> values;

  friend bool operator==(const ParamsSnapshot&, const ParamsSnapshot&) = default;
};

struct IndexWeight {
  std::uint32_t index = 0;
  double weight = 0.0;

  friend bool operator==(const IndexWeight&, const IndexWeight&) = default;
};

struct WorkerStatus {
  std::uint32_t worker_id = 0;
  std::uint64_t scored_version = 0;

  friend bool operator==(const WorkerStatus&, const WorkerStatus&) = default;
};

enum class ErrorCode : std::uint32_t {
  stale_version = 1,
  index_out_of_range = 2,
  invalid_weight = 3,
  bad_request = 4,
  internal = 5,
};

struct PutParams {
  ParamsSnapshot params;
  friend bool operator==(const PutParams&, const PutParams&) = default;
};
struct GetParams {
  friend bool operator==(const GetParams&, const GetParams&) = default;
};
struct PutWeights {
  std::uint64_t param_version = 0;
  std::vector<IndexWeight> entries;
  friend bool operator==(const PutWeights&, const PutWeights&) = default;
};
struct GetWeights {
  WeightFilter filter;
  friend bool operator==(const GetWeights&, const GetWeights&) = default;
};
struct PutWorkerStatus {
  WorkerStatus status;
  friend bool operator==(const PutWorkerStatus&, const PutWorkerStatus&) = default;
};
struct GetWorkerStatus {
  friend bool operator==(const GetWorkerStatus&, const GetWorkerStatus&) = default;
};
// Version 0 on the wire means the store holds no parameters yet.
struct ParamsReply {
  std::optional<ParamsSnapshot> params;
  friend bool operator==(const ParamsReply&, const ParamsReply&) = default;
};
struct WeightsReply {
  std::vector<WeightEntry> entries;
  friend bool operator==(const WeightsReply&, const WeightsReply&) = default;
};
struct WorkerStatusReply {
  std::vector<WorkerStatus> statuses;
  friend bool operator==(const WorkerStatusReply&, const WorkerStatusReply&) = default;
};
struct Ack {
  Kind request = Kind::put_params;
  friend bool operator==(const Ack&, const Ack&) = default;
};
struct ErrorReply {
  ErrorCode code = ErrorCode::internal;
  std::string text;
  friend bool operator==(const ErrorReply&, const ErrorReply&) = default;
};

using Message = std::variant<PutParams, GetParams, PutWeights, GetWeights, PutWorkerStatus, GetWorkerStatus,
                             ParamsReply, WeightsReply, WorkerStatusReply, Ack, ErrorReply>;

Kind kind_of(const Message& msg);

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::size_t offset, const std::string& what);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct FrameHeader {
  Kind kind = Kind::error;
  std::uint32_t payload_len = 0;
};

std::vector<std::uint8_t> encode(const Message& msg);

// Validates magic and kind of a 6-byte header.
FrameHeader decode_header(std::span<const std::uint8_t> header);

// Decodes exactly one complete frame; trailing or missing bytes are errors.
Message decode(std::span<const std::uint8_t> frame);

}  // namespace issgd::wire
