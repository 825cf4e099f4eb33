#include "issgd/wire.hpp"

#include <bit>
#include <limits>

#include <fmt/format.h>

namespace issgd::wire {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> finish(Kind kind) && {
    const std::size_t payload = out_.size() - kHeaderSize;
    if (payload > std::numeric_limits<std::uint32_t>::max()) throw ProtocolError(0, "payload exceeds 4 GiB");
    out_[0] = kMagic;
    out_[1] = static_cast<std::uint8_t>(kind);
    for (int i = 0; i < 4; ++i) out_[2 + i] = static_cast<std::uint8_t>(payload >> (8 * i));
    return std::move(out_);
  }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> out_ = std::vector<std::uint8_t>(kHeaderSize, 0);
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  // Guards count-prefixed arrays against allocations the frame cannot back.
  void need_items(std::uint64_t count, std::size_t item_size) {
    if (count > remaining() / item_size) {
      throw ProtocolError(pos_, fmt::format("count {} of {}-byte items exceeds remaining {} bytes", count, item_size,
                                            remaining()));
    }
  }

  void expect_end() const {
    if (pos_ != data_.size()) throw ProtocolError(pos_, fmt::format("{} trailing bytes", data_.size() - pos_));
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ProtocolError(pos_, fmt::format("truncated: need {} bytes, have {}", n, remaining()));
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
};

bool is_known(std::uint8_t k) {
  switch (static_cast<Kind>(k)) {
    case Kind::put_params:
    case Kind::get_params:
    case Kind::put_weights:
    case Kind::get_weights:
    case Kind::put_worker_status:
    case Kind::get_worker_status:
    case Kind::error:
    case Kind::put_params_ok:
    case Kind::params_reply:
    case Kind::put_weights_ok:
    case Kind::weights_reply:
    case Kind::put_worker_status_ok:
    case Kind::worker_status_reply:
      return true;
  }
  return false;
}

void write_params(Writer& w, const ParamsSnapshot& p) {
  if (p.shapes.size() > std::numeric_limits<std::uint16_t>::max()) throw ProtocolError(0, "too many layers");
  if (p.values.size() != param_count(p.shapes)) {
    throw ProtocolError(0, fmt::format("parameter vector has {} values, shapes require {}", p.values.size(),
                                       param_count(p.shapes)));
  }
  w.u64(p.version);
  w.u16(static_cast<std::uint16_t>(p.shapes.size()));
  for (const auto& s : p.shapes) {
    w.u32(s.in);
    w.u32(s.out);
  }
  for (float v : p.values) w.f32(v);
}

ParamsSnapshot read_params(Reader& r) {
  ParamsSnapshot p;
  p.version = r.u64();
  const std::uint16_t n_layers = r.u16();
  r.need_items(n_layers, 8);
  p.shapes.resize(n_layers);
  for (auto& s : p.shapes) {
    s.in = r.u32();
    s.out = r.u32();
  }
  const std::size_t count = param_count(p.shapes);
  if (r.remaining() != count * 4) {
    throw ProtocolError(r.pos(), fmt::format("parameter payload has {} bytes, shapes require {}", r.remaining(),
                                             count * 4));
  }
  p.values.resize(count);
  for (float& v : p.values) v = r.f32();
  return p;
}

Kind ack_kind(Kind request) {
  switch (request) {
    case Kind::put_params:
      return Kind::put_params_ok;
    case Kind::put_weights:
      return Kind::put_weights_ok;
    case Kind::put_worker_status:
      return Kind::put_worker_status_ok;
    default:
      throw ProtocolError(0, fmt::format("kind 0x{:02x} has no acknowledgement", static_cast<int>(request)));
  }
}

}  // namespace

ProtocolError::ProtocolError(std::size_t offset, const std::string& what)
    : std::runtime_error(fmt::format("protocol error at byte {}: {}", offset, what)), offset_(offset) {}

std::size_t param_count(std::span<const LayerShape> shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += static_cast<std::size_t>(s.in) * s.out + s.out;
  return n;
}

Kind kind_of(const Message& msg) {
  struct Visitor {
    Kind operator()(const PutParams&) const { return Kind::put_params; }
    Kind operator()(const GetParams&) const { return Kind::get_params; }
    Kind operator()(const PutWeights&) const { return Kind::put_weights; }
    Kind operator()(const GetWeights&) const { return Kind::get_weights; }
    Kind operator()(const PutWorkerStatus&) const { return Kind::put_worker_status; }
    Kind operator()(const GetWorkerStatus&) const { return Kind::get_worker_status; }
    Kind operator()(const ParamsReply&) const { return Kind::params_reply; }
    Kind operator()(const WeightsReply&) const { return Kind::weights_reply; }
    Kind operator()(const WorkerStatusReply&) const { return Kind::worker_status_reply; }
    Kind operator()(const Ack& a) const { return ack_kind(a.request); }
    Kind operator()(const ErrorReply&) const { return Kind::error; }
  };
  return std::visit(Visitor{}, msg);
}

std::vector<std::uint8_t> encode(const Message& msg) {
  Writer w;
  struct Visitor {
    Writer& w;
    void operator()(const PutParams& m) const { write_params(w, m.params); }
    void operator()(const GetParams&) const {}
    void operator()(const PutWeights& m) const {
      w.u64(m.param_version);
      w.u32(static_cast<std::uint32_t>(m.entries.size()));
      for (const auto& e : m.entries) {
        w.u32(e.index);
        w.f64(e.weight);
      }
    }
    void operator()(const GetWeights& m) const {
      w.u8(static_cast<std::uint8_t>(m.filter.kind));
      switch (m.filter.kind) {
        case WeightFilter::Kind::all:
          w.u64(0);
          break;
        case WeightFilter::Kind::max_age:
          w.f64(m.filter.max_age_seconds);
          break;
        case WeightFilter::Kind::exact_version:
          w.u64(m.filter.version);
          break;
      }
    }
    void operator()(const PutWorkerStatus& m) const {
      w.u32(m.status.worker_id);
      w.u64(m.status.scored_version);
    }
    void operator()(const GetWorkerStatus&) const {}
    void operator()(const ParamsReply& m) const {
      if (m.params) {
        if (m.params->version == 0) throw ProtocolError(0, "params reply cannot carry version 0");
        write_params(w, *m.params);
      } else {
        w.u64(0);
        w.u16(0);
      }
    }
    void operator()(const WeightsReply& m) const {
      w.u32(static_cast<std::uint32_t>(m.entries.size()));
      for (const auto& e : m.entries) {
        w.u32(e.index);
        w.f64(e.weight);
        w.f64(e.timestamp);
        w.u64(e.param_version);
      }
    }
    void operator()(const WorkerStatusReply& m) const {
      w.u32(static_cast<std::uint32_t>(m.statuses.size()));
      for (const auto& s : m.statuses) {
        w.u32(s.worker_id);
        w.u64(s.scored_version);
      }
    }
    void operator()(const Ack&) const {}
    void operator()(const ErrorReply& m) const {
      w.u32(static_cast<std::uint32_t>(m.code));
      w.bytes(m.text);
    }
  };
  std::visit(Visitor{w}, msg);
  return std::move(w).finish(kind_of(msg));
}

FrameHeader decode_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) {
    throw ProtocolError(header.size(), fmt::format("truncated header: {} of {} bytes", header.size(), kHeaderSize));
  }
  if (header[0] != kMagic) throw ProtocolError(0, fmt::format("bad magic 0x{:02x}", header[0]));
  if (!is_known(header[1])) throw ProtocolError(1, fmt::format("unknown message kind 0x{:02x}", header[1]));
  FrameHeader h;
  h.kind = static_cast<Kind>(header[1]);
  for (int i = 0; i < 4; ++i) h.payload_len |= static_cast<std::uint32_t>(header[2 + i]) << (8 * i);
  return h;
}

Message decode(std::span<const std::uint8_t> frame) {
  const FrameHeader h = decode_header(frame);
  const std::size_t expected = kHeaderSize + h.payload_len;
  if (frame.size() != expected) {
    throw ProtocolError(std::min(frame.size(), expected),
                        fmt::format("frame has {} bytes, header declares {}", frame.size(), expected));
  }
  Reader r(frame, kHeaderSize);
  Message out;
  switch (h.kind) {
    case Kind::put_params:
      out = PutParams{read_params(r)};
      break;
    case Kind::get_params:
      out = GetParams{};
      break;
    case Kind::put_weights: {
      PutWeights m;
      m.param_version = r.u64();
      const std::uint32_t count = r.u32();
      r.need_items(count, 12);
      m.entries.resize(count);
      for (auto& e : m.entries) {
        e.index = r.u32();
        e.weight = r.f64();
      }
      out = std::move(m);
      break;
    }
    case Kind::get_weights: {
      GetWeights m;
      const std::size_t at = r.pos();
      const std::uint8_t fk = r.u8();
      switch (static_cast<WeightFilter::Kind>(fk)) {
        case WeightFilter::Kind::all:
          r.u64();
          m.filter = WeightFilter::all();
          break;
        case WeightFilter::Kind::max_age:
          m.filter = WeightFilter::max_age(r.f64());
          break;
        case WeightFilter::Kind::exact_version:
          m.filter = WeightFilter::exact_version(r.u64());
          break;
        default:
          throw ProtocolError(at, fmt::format("unknown filter kind {}", fk));
      }
      out = m;
      break;
    }
    case Kind::put_worker_status: {
      PutWorkerStatus m;
      m.status.worker_id = r.u32();
      m.status.scored_version = r.u64();
      out = m;
      break;
    }
    case Kind::get_worker_status:
      out = GetWorkerStatus{};
      break;
    case Kind::params_reply: {
      ParamsSnapshot p = read_params(r);
      if (p.version == 0) {
        if (!p.shapes.empty()) throw ProtocolError(kHeaderSize, "empty params reply carries shapes");
        out = ParamsReply{};
      } else {
        out = ParamsReply{std::move(p)};
      }
      break;
    }
    case Kind::weights_reply: {
      WeightsReply m;
      const std::uint32_t count = r.u32();
      r.need_items(count, 28);
      m.entries.resize(count);
      for (auto& e : m.entries) {
        e.index = r.u32();
        e.weight = r.f64();
        e.timestamp = r.f64();
        e.param_version = r.u64();
      }
      out = std::move(m);
      break;
    }
    case Kind::worker_status_reply: {
      WorkerStatusReply m;
      const std::uint32_t count = r.u32();
      r.need_items(count, 12);
      m.statuses.resize(count);
      for (auto& s : m.statuses) {
        s.worker_id = r.u32();
        s.scored_version = r.u64();
      }
      out = std::move(m);
      break;
    }
    case Kind::put_params_ok:
      out = Ack{Kind::put_params};
      break;
    case Kind::put_weights_ok:
      out = Ack{Kind::put_weights};
      break;
    case Kind::put_worker_status_ok:
      out = Ack{Kind::put_worker_status};
      break;
    case Kind::error: {
      ErrorReply m;
      m.code = static_cast<ErrorCode>(r.u32());
      m.text = r.text(r.remaining());
      out = std::move(m);
      break;
    }
  }
  r.expect_end();
  return out;
}

}  // namespace issgd::wire
