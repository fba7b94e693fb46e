#include "cst/wire.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "cst/error.hpp"

namespace cst::wire {

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

Bytes encode_vector(const Vec& v) {
  Bytes out;
  out.reserve(8 * (static_cast<std::size_t>(v.size()) + 1));
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
  return out;
}

Vec decode_vector(const Bytes& payload) {
  require(payload.size() >= 8, Errc::protocol_error, "vector payload shorter than its count");
  const std::uint64_t count = get_u64(payload.data());
  require(payload.size() == 8 * (count + 1), Errc::protocol_error,
          "vector payload length " + std::to_string(payload.size()) + " does not match count");
  Vec v(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) v[static_cast<Index>(i)] = get_f64(payload.data() + 8 * (i + 1));
  return v;
}

Bytes encode_indices(const IndexList& idx) {
  Bytes out;
  out.reserve(8 * idx.size());
  for (Index j : idx) {
    require(j >= 0, Errc::protocol_error, "negative index");
    put_u64(out, static_cast<std::uint64_t>(j));
  }
  return out;
}

IndexList decode_indices(const Bytes& payload) {
  require(payload.size() % 8 == 0, Errc::protocol_error, "index payload is not a multiple of 8");
  IndexList idx(payload.size() / 8);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(get_u64(payload.data() + 8 * i));
  return idx;
}

Bytes encode_variance(const VariancePayload& v) {
  const Index q = v.hessian.rows();
  require(v.hessian.cols() == q && v.score_cov.rows() == q && v.score_cov.cols() == q,
          Errc::dimension_mismatch, "variance blocks must be square and equal-sized");
  Bytes out;
  out.reserve(8 + 16 * static_cast<std::size_t>(q * q));
  put_u64(out, v.n);
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < q; ++j) put_f64(out, v.hessian(i, j));
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < q; ++j) put_f64(out, v.score_cov(i, j));
  return out;
}

VariancePayload decode_variance(const Bytes& payload, Index q) {
  const std::size_t qq = static_cast<std::size_t>(q * q);
  require(payload.size() == 8 + 16 * qq, Errc::protocol_error, "variance payload has unexpected length");
  VariancePayload v;
  v.n = get_u64(payload.data());
  v.hessian.resize(q, q);
  v.score_cov.resize(q, q);
  const std::uint8_t* p = payload.data() + 8;
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < q; ++j, p += 8) v.hessian(i, j) = get_f64(p);
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < q; ++j, p += 8) v.score_cov(i, j) = get_f64(p);
  return v;
}

Bytes encode_frame(const Frame& frame) {
  Bytes out;
  out.reserve(kHeaderSize + frame.payload.size());
  out.push_back(static_cast<std::uint8_t>(frame.tag));
  put_u64(out, static_cast<std::uint64_t>(frame.payload.size()));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

std::pair<Tag, std::uint64_t> decode_header(const std::uint8_t* header) {
  const std::uint8_t raw = header[0];
  require(raw >= 0x01 && raw <= 0x05, Errc::protocol_error, "unknown message tag " + std::to_string(raw));
  return {static_cast<Tag>(raw), get_u64(header + 1)};
}

}  // namespace cst::wire
