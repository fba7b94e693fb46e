#pragma once

#include <cstdint>
#include <vector>

#include "cst/types.hpp"

// Framing for the socket transport:
//   [1-byte tag][8-byte LE unsigned payload length][payload]
// All integers are 8-byte little-endian unsigned, all reals little-endian IEEE-754 doubles.
namespace cst::wire {

enum class Tag : std::uint8_t {
  param_broadcast = 0x01,
  gradient_reply = 0x02,
  variance_request = 0x03,
  variance_reply = 0x04,
  shutdown = 0x05,
};

using Bytes = std::vector<std::uint8_t>;

struct Frame {
  Tag tag = Tag::shutdown;
  Bytes payload;
};

inline constexpr std::size_t kHeaderSize = 9;

struct VariancePayload {
  std::uint64_t n = 0;
  Mat hessian;    // row-major on the wire
  Mat score_cov;  // row-major on the wire
};

Bytes encode_vector(const Vec& v);
Vec decode_vector(const Bytes& payload);

Bytes encode_indices(const IndexList& idx);
IndexList decode_indices(const Bytes& payload);

Bytes encode_variance(const VariancePayload& v);
/// `q` is the index-list length of the matching request.
VariancePayload decode_variance(const Bytes& payload, Index q);

Bytes encode_frame(const Frame& frame);
/// Parses the 9-byte header; returns the tag and payload length.
std::pair<Tag, std::uint64_t> decode_header(const std::uint8_t* header);

void put_u64(Bytes& out, std::uint64_t v);
void put_f64(Bytes& out, double v);
std::uint64_t get_u64(const std::uint8_t* p);
double get_f64(const std::uint8_t* p);

}  // namespace cst::wire
