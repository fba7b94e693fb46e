#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cst {

enum class Errc {
  invalid_arg,
  dimension_mismatch,
  not_symmetric,
  near_singular,
  rank_deficient,
  invalid_covariance,
  negative_arg,
  nonpositive_step,
  site_unreachable,
  no_eligible_sites,
  diverged,
  non_finite,
  invalid_config,
  io_error,
  schema_mismatch,
  empty_site,
  bad_hypothesis,
  protocol_error,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for the library; `code()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace cst
