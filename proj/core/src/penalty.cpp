#include "cst/penalty.hpp"

#include <cmath>
#include <string>

#include "cst/error.hpp"

namespace cst::penalty {

std::string_view to_string(Kind k) noexcept {
  switch (k) {
    case Kind::l1: return "l1";
    case Kind::scad: return "scad";
    case Kind::mcp: return "mcp";
  }
  return "unknown";
}

Kind parse_kind(std::string_view name) {
  if (name == "l1" || name == "L1" || name == "lasso") return Kind::l1;
  if (name == "scad" || name == "SCAD") return Kind::scad;
  if (name == "mcp" || name == "MCP") return Kind::mcp;
  fail(Errc::invalid_config, "unknown penalty '" + std::string(name) + "'");
}

PenaltySpec PenaltySpec::make(Kind kind, double lambda) {
  switch (kind) {
    case Kind::l1: return l1(lambda);
    case Kind::scad: return scad(lambda);
    case Kind::mcp: return mcp(lambda);
  }
  return l1(lambda);
}

void validate(const PenaltySpec& spec) {
  require(spec.lambda >= 0.0, Errc::invalid_arg, "lambda must be non-negative");
  if (spec.kind == Kind::scad) require(spec.a > 2.0, Errc::invalid_arg, "SCAD needs a > 2");
  if (spec.kind == Kind::mcp) require(spec.a > 1.0, Errc::invalid_arg, "MCP needs a > 1");
}

double derivative(const PenaltySpec& spec, double t) {
  require(t >= 0.0, Errc::negative_arg, "penalty argument must be non-negative");
  validate(spec);
  const double lam = spec.lambda;
  switch (spec.kind) {
    case Kind::l1: return lam;
    case Kind::scad:
      if (t <= lam) return lam;
      if (t < spec.a * lam) return (spec.a * lam - t) / (spec.a - 1.0);
      return 0.0;
    case Kind::mcp: return std::max(lam - t / spec.a, 0.0);
  }
  return 0.0;
}

double value(const PenaltySpec& spec, double t) {
  require(t >= 0.0, Errc::negative_arg, "penalty argument must be non-negative");
  validate(spec);
  const double lam = spec.lambda;
  const double a = spec.a;
  switch (spec.kind) {
    case Kind::l1: return lam * t;
    case Kind::scad:
      if (t <= lam) return lam * t;
      if (t < a * lam) return (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0));
      return 0.5 * (a + 1.0) * lam * lam;
    case Kind::mcp:
      if (t <= a * lam) return lam * t - t * t / (2.0 * a);
      return 0.5 * a * lam * lam;
  }
  return 0.0;
}

Vec prox_weighted_l1(const Vec& v, const Vec& w, double eta) {
  require(v.size() == w.size(), Errc::dimension_mismatch, "value and weight lengths differ");
  require(eta > 0.0, Errc::nonpositive_step, "step must be positive");
  Vec out(v.size());
  for (Index j = 0; j < v.size(); ++j) {
    require(w[j] >= 0.0, Errc::invalid_arg, "weights must be non-negative");
    out[j] = soft_threshold(v[j], eta * w[j]);
  }
  return out;
}

}  // namespace cst::penalty
