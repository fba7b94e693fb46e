#pragma once

#include <string_view>

#include "cst/types.hpp"

namespace cst::penalty {

enum class Kind { l1, scad, mcp };

std::string_view to_string(Kind k) noexcept;
Kind parse_kind(std::string_view name);

struct PenaltySpec {
  Kind kind = Kind::scad;
  double a = 3.7;  // shape; unused for l1
  double lambda = 0.0;

  static PenaltySpec l1(double lambda) { return {Kind::l1, 0.0, lambda}; }
  static PenaltySpec scad(double lambda, double a = 3.7) { return {Kind::scad, a, lambda}; }
  static PenaltySpec mcp(double lambda, double a = 3.0) { return {Kind::mcp, a, lambda}; }
  static PenaltySpec make(Kind kind, double lambda);
};

void validate(const PenaltySpec& spec);

/// d/dt q_lambda(t) in un-normalised units: equals lambda at t = 0+.
double derivative(const PenaltySpec& spec, double t);
double value(const PenaltySpec& spec, double t);

/// sign(v) * max(|v| - eta * w, 0) coordinate-wise.
Vec prox_weighted_l1(const Vec& v, const Vec& w, double eta);

inline double soft_threshold(double v, double thresh) {
  if (v > thresh) return v - thresh;
  if (v < -thresh) return v + thresh;
  return 0.0;
}

}  // namespace cst::penalty
