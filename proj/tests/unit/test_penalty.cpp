#include <doctest.h>

#include <random>

#include "cst/error.hpp"
#include "cst/penalty.hpp"
#include "oracles.hpp"

using namespace cst;
using namespace cst::penalty;

TEST_CASE("derivative examples") {
  CHECK(derivative(PenaltySpec::scad(1.0), 0.5) == 1.0);
  CHECK(derivative(PenaltySpec::scad(1.0), 2.0) == doctest::Approx(1.7 / 2.7).epsilon(1e-12));
  CHECK(derivative(PenaltySpec::mcp(1.0, 2.0), 4.0) == 0.0);
  CHECK(derivative(PenaltySpec::l1(0.7), 12.0) == 0.7);
  CHECK(derivative(PenaltySpec::mcp(2.0), 0.0) == 2.0);
  CHECK(derivative(PenaltySpec::scad(2.0), 0.0) == 2.0);
}

TEST_CASE("value examples") {
  for (auto spec : {PenaltySpec::l1(1.3), PenaltySpec::scad(0.8), PenaltySpec::mcp(0.4)}) CHECK(value(spec, 0.0) == 0.0);
  CHECK(value(PenaltySpec::l1(2.0), 3.0) == 6.0);
  CHECK(value(PenaltySpec::scad(1.0), 3.7) == doctest::Approx(2.35));
  CHECK(value(PenaltySpec::scad(1.0), 10.0) == doctest::Approx(2.35));
  CHECK(value(PenaltySpec::mcp(1.0, 3.0), 10.0) == doctest::Approx(1.5));
}

TEST_CASE("derivative is non-increasing, bounded by lambda, and flat beyond a*lambda") {
  for (double lam : {0.1, 1.0, 2.5}) {
    for (auto spec : {PenaltySpec::l1(lam), PenaltySpec::scad(lam), PenaltySpec::mcp(lam)}) {
      double prev = derivative(spec, 0.0);
      CHECK(prev == doctest::Approx(lam));
      for (double t = 0.0; t <= 6.0 * lam; t += lam / 500.0) {
        const double d = derivative(spec, t);
        CHECK(d <= prev + 1e-15);
        CHECK(d <= lam + 1e-15);
        CHECK(d >= 0.0);
        if (spec.kind != Kind::l1 && t >= spec.a * lam) CHECK(d == 0.0);
        prev = d;
      }
    }
  }
}

TEST_CASE("numeric derivative of value matches derivative away from the kinks") {
  for (auto spec : {PenaltySpec::l1(0.9), PenaltySpec::scad(0.9), PenaltySpec::mcp(0.9), PenaltySpec::scad(1.0),
                    PenaltySpec::mcp(1.0, 2.0)}) {
    for (double t = 0.013; t < 5.0; t += 0.0371) {
      const bool near_kink = std::abs(t - spec.lambda) < 1e-3 || std::abs(t - spec.a * spec.lambda) < 1e-3;
      if (near_kink) continue;
      const double h = 1e-6;
      const double fd = (value(spec, t + h) - value(spec, t - h)) / (2 * h);
      CHECK(std::abs(fd - derivative(spec, t)) < 1e-6);
    }
  }
}

TEST_CASE("prox_weighted_l1 examples") {
  CHECK(prox_weighted_l1(Vec::Constant(1, 3.0), Vec::Constant(1, 1.0), 1.0)(0) == 2.0);
  CHECK(prox_weighted_l1(Vec::Constant(1, -0.5), Vec::Constant(1, 1.0), 1.0)(0) == 0.0);
  CHECK(prox_weighted_l1(Vec::Constant(1, 2.0), Vec::Constant(1, 0.0), 7.0)(0) == 2.0);
}

TEST_CASE("prox_weighted_l1 agrees with brute-force grid search") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> v(-3.0, 3.0), w(0.0, 2.0), eta(0.05, 1.5);
  for (int trial = 0; trial < 200; ++trial) {
    const double vi = v(rng), wi = w(rng), ei = eta(rng);
    const double got = prox_weighted_l1(Vec::Constant(1, vi), Vec::Constant(1, wi), ei)(0);
    CHECK(std::abs(got - oracle::prox_grid_search(vi, wi, ei)) < 1e-4);
  }
}

TEST_CASE("errors") {
  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::protocol_error;
  };
  CHECK(code([] { derivative(PenaltySpec::scad(1.0), -0.1); }) == Errc::negative_arg);
  CHECK(code([] { value(PenaltySpec::l1(1.0), -0.1); }) == Errc::negative_arg);
  CHECK(code([] { prox_weighted_l1(Vec::Zero(2), Vec::Zero(3), 1.0); }) == Errc::dimension_mismatch);
  CHECK(code([] { prox_weighted_l1(Vec::Zero(2), Vec::Zero(2), 0.0); }) == Errc::nonpositive_step);
  CHECK_THROWS_AS(validate(PenaltySpec::scad(1.0, 2.0)), Error);
  CHECK_THROWS_AS(validate(PenaltySpec::mcp(1.0, 1.0)), Error);
  CHECK_THROWS_AS(validate(PenaltySpec::l1(-1.0)), Error);
  CHECK(parse_kind("SCAD") == Kind::scad);
  CHECK(parse_kind("mcp") == Kind::mcp);
  CHECK(parse_kind("l1") == Kind::l1);
}
