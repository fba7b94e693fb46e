#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cst/cluster.hpp"
#include "cst/hypothesis.hpp"
#include "cst/solver.hpp"

namespace cst::inference {

using cluster::CommStats;
using cluster::MasterView;

enum class VarianceMode { pooled, averaged_local };

std::string_view to_string(VarianceMode mode) noexcept;
VarianceMode parse_variance_mode(std::string_view name);

struct Omega {
  Mat omega;  // r x q
  Mat v;      // r x r
};

/// V = C_a0^T J^-1 K J^-1 C_a0 and Omega = V^-1/2 C_a0^T J^-1 with C_a0 = (C, 0_{r x s_hat})^T.
Omega build_omega(const Mat& j0, const Mat& k0, const LinearHypothesis& hyp, Index s_hat);

/// J^-1/2 C_a0 Psi^-1 C_a0^T J^-1/2 with Psi = C_a0^T J^-1 C_a0; idempotent.
Mat projection_matrix(const Mat& j0, const LinearHypothesis& hyp, Index s_hat);

/// N * ||Omega g_b||^2.
double cst_statistic(Index n_total, const Mat& omega, const Vec& g_b);

struct TestReport {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::map<double, bool> reject_at;
  IndexList support;  // beta coordinates of the nuisance support used for b
  std::optional<double> noncentrality_hat;
  CommStats comm;
  VarianceMode variance_mode = VarianceMode::pooled;
  bool variance_fallback = false;  // averaged requested but pooled used
};

/// Score-type statistic at an already constrained estimate, on b = target + support.
/// Costs one gradient round and one variance round.
TestReport score_test_at(MasterView& view, const Vec& beta_hat, const LinearHypothesis& hyp,
                         const IndexList& support, std::optional<VarianceMode> mode,
                         const std::vector<double>& alphas);

TestReport cst_test(MasterView& view, const solver::TwoStageResult& two_stage, const LinearHypothesis& hyp,
                    std::optional<VarianceMode> mode = std::nullopt, const std::vector<double>& alphas = {0.05});

/// Oracle test: the final Stage II subproblem is re-solved with gamma restricted to the
/// true support (no penalty there), then the same statistic is formed on d + |S| coordinates.
TestReport ocst_test(MasterView& view, const solver::TwoStageResult& two_stage, const LinearHypothesis& hyp,
                     const IndexList& true_support, std::optional<VarianceMode> mode = std::nullopt,
                     const std::vector<double>& alphas = {0.05}, const solver::StageConfig& cfg = {});

/// P(chi2(r, N h^T V^-1 h) > chi2_alpha(r)).
double asymptotic_power(const LinearHypothesis& hyp, const Mat& v, const Vec& h, Index n_total, double alpha);

/// JSON document: statistic, df, p_value, support, comm, variance_mode, reject_at.
std::string to_json(const TestReport& report, int indent = 2);

}  // namespace cst::inference
