#include "cst/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <string>

#include <json.hpp>

#include "cst/error.hpp"
#include "cst/numerics.hpp"

namespace cst::inference {

void validate(const LinearHypothesis& hyp, Index p) {
  const Index r = hyp.c.rows();
  const Index d = hyp.c.cols();
  require(r >= 1 && d >= 1 && r <= d, Errc::bad_hypothesis, "C must be r x d with 1 <= r <= d");
  require(hyp.t.size() == r, Errc::bad_hypothesis, "t must have one entry per row of C");
  require(static_cast<Index>(hyp.target_idx.size()) == d, Errc::bad_hypothesis,
          "target index list must have one entry per column of C");
  require(hyp.c.allFinite() && hyp.t.allFinite(), Errc::bad_hypothesis, "hypothesis has non-finite entries");
  std::vector<Index> sorted = hyp.target_idx;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), Errc::bad_hypothesis,
          "duplicate target index");
  require(sorted.front() >= 0 && sorted.back() < p, Errc::bad_hypothesis, "target index out of range");
  require(d < p, Errc::bad_hypothesis, "at least one nuisance coordinate is required");
  try {
    numerics::null_space_affine(hyp.c, hyp.t);
  } catch (const Error&) {
    fail(Errc::bad_hypothesis, "C is not of full row rank");
  }
  const Mat cct = hyp.c * hyp.c.transpose();
  require(numerics::sym_eig(0.5 * (cct + cct.transpose())).eigenvalues.minCoeff() > 0.0, Errc::bad_hypothesis,
          "lambda_min(C C^T) must be positive");
}

std::string_view to_string(VarianceMode mode) noexcept {
  return mode == VarianceMode::pooled ? "pooled" : "averaged_local";
}

VarianceMode parse_variance_mode(std::string_view name) {
  if (name == "pooled") return VarianceMode::pooled;
  if (name == "averaged" || name == "averaged_local") return VarianceMode::averaged_local;
  fail(Errc::invalid_config, "unknown variance mode '" + std::string(name) + "'");
}

namespace {

Mat augmented_constraint(const LinearHypothesis& hyp, Index s_hat) {
  Mat ca0 = Mat::Zero(hyp.d() + s_hat, hyp.r());
  ca0.topRows(hyp.d()) = hyp.c.transpose();
  return ca0;
}

}  // namespace

Omega build_omega(const Mat& j0, const Mat& k0, const LinearHypothesis& hyp, Index s_hat) {
  const Index q = hyp.d() + s_hat;
  require(s_hat >= 0 && j0.rows() == q && j0.cols() == q && k0.rows() == q && k0.cols() == q,
          Errc::dimension_mismatch, "J0 and K0 must be (d + s_hat) square");
  const Mat ca0 = augmented_constraint(hyp, s_hat);
  const Mat j_inv = numerics::inv_spd(j0);
  const Mat a = j_inv * ca0;  // q x r
  Mat v = a.transpose() * k0 * a;
  v = 0.5 * (v + v.transpose());
  Omega out;
  out.omega = numerics::inv_sqrt_psd(v) * a.transpose();
  out.v = std::move(v);
  return out;
}

Mat projection_matrix(const Mat& j0, const LinearHypothesis& hyp, Index s_hat) {
  const Mat ca0 = augmented_constraint(hyp, s_hat);
  const Mat j_inv_half = numerics::inv_sqrt_psd(j0);
  const Mat b = j_inv_half * ca0;
  Mat psi = b.transpose() * b;
  psi = 0.5 * (psi + psi.transpose());
  return b * numerics::inv_spd(psi) * b.transpose();
}

double cst_statistic(Index n_total, const Mat& omega, const Vec& g_b) {
  require(omega.cols() == g_b.size(), Errc::dimension_mismatch, "Omega columns differ from gradient length");
  require(n_total >= 1, Errc::invalid_arg, "sample size must be positive");
  return static_cast<double>(n_total) * (omega * g_b).squaredNorm();
}

TestReport score_test_at(MasterView& view, const Vec& beta_hat, const LinearHypothesis& hyp,
                         const IndexList& support, std::optional<VarianceMode> mode,
                         const std::vector<double>& alphas) {
  validate(hyp, view.p());
  IndexList idx = hyp.target_idx;
  idx.insert(idx.end(), support.begin(), support.end());
  const Index q = static_cast<Index>(idx.size());
  const Index s_hat = static_cast<Index>(support.size());
  const Index min_site_n = q + 1;

  const std::vector<Index> sizes = view.site_sizes();
  const Index smallest = *std::min_element(sizes.begin(), sizes.end());
  TestReport rep;
  VarianceMode used = mode.value_or(smallest >= min_site_n ? VarianceMode::averaged_local : VarianceMode::pooled);
  if (used == VarianceMode::averaged_local && smallest < min_site_n) {
    std::cerr << "warning: d + |S| = " << q << " is not below the smallest site size " << smallest
              << "; using pooled variance\n";
    used = VarianceMode::pooled;
    rep.variance_fallback = true;
  }

  const Vec g = view.global_gradient(beta_hat);
  const Vec g_b = g(idx);
  const auto blocks = view.collect_variance(beta_hat, idx, used == VarianceMode::pooled ? 1 : min_site_n);
  double n_used = 0.0;
  for (const auto& b : blocks) n_used += static_cast<double>(b.n);

  if (used == VarianceMode::pooled) {
    Mat j = Mat::Zero(q, q);
    Mat k = Mat::Zero(q, q);
    for (const auto& b : blocks) {
      const double w = static_cast<double>(b.n) / n_used;
      j += w * b.hessian;
      k += w * b.score_cov;
    }
    const Omega om = build_omega(j, k, hyp, s_hat);
    rep.statistic = cst_statistic(view.total_n(), om.omega, g_b);
  } else {
    double acc = 0.0;
    for (const auto& b : blocks) {
      const Omega om = build_omega(b.hessian, b.score_cov, hyp, s_hat);
      acc += (static_cast<double>(b.n) / n_used) * (om.omega * g_b).squaredNorm();
    }
    rep.statistic = static_cast<double>(view.total_n()) * acc;
  }
  require(std::isfinite(rep.statistic), Errc::non_finite, "test statistic is not finite");

  rep.df = static_cast<int>(hyp.r());
  rep.p_value = numerics::chi2_sf(rep.statistic, rep.df);
  for (double a : alphas) rep.reject_at[a] = rep.p_value < a;
  rep.support = support;
  rep.noncentrality_hat = std::max(rep.statistic - static_cast<double>(rep.df), 0.0);
  rep.comm = view.stats();
  rep.variance_mode = used;
  return rep;
}

TestReport cst_test(MasterView& view, const solver::TwoStageResult& two_stage, const LinearHypothesis& hyp,
                    std::optional<VarianceMode> mode, const std::vector<double>& alphas) {
  return score_test_at(view, two_stage.beta_hat.beta(), hyp, two_stage.support, mode, alphas);
}

TestReport ocst_test(MasterView& view, const solver::TwoStageResult& two_stage, const LinearHypothesis& hyp,
                     const IndexList& true_support, std::optional<VarianceMode> mode,
                     const std::vector<double>& alphas, const solver::StageConfig& cfg) {
  require(two_stage.final_anchor.size() == view.p(), Errc::invalid_arg, "two-stage result has no Stage II anchor");
  IndexList support = true_support;
  std::sort(support.begin(), support.end());
  Vec warm = two_stage.beta_hat.beta();
  const Vec beta_ora = solver::restricted_solve(view, two_stage.final_anchor, two_stage.final_anchor_gradient, hyp,
                                                support, warm, cfg);
  return score_test_at(view, beta_ora, hyp, support, mode, alphas);
}

double asymptotic_power(const LinearHypothesis& hyp, const Mat& v, const Vec& h, Index n_total, double alpha) {
  require(v.rows() == hyp.r() && v.cols() == hyp.r() && h.size() == hyp.r(), Errc::dimension_mismatch,
          "V must be r x r and h of length r");
  const double e = static_cast<double>(n_total) * h.dot(numerics::inv_spd(v) * h);
  const int r = static_cast<int>(hyp.r());
  if (!(e > 0.0)) return alpha;
  return numerics::noncentral_chi2_sf(numerics::chi2_quantile(alpha, r), r, std::max(e, 0.0));
}

std::string to_json(const TestReport& report, int indent) {
  nlohmann::json j;
  j["statistic"] = report.statistic;
  j["df"] = report.df;
  j["p_value"] = report.p_value;
  IndexList support = report.support;
  std::sort(support.begin(), support.end());
  j["support"] = support;
  j["comm"] = {{"rounds", report.comm.rounds},
               {"bytes_to_sites", report.comm.bytes_to_sites},
               {"bytes_from_sites", report.comm.bytes_from_sites}};
  j["variance_mode"] = std::string(to_string(report.variance_mode));
  nlohmann::json rej = nlohmann::json::object();
  for (const auto& [alpha, r] : report.reject_at) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, alpha);
    rej[std::string(buf, res.ptr)] = r;
  }
  j["reject_at"] = rej;
  if (report.noncentrality_hat) j["noncentrality_hat"] = *report.noncentrality_hat;
  return j.dump(indent);
}

}  // namespace cst::inference
