#include "cst/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cst/error.hpp"

namespace cst::model {

std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::logistic: return "logistic";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian" || name == "linear") return Family::gaussian;
  if (name == "logistic") return Family::logistic;
  fail(Errc::invalid_config, "unknown family '" + std::string(name) + "'");
}

double cumulant(Family f, double u) {
  switch (f) {
    case Family::gaussian: return 0.5 * u * u;
    case Family::logistic: return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  }
  return 0.0;
}

double mean(Family f, double u) {
  switch (f) {
    case Family::gaussian: return u;
    case Family::logistic:
      if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
      {
        const double e = std::exp(u);
        return e / (1.0 + e);
      }
  }
  return 0.0;
}

double variance(Family f, double u) {
  switch (f) {
    case Family::gaussian: return 1.0;
    case Family::logistic: {
      const double mu = mean(f, u);
      return mu * (1.0 - mu);
    }
  }
  return 0.0;
}

void validate(Family f, const SiteData& data) {
  require(data.n() >= 1, Errc::empty_site, "site " + std::to_string(data.site_id) + " has no rows");
  require(data.y.size() == data.n(), Errc::dimension_mismatch, "response length differs from rows");
  require(data.x.allFinite() && data.y.allFinite(), Errc::non_finite,
          "site " + std::to_string(data.site_id) + " has non-finite entries");
  if (f == Family::logistic) {
    for (Index i = 0; i < data.y.size(); ++i) {
      require(data.y[i] == 0.0 || data.y[i] == 1.0, Errc::schema_mismatch,
              "logistic response must be 0 or 1");
    }
  }
}

IndexList complement(const IndexList& target, Index p) {
  std::vector<bool> used(static_cast<std::size_t>(p), false);
  for (Index j : target) {
    require(j >= 0 && j < p, Errc::dimension_mismatch, "target index out of range");
    require(!used[static_cast<std::size_t>(j)], Errc::invalid_arg, "duplicate target index");
    used[static_cast<std::size_t>(j)] = true;
  }
  IndexList out;
  out.reserve(static_cast<std::size_t>(p) - target.size());
  for (Index j = 0; j < p; ++j) {
    if (!used[static_cast<std::size_t>(j)]) out.push_back(j);
  }
  return out;
}

PartitionedParam::PartitionedParam(Vec beta, IndexList target_idx)
    : beta_(std::move(beta)), target_(std::move(target_idx)) {
  nuisance_ = complement(target_, beta_.size());
}

namespace {

void check_dims(const Vec& beta, const SiteData& data) {
  require(beta.size() == data.p(), Errc::dimension_mismatch,
          "beta has length " + std::to_string(beta.size()) + " but data has " +
              std::to_string(data.p()) + " columns");
  require(data.y.size() == data.n(), Errc::dimension_mismatch, "response length differs from rows");
}

void check_idx(const IndexList& idx, Index p) {
  for (Index j : idx) require(j >= 0 && j < p, Errc::dimension_mismatch, "index out of range");
}

// b'(eta) - y for every row.
Vec residuals(Family f, const Vec& eta, const Vec& y) {
  if (f == Family::gaussian) return eta - y;
  Vec r(eta.size());
  for (Index i = 0; i < eta.size(); ++i) r[i] = mean(f, eta[i]) - y[i];
  return r;
}

}  // namespace

double loss(Family f, const Vec& beta, const SiteData& data) {
  check_dims(beta, data);
  const Vec eta = data.x * beta;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) total += cumulant(f, eta[i]) - data.y[i] * eta[i];
  return total / static_cast<double>(data.n());
}

Vec gradient(Family f, const Vec& beta, const SiteData& data) {
  check_dims(beta, data);
  const Vec eta = data.x * beta;
  return data.x.transpose() * residuals(f, eta, data.y) / static_cast<double>(data.n());
}

Mat per_sample_scores(Family f, const Vec& beta, const SiteData& data, const IndexList& idx) {
  check_dims(beta, data);
  check_idx(idx, data.p());
  const Vec eta = data.x * beta;
  const Vec r = residuals(f, eta, data.y);
  return r.asDiagonal() * data.x(Eigen::all, idx);
}

Mat hessian(Family f, const Vec& beta, const SiteData& data, const IndexList& idx) {
  check_dims(beta, data);
  check_idx(idx, data.p());
  const Mat xs = data.x(Eigen::all, idx);
  Mat h(xs.cols(), xs.cols());
  if (f == Family::gaussian) {
    h.noalias() = xs.transpose() * xs;
  } else {
    const Vec eta = data.x * beta;
    Vec w(eta.size());
    for (Index i = 0; i < eta.size(); ++i) w[i] = variance(f, eta[i]);
    h.noalias() = xs.transpose() * w.asDiagonal() * xs;
  }
  h /= static_cast<double>(data.n());
  // Exact symmetry for downstream eigen checks.
  return 0.5 * (h + h.transpose());
}

Mat covariance_matrix(const CovarianceSpec& spec) {
  if (const auto* tp = std::get_if<Toeplitz>(&spec)) {
    require(tp->p >= 1, Errc::invalid_covariance, "Toeplitz dimension must be positive");
    Mat s(tp->p, tp->p);
    for (Index j = 0; j < tp->p; ++j)
      for (Index k = 0; k < tp->p; ++k) s(j, k) = std::pow(tp->rho, static_cast<double>(std::abs(j - k)));
    return s;
  }
  return std::get<Mat>(spec);
}

CovarianceFactor::CovarianceFactor(const CovarianceSpec& spec) {
  const Mat s = covariance_matrix(spec);
  require(s.rows() == s.cols() && s.rows() >= 1, Errc::invalid_covariance, "covariance must be square");
  require((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-10, Errc::invalid_covariance,
          "covariance is not symmetric");
  Eigen::LLT<Mat> llt(s);
  require(llt.info() == Eigen::Success, Errc::invalid_covariance, "covariance is not positive definite");
  lower_ = llt.matrixL();
}

SiteData simulate(Family f, const Vec& beta_star, Index n, const CovarianceFactor& sigma,
                  std::uint64_t seed, int site_id) {
  require(n >= 1, Errc::invalid_arg, "sample size must be positive");
  require(beta_star.size() == sigma.p(), Errc::dimension_mismatch, "beta* length differs from covariance");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index p = sigma.p();

  Mat z(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) z(i, j) = normal(rng);

  SiteData out;
  out.site_id = site_id;
  out.x.resize(n, p);
  out.x.noalias() = z * sigma.lower().transpose().triangularView<Eigen::Upper>();
  const Vec eta = out.x * beta_star;
  out.y.resize(n);
  if (f == Family::gaussian) {
    for (Index i = 0; i < n; ++i) out.y[i] = eta[i] + normal(rng);
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index i = 0; i < n; ++i) out.y[i] = unif(rng) < mean(f, eta[i]) ? 1.0 : 0.0;
  }
  return out;
}

SiteData simulate(Family f, const Vec& beta_star, Index n, const CovarianceSpec& sigma,
                  std::uint64_t seed, int site_id) {
  return simulate(f, beta_star, n, CovarianceFactor(sigma), seed, site_id);
}

}  // namespace cst::model
