#pragma once

#include <cstdint>
#include <string_view>
#include <variant>

#include "cst/types.hpp"

namespace cst::model {

/// Canonical-link GLM with unit dispersion.
enum class Family { gaussian, logistic };

std::string_view to_string(Family f) noexcept;
Family parse_family(std::string_view name);

// Cumulant b and its first two derivatives.
double cumulant(Family f, double u);
double mean(Family f, double u);
double variance(Family f, double u);

/// One site's observations. Never serialised off its site by the cluster layer.
struct SiteData {
  Mat x;
  Vec y;
  int site_id = 0;

  Index n() const noexcept { return x.rows(); }
  Index p() const noexcept { return x.cols(); }
};

/// Throws on empty data, non-finite entries or logistic responses outside {0, 1}.
void validate(Family f, const SiteData& data);

/// beta split into the tested block (theta) and the nuisance block (gamma).
class PartitionedParam {
 public:
  PartitionedParam() = default;
  PartitionedParam(Vec beta, IndexList target_idx);

  const Vec& beta() const noexcept { return beta_; }
  Vec& beta() noexcept { return beta_; }
  const IndexList& target_idx() const noexcept { return target_; }
  const IndexList& nuisance_idx() const noexcept { return nuisance_; }

  Vec theta() const { return beta_(target_); }
  Vec gamma() const { return beta_(nuisance_); }

 private:
  Vec beta_;
  IndexList target_;
  IndexList nuisance_;
};

/// Ordered complement of `target` in [0, p).
IndexList complement(const IndexList& target, Index p);

double loss(Family f, const Vec& beta, const SiteData& data);
Vec gradient(Family f, const Vec& beta, const SiteData& data);
Mat per_sample_scores(Family f, const Vec& beta, const SiteData& data, const IndexList& idx);
Mat hessian(Family f, const Vec& beta, const SiteData& data, const IndexList& idx);

struct Toeplitz {
  Index p = 0;
  double rho = 0.5;
};

using CovarianceSpec = std::variant<Toeplitz, Mat>;

Mat covariance_matrix(const CovarianceSpec& spec);

/// Cholesky factor of the covariate covariance, computed once per configuration.
class CovarianceFactor {
 public:
  explicit CovarianceFactor(const CovarianceSpec& spec);

  Index p() const noexcept { return lower_.rows(); }
  const Mat& lower() const noexcept { return lower_; }

 private:
  Mat lower_;
};

SiteData simulate(Family f, const Vec& beta_star, Index n, const CovarianceFactor& sigma,
                  std::uint64_t seed, int site_id = 0);
SiteData simulate(Family f, const Vec& beta_star, Index n, const CovarianceSpec& sigma,
                  std::uint64_t seed, int site_id = 0);

}  // namespace cst::model
