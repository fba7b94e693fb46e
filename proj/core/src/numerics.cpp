#include "cst/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cst/error.hpp"

namespace cst::numerics {

namespace {

void check_symmetric(const Mat& a) {
  require(a.rows() == a.cols(), Errc::dimension_mismatch, "matrix is not square");
  const double asym = a.rows() == 0 ? 0.0 : (a - a.transpose()).cwiseAbs().maxCoeff();
  require(asym <= kSymmetryTol, Errc::not_symmetric,
          "asymmetry " + std::to_string(asym) + " exceeds tolerance");
}

// Lower-regularized P(a, x) by its power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 100000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper-regularized Q(a, x) by Lentz's continued fraction; valid for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

SymEig sym_eig(const Mat& a) {
  check_symmetric(a);
  Eigen::SelfAdjointEigenSolver<Mat> solver(a);
  require(solver.info() == Eigen::Success, Errc::non_finite, "eigen-decomposition failed");
  // Eigen returns ascending order.
  SymEig out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

Mat inv_sqrt_psd(const Mat& a, double floor) {
  require(floor > 0.0, Errc::invalid_arg, "eigenvalue floor must be positive");
  const SymEig eig = sym_eig(a);
  if (eig.eigenvalues.size() > 0) {
    const double lo = eig.eigenvalues.minCoeff();
    require(lo >= floor, Errc::near_singular,
            "smallest eigenvalue " + std::to_string(lo) + " below floor");
  }
  const Vec scale = eig.eigenvalues.array().rsqrt();
  return eig.eigenvectors * scale.asDiagonal() * eig.eigenvectors.transpose();
}

Mat inv_spd(const Mat& a, double floor) {
  require(floor > 0.0, Errc::invalid_arg, "eigenvalue floor must be positive");
  const SymEig eig = sym_eig(a);
  if (eig.eigenvalues.size() > 0) {
    const double lo = eig.eigenvalues.minCoeff();
    require(lo >= floor, Errc::near_singular,
            "smallest eigenvalue " + std::to_string(lo) + " below floor");
  }
  const Vec scale = eig.eigenvalues.cwiseInverse();
  return eig.eigenvectors * scale.asDiagonal() * eig.eigenvectors.transpose();
}

AffineNullSpace null_space_affine(const Mat& c, const Vec& t) {
  const Index r = c.rows();
  const Index d = c.cols();
  require(t.size() == r, Errc::dimension_mismatch, "constraint target length differs from rows of C");
  require(r >= 1 && r <= d, Errc::rank_deficient, "constraint needs 1 <= r <= d");

  // C^T P = Q R with column pivoting; the leading r columns of Q span range(C^T).
  Eigen::ColPivHouseholderQR<Mat> qr(c.transpose());
  const double cmax = c.cwiseAbs().maxCoeff();
  const double tol = 1e-10 * cmax * static_cast<double>(std::max(r, d));
  const Mat rmat = qr.matrixR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
  for (Index i = 0; i < r; ++i) {
    require(std::abs(rmat(i, i)) > tol, Errc::rank_deficient,
            "numerical rank of C is below its row count");
  }
  const Mat q = qr.householderQ() * Mat::Identity(d, d);

  // C = P R^T Q1^T, so theta0 = Q1 w with R^T w = P^T t.
  const Vec pt = qr.colsPermutation().transpose() * t;
  const Vec w = rmat.transpose().triangularView<Eigen::Lower>().solve(pt);

  AffineNullSpace out;
  out.theta0 = q.leftCols(r) * w;
  out.basis = q.rightCols(d - r);
  for (Index j = 0; j < out.basis.cols(); ++j) {
    Index arg = 0;
    out.basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.basis(arg, j) < 0.0) out.basis.col(j) *= -1.0;
  }
  return out;
}

double gamma_q(double a, double x) {
  require(a > 0.0 && x >= 0.0, Errc::invalid_arg, "gamma_q needs a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chi2_sf(double x, int df) {
  require(df >= 1, Errc::invalid_arg, "degrees of freedom must be >= 1");
  require(x >= 0.0, Errc::invalid_arg, "chi-square argument must be >= 0");
  if (std::isinf(x)) return 0.0;
  return std::clamp(gamma_q(0.5 * df, 0.5 * x), 0.0, 1.0);
}

double chi2_quantile(double alpha, int df) {
  require(alpha > 0.0 && alpha < 1.0, Errc::invalid_arg, "alpha must lie in (0, 1)");
  require(df >= 1, Errc::invalid_arg, "degrees of freedom must be >= 1");
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(df));
  while (chi2_sf(hi, df) > alpha) {
    lo = hi;
    hi *= 2.0;
  }
  // sf is strictly decreasing; bisect to double resolution.
  for (int i = 0; i < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_sf(mid, df) > alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double noncentral_chi2_sf(double x, int df, double noncentrality) {
  require(x >= 0.0 && noncentrality >= 0.0, Errc::invalid_arg,
          "noncentral chi-square needs x >= 0 and noncentrality >= 0");
  require(df >= 1, Errc::invalid_arg, "degrees of freedom must be >= 1");
  if (noncentrality == 0.0) return chi2_sf(x, df);
  if (x == 0.0) return 1.0;

  // Poisson(e/2) mixture of central chi-square(df + 2j) tails.
  const double half = 0.5 * noncentrality;
  const double log_half = std::log(half);
  double sum = 0.0;
  for (int j = 0; j < 1000000; ++j) {
    const double log_w = -half + j * log_half - std::lgamma(j + 1.0);
    const double w = std::exp(log_w);
    const double term = w * gamma_q(0.5 * df + j, 0.5 * x);
    sum += term;
    if (j > half && w < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace cst::numerics
