#pragma once

#include "cst/types.hpp"

namespace cst::numerics {

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kEigenFloor = 1e-10;

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
struct SymEig {
  Vec eigenvalues;
  Mat eigenvectors;  // columns, orthonormal
};

SymEig sym_eig(const Mat& a);

/// Q diag(1/sqrt(lambda)) Q^T. Throws near_singular when any eigenvalue is below `floor`.
Mat inv_sqrt_psd(const Mat& a, double floor = kEigenFloor);

/// Inverse of a symmetric positive definite matrix via its eigen-decomposition,
/// with the same near-singularity rule as inv_sqrt_psd.
Mat inv_spd(const Mat& a, double floor = kEigenFloor);

/// Affine parameterisation of {theta : C theta = t} as theta0 + Z u.
struct AffineNullSpace {
  Vec theta0;  // minimum-norm particular solution
  Mat basis;   // d x (d - r), orthonormal columns, C * basis = 0
};

AffineNullSpace null_space_affine(const Mat& c, const Vec& t);

/// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

double chi2_sf(double x, int df);
double chi2_quantile(double alpha, int df);  // upper-alpha critical value
double noncentral_chi2_sf(double x, int df, double noncentrality);

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
template <class Apply>
double power_iteration(Apply&& apply, Index dim, int iters = 50) {
  Vec v = Vec::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  double est = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vec w = apply(v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    est = v.dot(w);
    v = w / nw;
  }
  return est;
}

}  // namespace cst::numerics
