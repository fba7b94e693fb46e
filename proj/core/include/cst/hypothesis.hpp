#pragma once

#include "cst/types.hpp"

namespace cst::inference {

/// H0: C theta = t, where theta = beta[target_idx].
struct LinearHypothesis {
  Mat c;                // r x d
  Vec t;                // r
  IndexList target_idx; // d coordinates of beta, in theta order

  Index r() const noexcept { return c.rows(); }
  Index d() const noexcept { return c.cols(); }
};

/// Checks shapes, full row rank and lambda_min(C C^T) > 0 against a p-dimensional beta.
/// Throws bad_hypothesis.
void validate(const LinearHypothesis& hyp, Index p);

}  // namespace cst::inference
