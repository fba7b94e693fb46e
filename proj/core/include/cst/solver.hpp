#pragma once

#include <optional>
#include <vector>

#include "cst/cluster.hpp"
#include "cst/hypothesis.hpp"
#include "cst/model.hpp"
#include "cst/numerics.hpp"
#include "cst/penalty.hpp"

namespace cst::solver {

using cluster::CommStats;
using cluster::MasterView;
using inference::LinearHypothesis;

/// Sample size used by HBIC in the outer iterations: the master's n_1 or the total N.
enum class HbicScale { master, total };

struct StageConfig {
  std::vector<double> lambda_grid;  // empty: 30-point log grid from lambda_max to 0.01 lambda_max
  int max_outer = 10;
  double outer_tol = 1e-3;
  int inner_max = 5000;
  double inner_tol = 1e-6;
  int grid_points = 30;
  double grid_ratio = 0.01;
  HbicScale hbic_scale = HbicScale::master;
};

void validate(const StageConfig& cfg);

/// Master loss plus the linear gradient shift g_anchor - grad L_1(anchor):
/// L~(beta; anchor) = L_1(beta) + <g_anchor - grad L_1(anchor), beta>.
class SurrogateLoss {
 public:
  SurrogateLoss(const MasterView& view, const Vec& anchor, const Vec& g_anchor);

  double value(const Vec& beta) const;
  Vec gradient(const Vec& beta) const;
  double value_from_eta(const Vec& eta, const Vec& beta) const;
  Vec gradient_from_eta(const Vec& eta) const;
  /// X_1 beta, touching only the non-zero coordinates.
  Vec linear_predictor(const Vec& beta) const;
  Mat hessian(const Vec& beta, const IndexList& idx) const;

  const Vec& shift() const noexcept { return shift_; }
  model::Family family() const noexcept { return family_; }
  Index p() const noexcept { return data_->p(); }
  /// Power-iteration estimate of the master Hessian spectral norm at the anchor.
  double lipschitz() const noexcept { return lipschitz_; }

 private:
  model::Family family_;
  const model::SiteData* data_;
  Vec shift_;
  double lipschitz_ = 1.0;
};

Vec surrogate_gradient(const MasterView& view, const Vec& beta, const Vec& anchor, const Vec& g_anchor);

/// How beta splits into an unpenalised (possibly constrained) target block and a
/// penalised nuisance block. Nuisance coordinates that are not free stay at zero.
struct BlockLayout {
  IndexList target;
  IndexList nuisance;
  bool constrained = false;
  numerics::AffineNullSpace null_space;  // valid when constrained
  std::vector<char> free;                // per nuisance coordinate; empty means all free

  static BlockLayout make(const LinearHypothesis& hyp, Index p, bool constrained);
  bool is_free(std::size_t j) const { return free.empty() || free[j] != 0; }
};

struct ProxResult {
  Vec beta;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  std::vector<double> objective_trace;  // filled when requested
};

struct SolveOptions {
  bool record_objective = false;
};

/// Proximal gradient on the penalised surrogate with the prox applied only to the
/// nuisance block. When layout.constrained, theta = theta0 + Z u so C theta = t holds
/// at every iterate. Once the active set settles the solution is refined by Newton
/// steps on that set and accepted only if the lasso optimality conditions hold.
ProxResult prox_grad_solve(const SurrogateLoss& loss, const BlockLayout& layout, const Vec& weights,
                           const Vec& warm_start, const StageConfig& cfg, const SolveOptions& opts = {});

/// Convenience overload that builds the surrogate and the layout.
ProxResult prox_grad_solve(const MasterView& view, const Vec& anchor, const Vec& g_anchor,
                           const Vec& weights, const LinearHypothesis& hyp, bool constrained,
                           const Vec& warm_start, const StageConfig& cfg);

/// 2 N L~(beta) + |supp(gamma)| log(log N) log p.
double hbic_score(const SurrogateLoss& loss, const IndexList& nuisance, const Vec& beta, Index n_total);
double hbic_score(const MasterView& view, const Vec& anchor, const Vec& g_anchor, const Vec& beta,
                  const IndexList& nuisance);

/// Indices (beta coordinates) of exactly non-zero nuisance entries, ascending.
IndexList nuisance_support(const Vec& beta, const IndexList& nuisance);

std::vector<double> log_grid(double lambda_max, int points, double ratio);

struct TwoStageResult {
  model::PartitionedParam beta_hat;
  IndexList support;              // beta coordinates
  std::vector<Vec> anchor_trace;  // initial estimate, then every outer iterate
  CommStats comm;
  double lambda_stage1 = 0.0;
  double lambda_stage2 = 0.0;
  int stage1_iterations = 0;
  int stage2_iterations = 0;
  bool converged = true;  // false when either stage hit max_outer
  Vec initial;
  // Anchor and aggregated gradient of the final Stage II subproblem.
  Vec final_anchor;
  Vec final_anchor_gradient;
};

TwoStageResult run_two_stage(MasterView& view, const LinearHypothesis& hyp, penalty::Kind penalty_kind,
                             const StageConfig& cfg = {});

/// Minimiser of the surrogate at `anchor` subject to C theta = t with gamma restricted
/// to `support` (beta coordinates) and unpenalised there.
Vec restricted_solve(const MasterView& view, const Vec& anchor, const Vec& g_anchor,
                     const LinearHypothesis& hyp, const IndexList& support, const Vec& warm_start,
                     const StageConfig& cfg = {});

}  // namespace cst::solver
