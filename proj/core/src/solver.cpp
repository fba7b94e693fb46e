#include "cst/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "cst/error.hpp"

namespace cst::solver {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kBacktrackFloor = 1e-12;
constexpr int kStableBeforePolish = 5;

}  // namespace

void validate(const StageConfig& cfg) {
  require(cfg.max_outer >= 1 && cfg.inner_max >= 1, Errc::invalid_config, "iteration limits must be positive");
  require(cfg.outer_tol > 0.0 && cfg.inner_tol > 0.0, Errc::invalid_config, "tolerances must be positive");
  for (std::size_t i = 0; i < cfg.lambda_grid.size(); ++i) {
    require(cfg.lambda_grid[i] > 0.0, Errc::invalid_config, "lambda grid entries must be positive");
    if (i > 0)
      require(cfg.lambda_grid[i] < cfg.lambda_grid[i - 1], Errc::invalid_config,
              "lambda grid must be strictly decreasing");
  }
  if (cfg.lambda_grid.empty()) {
    require(cfg.grid_points >= 1, Errc::invalid_config, "grid needs at least one point");
    require(cfg.grid_ratio > 0.0 && cfg.grid_ratio <= 1.0, Errc::invalid_config, "grid ratio must be in (0, 1]");
  }
}

SurrogateLoss::SurrogateLoss(const MasterView& view, const Vec& anchor, const Vec& g_anchor)
    : family_(view.family()), data_(&view.master_data()) {
  require(anchor.size() == data_->p() && g_anchor.size() == data_->p(), Errc::dimension_mismatch,
          "anchor and aggregated gradient must have length p");
  shift_ = g_anchor - view.master_gradient(anchor);

  const Mat& x = data_->x;
  const Vec eta = x * anchor;
  Vec w(eta.size());
  for (Index i = 0; i < eta.size(); ++i) w[i] = model::variance(family_, eta[i]);
  const double inv_n = 1.0 / static_cast<double>(data_->n());
  lipschitz_ = numerics::power_iteration(
      [&](const Vec& v) -> Vec { return x.transpose() * (w.asDiagonal() * (x * v)) * inv_n; }, x.cols(), 30);
  if (!(lipschitz_ > 0.0)) lipschitz_ = 1.0;
}

Vec SurrogateLoss::linear_predictor(const Vec& beta) const {
  const Mat& x = data_->x;
  Index nnz = 0;
  for (Index j = 0; j < beta.size(); ++j) nnz += beta[j] != 0.0;
  if (2 * nnz > beta.size()) return x * beta;
  Vec eta = Vec::Zero(x.rows());
  for (Index j = 0; j < beta.size(); ++j) {
    if (beta[j] != 0.0) eta.noalias() += beta[j] * x.col(j);
  }
  return eta;
}

double SurrogateLoss::value_from_eta(const Vec& eta, const Vec& beta) const {
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) total += model::cumulant(family_, eta[i]) - data_->y[i] * eta[i];
  return total / static_cast<double>(data_->n()) + shift_.dot(beta);
}

Vec SurrogateLoss::gradient_from_eta(const Vec& eta) const {
  Vec r(eta.size());
  for (Index i = 0; i < eta.size(); ++i) r[i] = model::mean(family_, eta[i]) - data_->y[i];
  Vec g = data_->x.transpose() * r;
  g /= static_cast<double>(data_->n());
  return g + shift_;
}

double SurrogateLoss::value(const Vec& beta) const { return value_from_eta(linear_predictor(beta), beta); }

Vec SurrogateLoss::gradient(const Vec& beta) const { return gradient_from_eta(linear_predictor(beta)); }

Mat SurrogateLoss::hessian(const Vec& beta, const IndexList& idx) const {
  return model::hessian(family_, beta, *data_, idx);
}

Vec surrogate_gradient(const MasterView& view, const Vec& beta, const Vec& anchor, const Vec& g_anchor) {
  require(beta.size() == view.p() && anchor.size() == view.p() && g_anchor.size() == view.p(),
          Errc::dimension_mismatch, "beta, anchor and aggregated gradient must have length p");
  // Grouped so that beta == anchor returns g_anchor bit-for-bit.
  return (view.master_gradient(beta) - view.master_gradient(anchor)) + g_anchor;
}

BlockLayout BlockLayout::make(const LinearHypothesis& hyp, Index p, bool constrained) {
  BlockLayout out;
  out.target = hyp.target_idx;
  out.nuisance = model::complement(hyp.target_idx, p);
  out.constrained = constrained;
  if (constrained) out.null_space = numerics::null_space_affine(hyp.c, hyp.t);
  return out;
}

namespace {

// Optimisation variables: u (theta or null-space coordinates) and the nuisance block.
struct Point {
  Vec u;
  Vec gamma;
};

class Workspace {
 public:
  Workspace(const SurrogateLoss& loss, const BlockLayout& layout, const Vec& weights)
      : loss_(loss), layout_(layout), weights_(weights) {}

  Vec assemble(const Point& z) const {
    Vec beta = Vec::Zero(loss_.p());
    if (layout_.constrained) {
      beta(layout_.target) = layout_.null_space.theta0 + layout_.null_space.basis * z.u;
    } else {
      beta(layout_.target) = z.u;
    }
    beta(layout_.nuisance) = z.gamma;
    return beta;
  }

  Point project(const Vec& beta) const {
    Point z;
    const Vec theta = beta(layout_.target);
    z.u = layout_.constrained ? Vec(layout_.null_space.basis.transpose() * (theta - layout_.null_space.theta0))
                              : theta;
    z.gamma = beta(layout_.nuisance);
    for (std::size_t j = 0; j < layout_.nuisance.size(); ++j) {
      if (!layout_.is_free(j)) z.gamma[static_cast<Index>(j)] = 0.0;
    }
    return z;
  }

  double penalty(const Vec& gamma) const {
    double s = 0.0;
    for (Index j = 0; j < gamma.size(); ++j) {
      if (gamma[j] != 0.0) s += weights_[j] * std::abs(gamma[j]);
    }
    return s;
  }

  Vec target_gradient(const Vec& grad) const {
    const Vec gt = grad(layout_.target);
    return layout_.constrained ? Vec(layout_.null_space.basis.transpose() * gt) : gt;
  }

  std::vector<signed char> pattern(const Vec& gamma) const {
    std::vector<signed char> s(static_cast<std::size_t>(gamma.size()));
    for (Index j = 0; j < gamma.size(); ++j) s[static_cast<std::size_t>(j)] = (gamma[j] > 0) - (gamma[j] < 0);
    return s;
  }

  // Newton refinement on the active set; returns the refined point if it satisfies
  // the optimality conditions of the full penalised problem.
  std::optional<Point> polish(const Point& z, double current_objective) const {
    const Index du = z.u.size();
    IndexList active_pos;
    for (Index j = 0; j < z.gamma.size(); ++j) {
      if (z.gamma[j] != 0.0) active_pos.push_back(j);
    }
    const Index na = static_cast<Index>(active_pos.size());
    const Index k = du + na;
    if (k == 0) return std::nullopt;
    if (k >= loss_.p() + 1) return std::nullopt;

    IndexList coords = layout_.target;
    for (Index j : active_pos) coords.push_back(layout_.nuisance[static_cast<std::size_t>(j)]);
    const Index dt = static_cast<Index>(layout_.target.size());

    Vec sign_w(na);
    for (Index a = 0; a < na; ++a) {
      const Index j = active_pos[static_cast<std::size_t>(a)];
      sign_w[a] = (z.gamma[j] > 0 ? 1.0 : -1.0) * weights_[j];
    }

    // beta_coords = offset + M v with M = blockdiag(Z or I, I).
    Mat m = Mat::Zero(dt + na, k);
    if (layout_.constrained) {
      m.topLeftCorner(dt, du) = layout_.null_space.basis;
    } else {
      m.topLeftCorner(dt, du).setIdentity();
    }
    m.bottomRightCorner(na, na).setIdentity();

    auto to_point = [&](const Vec& v) {
      Point out{v.head(du), Vec::Zero(z.gamma.size())};
      for (Index a = 0; a < na; ++a) out.gamma[active_pos[static_cast<std::size_t>(a)]] = v[du + a];
      return out;
    };
    auto smooth_obj = [&](const Vec& v, Vec* grad_v) {
      const Vec beta = assemble(to_point(v));
      const Vec eta = loss_.linear_predictor(beta);
      if (grad_v != nullptr) {
        const Vec g = loss_.gradient_from_eta(eta);
        *grad_v = m.transpose() * g(coords);
        grad_v->tail(na) += sign_w;
      }
      return loss_.value_from_eta(eta, beta) + sign_w.dot(v.tail(na));
    };

    Vec v(k);
    v.head(du) = z.u;
    for (Index a = 0; a < na; ++a) v[du + a] = z.gamma[active_pos[static_cast<std::size_t>(a)]];

    for (int it = 0; it < 50; ++it) {
      Vec gv;
      const double phi = smooth_obj(v, &gv);
      const Mat h = m.transpose() * loss_.hessian(assemble(to_point(v)), coords) * m;
      Eigen::LDLT<Mat> ldlt(h);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
      const Vec dvec = ldlt.vectorD();
      if (dvec.minCoeff() <= 1e-12 * std::max(1.0, dvec.maxCoeff())) return std::nullopt;
      const Vec step = ldlt.solve(-gv);
      if (!step.allFinite()) return std::nullopt;
      double t = 1.0;
      const double slope = gv.dot(step);
      Vec trial = v + step;
      while (smooth_obj(trial, nullptr) > phi + kArmijo * t * slope && t > 1e-10) {
        t *= 0.5;
        trial = v + t * step;
      }
      v = trial;
      if (t * step.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + v.lpNorm<Eigen::Infinity>())) break;
      if (loss_.family() == model::Family::gaussian && it >= 1) break;
    }

    Point out = to_point(v);
    for (Index a = 0; a < na; ++a) {
      const Index j = active_pos[static_cast<std::size_t>(a)];
      if (out.gamma[j] == 0.0 || (out.gamma[j] > 0) != (z.gamma[j] > 0)) return std::nullopt;
    }
    const Vec beta = assemble(out);
    const Vec eta = loss_.linear_predictor(beta);
    const Vec grad = loss_.gradient_from_eta(eta);
    for (Index j = 0; j < z.gamma.size(); ++j) {
      if (out.gamma[j] != 0.0 || !layout_.is_free(static_cast<std::size_t>(j))) continue;
      const double gj = std::abs(grad[layout_.nuisance[static_cast<std::size_t>(j)]]);
      if (gj > weights_[j] + 1e-10 * std::max(1.0, weights_[j])) return std::nullopt;
    }
    const double obj = loss_.value_from_eta(eta, beta) + penalty(out.gamma);
    if (!(obj <= current_objective + 1e-12 * (1.0 + std::abs(current_objective)))) return std::nullopt;
    return out;
  }

  const SurrogateLoss& loss() const { return loss_; }
  const BlockLayout& layout() const { return layout_; }
  const Vec& weights() const { return weights_; }

 private:
  const SurrogateLoss& loss_;
  const BlockLayout& layout_;
  const Vec& weights_;
};

}  // namespace

ProxResult prox_grad_solve(const SurrogateLoss& loss, const BlockLayout& layout, const Vec& weights,
                           const Vec& warm_start, const StageConfig& cfg, const SolveOptions& opts) {
  require(warm_start.size() == loss.p(), Errc::dimension_mismatch, "warm start must have length p");
  require(weights.size() == static_cast<Index>(layout.nuisance.size()), Errc::dimension_mismatch,
          "one weight per nuisance coordinate expected");
  require((weights.array() >= 0.0).all(), Errc::invalid_arg, "penalty weights must be non-negative");
  require(warm_start.allFinite(), Errc::non_finite, "warm start is not finite");

  Workspace ws(loss, layout, weights);
  Point z = ws.project(warm_start);
  Vec beta = ws.assemble(z);
  Vec eta = loss.linear_predictor(beta);
  double obj = loss.value_from_eta(eta, beta) + ws.penalty(z.gamma);
  require(std::isfinite(obj), Errc::non_finite, "objective is not finite at the warm start");

  ProxResult res;
  if (opts.record_objective) res.objective_trace.push_back(obj);

  const double step0 = 1.0 / loss.lipschitz();
  double step = step0;
  Vec grad = loss.gradient_from_eta(eta);
  auto last_pattern = ws.pattern(z.gamma);
  std::vector<signed char> failed_pattern;
  int stable = 0;

  auto finish_polished = [&](const Point& refined) {
    z = refined;
    beta = ws.assemble(z);
    res.objective = loss.value(beta) + ws.penalty(z.gamma);
    res.polished = true;
    res.converged = true;
    if (opts.record_objective) res.objective_trace.push_back(res.objective);
  };

  for (int it = 0; it < cfg.inner_max; ++it) {
    const Vec gu = ws.target_gradient(grad);
    const Vec gg = grad(layout.nuisance);

    Point trial;
    Vec trial_beta, trial_eta;
    double trial_obj = 0.0;
    double delta2 = 0.0;
    bool accepted = false;
    while (true) {
      trial.u = z.u - step * gu;
      trial.gamma.resize(z.gamma.size());
      for (Index j = 0; j < z.gamma.size(); ++j) {
        trial.gamma[j] = layout.is_free(static_cast<std::size_t>(j))
                             ? penalty::soft_threshold(z.gamma[j] - step * gg[j], step * weights[j])
                             : 0.0;
      }
      delta2 = (trial.u - z.u).squaredNorm() + (trial.gamma - z.gamma).squaredNorm();
      if (delta2 == 0.0) break;
      trial_beta = ws.assemble(trial);
      trial_eta = loss.linear_predictor(trial_beta);
      trial_obj = loss.value_from_eta(trial_eta, trial_beta) + ws.penalty(trial.gamma);
      if (std::isfinite(trial_obj) && trial_obj <= obj - kArmijo / step * delta2) {
        accepted = true;
        break;
      }
      step *= 0.5;
      if (step < kBacktrackFloor * step0) break;
    }

    const double scale = std::max(1.0, std::sqrt(z.u.squaredNorm() + z.gamma.squaredNorm()));
    if (!accepted) {
      // No admissible decrease: either at a fixed point up to rounding, or divergent.
      require(std::sqrt(delta2) / scale < cfg.inner_tol || delta2 == 0.0, Errc::diverged,
              "backtracking could not decrease the surrogate objective");
      res.converged = true;
      break;
    }

    z = std::move(trial);
    beta = std::move(trial_beta);
    eta = std::move(trial_eta);
    obj = trial_obj;
    res.iterations = it + 1;
    if (opts.record_objective) res.objective_trace.push_back(obj);

    if (std::sqrt(delta2) / scale < cfg.inner_tol) {
      res.converged = true;
      break;
    }

    auto pat = ws.pattern(z.gamma);
    stable = pat == last_pattern ? stable + 1 : 0;
    last_pattern = std::move(pat);
    if (stable >= kStableBeforePolish && last_pattern != failed_pattern) {
      if (auto refined = ws.polish(z, obj)) {
        finish_polished(*refined);
        res.beta = std::move(beta);
        return res;
      }
      failed_pattern = last_pattern;
    }
    grad = loss.gradient_from_eta(eta);
  }

  if (res.converged && ws.pattern(z.gamma) != failed_pattern) {
    if (auto refined = ws.polish(z, obj)) {
      finish_polished(*refined);
      res.beta = std::move(beta);
      return res;
    }
  }
  res.objective = obj;
  res.beta = std::move(beta);
  return res;
}

ProxResult prox_grad_solve(const MasterView& view, const Vec& anchor, const Vec& g_anchor,
                           const Vec& weights, const LinearHypothesis& hyp, bool constrained,
                           const Vec& warm_start, const StageConfig& cfg) {
  inference::validate(hyp, view.p());
  const SurrogateLoss loss(view, anchor, g_anchor);
  const BlockLayout layout = BlockLayout::make(hyp, view.p(), constrained);
  return prox_grad_solve(loss, layout, weights, warm_start, cfg);
}

IndexList nuisance_support(const Vec& beta, const IndexList& nuisance) {
  IndexList out;
  for (Index j : nuisance) {
    if (beta[j] != 0.0) out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double hbic_score(const SurrogateLoss& loss, const IndexList& nuisance, const Vec& beta, Index n_total) {
  require(n_total >= 3, Errc::invalid_arg, "HBIC needs N >= 3 so that log(log N) > 0");
  const double n = static_cast<double>(n_total);
  const double df = static_cast<double>(nuisance_support(beta, nuisance).size());
  return 2.0 * n * loss.value(beta) + df * std::log(std::log(n)) * std::log(static_cast<double>(loss.p()));
}

double hbic_score(const MasterView& view, const Vec& anchor, const Vec& g_anchor, const Vec& beta,
                  const IndexList& nuisance) {
  require(beta.size() == view.p(), Errc::dimension_mismatch, "candidate must have length p");
  return hbic_score(SurrogateLoss(view, anchor, g_anchor), nuisance, beta, view.total_n());
}

std::vector<double> log_grid(double lambda_max, int points, double ratio) {
  require(lambda_max > 0.0 && points >= 1 && ratio > 0.0 && ratio <= 1.0, Errc::invalid_arg, "bad grid spec");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double frac = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
    grid[static_cast<std::size_t>(i)] = lambda_max * std::pow(ratio, frac);
  }
  return grid;
}

namespace {

struct PathChoice {
  Vec beta;
  double lambda = 0.0;
};

// Solves along the decreasing grid with warm starts and keeps the HBIC minimiser.
// The path stops once the nuisance support exceeds max_support.
PathChoice select_by_hbic(const SurrogateLoss& loss, const BlockLayout& layout, const std::vector<double>& grid,
                          const std::function<Vec(double)>& weights_for, const Vec& start,
                          const StageConfig& cfg, Index n_total, std::size_t max_support,
                          bool require_nonempty) {
  std::vector<PathChoice> path;
  std::vector<double> scores;
  Vec warm = start;
  for (double lam : grid) {
    ProxResult r = prox_grad_solve(loss, layout, weights_for(lam), warm, cfg);
    const std::size_t s = nuisance_support(r.beta, layout.nuisance).size();
    if (s > max_support && !path.empty()) break;
    scores.push_back(hbic_score(loss, layout.nuisance, r.beta, n_total));
    warm = r.beta;
    path.push_back({std::move(r.beta), lam});
  }
  std::size_t best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
  if (require_nonempty) {
    while (best + 1 < path.size() && nuisance_support(path[best].beta, layout.nuisance).empty()) ++best;
  }
  return std::move(path[best]);
}

}  // namespace

TwoStageResult run_two_stage(MasterView& view, const LinearHypothesis& hyp, penalty::Kind penalty_kind,
                             const StageConfig& cfg) {
  validate(cfg);
  const Index p = view.p();
  inference::validate(hyp, p);
  const BlockLayout free_layout = BlockLayout::make(hyp, p, false);
  const BlockLayout con_layout = BlockLayout::make(hyp, p, true);
  const Index n_master = view.master_data().n();
  const Index n_hbic = cfg.hbic_scale == HbicScale::master ? n_master : view.total_n();
  const std::size_t n_nuis = free_layout.nuisance.size();
  const std::size_t max_support =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(n_master), n_nuis) / 2);
  const Vec no_weights = Vec::Zero(static_cast<Index>(n_nuis));

  // Master-only problem: zero shift.
  const Vec zero = Vec::Zero(p);
  const SurrogateLoss local(view, zero, view.master_gradient(zero));

  std::vector<double> grid = cfg.lambda_grid;
  Vec theta_only;
  {
    BlockLayout pinned = free_layout;
    pinned.free.assign(n_nuis, 0);
    theta_only = prox_grad_solve(local, pinned, no_weights, zero, cfg).beta;
  }
  if (grid.empty()) {
    const Vec g = local.gradient(theta_only);
    double lambda_max = g(free_layout.nuisance).lpNorm<Eigen::Infinity>();
    if (!(lambda_max > 0.0)) lambda_max = 1e-8;
    grid = log_grid(lambda_max, cfg.grid_points, cfg.grid_ratio);
  }

  TwoStageResult res;
  auto l1_weights = [&](double lam) -> Vec { return Vec::Constant(static_cast<Index>(n_nuis), lam); };

  res.initial = select_by_hbic(local, free_layout, grid, l1_weights, theta_only, cfg, n_master, max_support,
                               /*require_nonempty=*/true)
                    .beta;
  res.anchor_trace.push_back(res.initial);

  Vec beta = res.initial;
  bool stage1_done = false;
  for (int k = 1; k <= cfg.max_outer; ++k) {
    const Vec g = view.global_gradient(beta);
    const SurrogateLoss loss(view, beta, g);
    PathChoice ch =
        select_by_hbic(loss, free_layout, grid, l1_weights, beta, cfg, n_hbic, max_support, false);
    res.lambda_stage1 = ch.lambda;
    res.stage1_iterations = k;
    const double diff = (ch.beta - beta).norm();
    beta = std::move(ch.beta);
    res.anchor_trace.push_back(beta);
    if (diff < cfg.outer_tol) {
      stage1_done = true;
      break;
    }
  }

  bool stage2_done = false;
  for (int k = 1; k <= cfg.max_outer; ++k) {
    const Vec g = view.global_gradient(beta);
    const SurrogateLoss loss(view, beta, g);
    const Vec abs_gamma = beta(con_layout.nuisance).cwiseAbs();
    auto reweighted = [&](double lam) -> Vec {
      const penalty::PenaltySpec spec = penalty::PenaltySpec::make(penalty_kind, lam);
      Vec w(abs_gamma.size());
      for (Index j = 0; j < w.size(); ++j) w[j] = penalty::derivative(spec, abs_gamma[j]);
      return w;
    };

    Vec next;
    if (k == 1) {
      PathChoice ch = select_by_hbic(loss, con_layout, grid, reweighted, beta, cfg, n_hbic,
                                     max_support, false);
      res.lambda_stage2 = ch.lambda;
      next = std::move(ch.beta);
    } else {
      next = prox_grad_solve(loss, con_layout, reweighted(res.lambda_stage2), beta, cfg).beta;
    }
    res.final_anchor = beta;
    res.final_anchor_gradient = g;
    res.stage2_iterations = k;
    const double diff = (next - beta).norm();
    beta = std::move(next);
    res.anchor_trace.push_back(beta);
    if (diff < cfg.outer_tol) {
      stage2_done = true;
      break;
    }
  }

  res.converged = stage1_done && stage2_done;
  res.support = nuisance_support(beta, con_layout.nuisance);
  res.beta_hat = model::PartitionedParam(std::move(beta), hyp.target_idx);
  res.comm = view.stats();
  return res;
}

Vec restricted_solve(const MasterView& view, const Vec& anchor, const Vec& g_anchor,
                     const LinearHypothesis& hyp, const IndexList& support, const Vec& warm_start,
                     const StageConfig& cfg) {
  inference::validate(hyp, view.p());
  BlockLayout layout = BlockLayout::make(hyp, view.p(), true);
  layout.free.assign(layout.nuisance.size(), 0);
  for (Index j : support) {
    const auto it = std::find(layout.nuisance.begin(), layout.nuisance.end(), j);
    require(it != layout.nuisance.end(), Errc::invalid_arg, "support index is not a nuisance coordinate");
    layout.free[static_cast<std::size_t>(it - layout.nuisance.begin())] = 1;
  }
  const SurrogateLoss loss(view, anchor, g_anchor);
  const Vec weights = Vec::Zero(static_cast<Index>(layout.nuisance.size()));
  return prox_grad_solve(loss, layout, weights, warm_start, cfg).beta;
}

}  // namespace cst::solver
