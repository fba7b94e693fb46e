#include <doctest.h>

#include <random>

#include "cst/cluster.hpp"
#include "cst/error.hpp"
#include "cst/solver.hpp"
#include "oracles.hpp"

using namespace cst;
using namespace cst::solver;
using cluster::Cluster;
using cluster::PooledView;
using inference::LinearHypothesis;
using model::Family;
using model::SiteData;

namespace {

std::vector<SiteData> simulate_sites(Family f, const Vec& beta, const std::vector<Index>& sizes, std::uint64_t seed,
                                     double rho = 0.5) {
  const model::CovarianceFactor sigma(model::Toeplitz{beta.size(), rho});
  std::vector<SiteData> out;
  for (std::size_t k = 0; k < sizes.size(); ++k)
    out.push_back(model::simulate(f, beta, sizes[k], sigma, seed * 131 + k, static_cast<int>(k)));
  return out;
}

LinearHypothesis h1() {
  LinearHypothesis h;
  h.c = Mat::Ones(1, 1);
  h.t = Vec::Zero(1);
  h.target_idx = {0};
  return h;
}

LinearHypothesis contrast(Index a, Index b) {
  LinearHypothesis h;
  h.c = Mat(1, 2);
  h.c << 1, -1;
  h.t = Vec::Zero(1);
  h.target_idx = {a, b};
  return h;
}

Vec sparse_beta(Index p) {
  Vec b = Vec::Zero(p);
  b(3) = 1.0;
  b(4) = 1.0;
  return b;
}

StageConfig tight() {
  StageConfig cfg;
  cfg.inner_tol = 1e-12;
  cfg.inner_max = 200000;
  return cfg;
}

}  // namespace

TEST_CASE("surrogate anchor identity and single-site reduction") {
  std::mt19937_64 rng(1);
  for (Family f : {Family::gaussian, Family::logistic}) {
    auto c = Cluster::in_process(f, simulate_sites(f, sparse_beta(8), {30, 40, 50}, 2));
    for (int t = 0; t < 10; ++t) {
      const Vec a = oracle::random_matrix(8, 1, rng) * 0.4;
      const Vec g = c->global_gradient(a);
      CHECK(surrogate_gradient(*c, a, a, g) == g);
      CHECK(SurrogateLoss(*c, a, g).gradient(a).isApprox(g, 1e-13));
    }
    auto one = Cluster::in_process(f, simulate_sites(f, sparse_beta(8), {60}, 3));
    const Vec a = Vec::Constant(8, 0.1);
    const Vec g = one->global_gradient(a);
    const SurrogateLoss loss(*one, a, g);
    CHECK(loss.shift().cwiseAbs().maxCoeff() == 0.0);
    for (int t = 0; t < 5; ++t) {
      const Vec b = oracle::random_matrix(8, 1, rng);
      const Vec direct = model::gradient(f, b, one->master_data());
      CHECK((surrogate_gradient(*one, b, a, g) - direct).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(loss.gradient(b).isApprox(direct, 1e-14));
    }
  }
}

TEST_CASE("gaussian surrogate gradient closed form") {
  std::mt19937_64 rng(4);
  auto sites = simulate_sites(Family::gaussian, sparse_beta(6), {25, 35}, 5);
  const Mat x1 = sites[0].x;
  auto c = Cluster::in_process(Family::gaussian, sites);
  const Vec a = oracle::random_matrix(6, 1, rng);
  const Vec g = c->global_gradient(a);
  for (int t = 0; t < 5; ++t) {
    const Vec b = oracle::random_matrix(6, 1, rng);
    const Vec expect = (x1.transpose() * x1 / 25.0) * (b - a) + g;
    CHECK((surrogate_gradient(*c, b, a, g) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gaussian surrogate Hessian is the master Gram matrix for any anchor") {
  std::mt19937_64 rng(6);
  auto sites = simulate_sites(Family::gaussian, sparse_beta(5), {40, 20}, 7);
  const Mat gram = sites[0].x.transpose() * sites[0].x / 40.0;
  auto c = Cluster::in_process(Family::gaussian, sites);
  for (int t = 0; t < 3; ++t) {
    const Vec a = oracle::random_matrix(5, 1, rng);
    const SurrogateLoss loss(*c, a, c->global_gradient(a));
    const Vec b = oracle::random_matrix(5, 1, rng);
    const double h = 1e-5;
    for (Index j = 0; j < 5; ++j) {
      Vec up = b, dn = b;
      up(j) += h;
      dn(j) -= h;
      const Vec col = (loss.gradient(up) - loss.gradient(dn)) / (2 * h);
      CHECK((col - gram.col(j)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("prox_grad_solve without penalty reproduces OLS") {
  auto c = Cluster::in_process(Family::gaussian, simulate_sites(Family::gaussian, sparse_beta(6), {80}, 8));
  const Vec zero = Vec::Zero(6);
  const auto res = prox_grad_solve(*c, zero, c->global_gradient(zero), Vec::Zero(5), h1(), false, zero, tight());
  const auto& d = c->master_data();
  const Vec ols = (d.x.transpose() * d.x).ldlt().solve(d.x.transpose() * d.y);
  CHECK((res.beta - ols).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fully pinned target block equals t exactly") {
  auto c = Cluster::in_process(Family::logistic, simulate_sites(Family::logistic, sparse_beta(7), {90, 60}, 9));
  LinearHypothesis h;
  h.c = Mat::Identity(2, 2);
  h.t = (Vec(2) << 0.3, -0.7).finished();
  h.target_idx = {1, 5};
  const Vec a = Vec::Zero(7);
  const auto res = prox_grad_solve(*c, a, c->global_gradient(a), Vec::Constant(5, 0.05), h, true, a, StageConfig{});
  CHECK(res.beta(1) == 0.3);
  CHECK(res.beta(5) == -0.7);
}

TEST_CASE("unconstrained L1 subproblem matches coordinate descent on 20 instances") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> pdist(3, 20);
  for (int trial = 0; trial < 20; ++trial) {
    const Family f = trial % 2 ? Family::logistic : Family::gaussian;
    const Index p = pdist(rng);
    Vec beta = Vec::Zero(p);
    beta(0) = 0.5;
    beta(p - 1) = 1.0;
    auto sites = simulate_sites(f, beta, {50, 40, 30}, 100 + trial);
    auto c = Cluster::in_process(f, sites);
    const Vec anchor = oracle::random_matrix(p, 1, rng) * 0.2;
    const Vec g = c->global_gradient(anchor);
    const SurrogateLoss loss(*c, anchor, g);
    const double lam = f == Family::gaussian ? 0.08 : 0.03;
    const LinearHypothesis hyp = h1();
    const Vec weights = Vec::Constant(p - 1, lam);

    const auto res = prox_grad_solve(*c, anchor, g, weights, hyp, false, Vec::Zero(p), tight());
    Vec w_full(p);
    w_full(0) = 0.0;
    w_full.tail(p - 1) = weights;
    const Vec ref = oracle::coordinate_descent(sites[0].x, sites[0].y, f == Family::logistic, loss.shift(), w_full);
    CHECK_MESSAGE((res.beta - ref).cwiseAbs().maxCoeff() < 1e-5, "trial " << trial << " p=" << p);
  }
}

TEST_CASE("constrained unpenalised problem matches the KKT solution") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Index p = 4;
    Vec beta(p);
    beta << 0.4, -0.2, 1.0, 0.5;
    auto sites = simulate_sites(Family::gaussian, beta, {40, 30}, 200 + trial);
    auto c = Cluster::in_process(Family::gaussian, sites);
    LinearHypothesis hyp;
    hyp.c = oracle::random_matrix(1, 2, rng);
    hyp.t = oracle::random_matrix(1, 1, rng);
    hyp.target_idx = {1, 2};
    const Vec anchor = oracle::random_matrix(p, 1, rng) * 0.3;
    const Vec g = c->global_gradient(anchor);
    const auto res = prox_grad_solve(*c, anchor, g, Vec::Zero(2), hyp, true, Vec::Zero(p), tight());

    Mat a = Mat::Zero(1, p);
    a(0, 1) = hyp.c(0, 0);
    a(0, 2) = hyp.c(0, 1);
    const Vec shift = SurrogateLoss(*c, anchor, g).shift();
    const Vec ref = oracle::constrained_least_squares(sites[0].x, sites[0].y, shift, a, hyp.t);
    CHECK((res.beta - ref).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs((a * res.beta - hyp.t)(0)) < 1e-10);
  }
}

TEST_CASE("inner loop is monotone, sparse and satisfies the optimality conditions") {
  auto sites = simulate_sites(Family::logistic, sparse_beta(30), {120, 80}, 12);
  auto c = Cluster::in_process(Family::logistic, sites);
  const Vec anchor = Vec::Zero(30);
  const Vec g = c->global_gradient(anchor);
  const SurrogateLoss loss(*c, anchor, g);
  const LinearHypothesis hyp = contrast(3, 4);
  for (bool constrained : {false, true}) {
    const BlockLayout layout = BlockLayout::make(hyp, 30, constrained);
    const Vec w = Vec::Constant(28, 0.04);
    StageConfig cfg;
    SolveOptions opts;
    opts.record_objective = true;
    const auto res = prox_grad_solve(loss, layout, w, anchor, cfg, opts);
    CHECK(res.converged);
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
      CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-12);

    const Vec grad = loss.gradient(res.beta);
    for (std::size_t j = 0; j < layout.nuisance.size(); ++j) {
      const Index k = layout.nuisance[j];
      const double bj = res.beta(k);
      if (bj != 0.0) {
        CHECK(std::abs(grad(k) + w(static_cast<Index>(j)) * (bj > 0 ? 1.0 : -1.0)) <= 10 * cfg.inner_tol);
      } else {
        CHECK(std::abs(grad(k)) <= w(static_cast<Index>(j)) + 10 * cfg.inner_tol);
      }
    }
    if (constrained) {
      CHECK(std::abs(res.beta(3) - res.beta(4)) < 1e-10);
    } else {
      CHECK(std::abs(grad(3)) <= 10 * cfg.inner_tol);
      CHECK(std::abs(grad(4)) <= 10 * cfg.inner_tol);
    }
    const auto supp = nuisance_support(res.beta, layout.nuisance);
    Index nnz_nuis = 0;
    for (Index k : layout.nuisance) nnz_nuis += res.beta(k) != 0.0;
    CHECK(static_cast<Index>(supp.size()) == nnz_nuis);
    CHECK(nnz_nuis < 28);
  }
}

TEST_CASE("hbic_score") {
  auto sites = simulate_sites(Family::gaussian, sparse_beta(10), {50, 50}, 13);
  auto c = Cluster::in_process(Family::gaussian, sites);
  const Vec a = Vec::Zero(10);
  const Vec g = c->global_gradient(a);
  const IndexList nuis = model::complement({0}, 10);
  const SurrogateLoss loss(*c, a, g);

  Vec empty = Vec::Zero(10);
  empty(0) = 0.3;
  CHECK(hbic_score(*c, a, g, empty, nuis) == doctest::Approx(2.0 * 100 * loss.value(empty)).epsilon(1e-14));
  // a zero-valued nuisance entry does not count towards the support
  Vec one = empty;
  one(5) = 1e-300;
  const double per_coef = std::log(std::log(100.0)) * std::log(10.0);
  CHECK(hbic_score(*c, a, g, one, nuis) - hbic_score(*c, a, g, empty, nuis) == doctest::Approx(per_coef).epsilon(1e-6));
  CHECK(hbic_score(loss, nuis, one, 100) > hbic_score(loss, nuis, empty, 100) - 1e-12);
}

TEST_CASE("HBIC prefers the oracle support over the full model on sparse data") {
  const Index p = 50;
  auto sites = simulate_sites(Family::gaussian, sparse_beta(p), {500}, 14);
  auto c = Cluster::in_process(Family::gaussian, sites);
  const Vec a = Vec::Zero(p);
  const Vec g = c->global_gradient(a);
  const LinearHypothesis hyp = h1();
  const BlockLayout layout = BlockLayout::make(hyp, p, false);
  const SurrogateLoss loss(*c, a, g);
  BlockLayout oracle_layout = layout;
  oracle_layout.free.assign(layout.nuisance.size(), 0);
  oracle_layout.free[2] = oracle_layout.free[3] = 1;  // nuisance positions of coordinates 3 and 4
  const Vec w0 = Vec::Zero(p - 1);
  const Vec oracle_fit = prox_grad_solve(loss, oracle_layout, w0, a, tight()).beta;
  const Vec full_fit = prox_grad_solve(loss, layout, w0, a, tight()).beta;
  CHECK(nuisance_support(oracle_fit, layout.nuisance) == IndexList{3, 4});
  CHECK(nuisance_support(full_fit, layout.nuisance).size() == static_cast<std::size_t>(p - 1));
  CHECK(hbic_score(*c, a, g, oracle_fit, layout.nuisance) < hbic_score(*c, a, g, full_fit, layout.nuisance));
}

TEST_CASE("log_grid") {
  const auto g = log_grid(2.0, 30, 0.01);
  REQUIRE(g.size() == 30);
  CHECK(g.front() == 2.0);
  CHECK(g.back() == doctest::Approx(0.02));
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] < g[i - 1]);
}

TEST_CASE("two-stage estimator recovers the support on noiseless data") {
  const Index p = 50;
  const Vec beta_star = sparse_beta(p);
  for (int seed = 0; seed < 20; ++seed) {
    auto sites = simulate_sites(Family::gaussian, beta_star, {200, 200, 200, 200, 200}, 300 + seed);
    for (auto& s : sites) s.y = s.x * beta_star;
    auto c = Cluster::in_process(Family::gaussian, sites);
    const auto res = run_two_stage(*c, h1(), penalty::Kind::scad);
    CHECK(res.support == IndexList{3, 4});
    CHECK((res.beta_hat.beta() - beta_star).norm() <= 0.05);
    CHECK(res.beta_hat.beta()(0) == 0.0);
  }
}

TEST_CASE("two-stage result invariants") {
  const Index p = 40;
  Vec beta_star = sparse_beta(p);
  beta_star(3) = 1.2;  // H3 alternative
  auto sites = simulate_sites(Family::logistic, beta_star, {150, 150, 150, 150}, 15);
  auto c = Cluster::in_process(Family::logistic, sites);
  const auto hyp = contrast(3, 4);
  const auto res = run_two_stage(*c, hyp, penalty::Kind::mcp);
  const Vec& b = res.beta_hat.beta();
  CHECK(std::abs(b(3) - b(4)) < 1e-10);
  for (Index j : model::complement(hyp.target_idx, p)) {
    const bool in = std::find(res.support.begin(), res.support.end(), j) != res.support.end();
    CHECK(in == (b(j) != 0.0));
  }
  CHECK(res.anchor_trace.size() == static_cast<std::size_t>(1 + res.stage1_iterations + res.stage2_iterations));
  CHECK(res.comm.rounds == static_cast<std::uint64_t>(res.stage1_iterations + res.stage2_iterations));
  CHECK(res.lambda_stage1 > 0.0);
  CHECK(res.lambda_stage2 > 0.0);
  CHECK(res.final_anchor.size() == p);
}

TEST_CASE("single-site two-stage equals the pooled computation") {
  auto sites = simulate_sites(Family::logistic, sparse_beta(30), {300}, 16);
  auto c = Cluster::in_process(Family::logistic, sites);
  PooledView pooled(Family::logistic, sites[0]);
  const auto a = run_two_stage(*c, h1(), penalty::Kind::scad);
  const auto b = run_two_stage(pooled, h1(), penalty::Kind::scad);
  CHECK((a.beta_hat.beta() - b.beta_hat.beta()).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(a.support == b.support);
}

TEST_CASE("configuration and dimension errors") {
  auto c = Cluster::in_process(Family::gaussian, simulate_sites(Family::gaussian, sparse_beta(6), {30}, 17));
  StageConfig bad;
  bad.lambda_grid = {0.1, 0.2};
  CHECK_THROWS_AS(validate(bad), Error);
  StageConfig neg;
  neg.outer_tol = 0.0;
  CHECK_THROWS_AS(validate(neg), Error);
  CHECK_THROWS_AS(surrogate_gradient(*c, Vec::Zero(5), Vec::Zero(6), Vec::Zero(6)), Error);
  const Vec z = Vec::Zero(6);
  CHECK_THROWS_AS(prox_grad_solve(*c, z, z, Vec::Zero(4), h1(), false, z, StageConfig{}), Error);
  LinearHypothesis rank_def;
  rank_def.c = Mat::Ones(2, 2);
  rank_def.t = Vec::Zero(2);
  rank_def.target_idx = {0, 1};
  CHECK_THROWS_AS(run_two_stage(*c, rank_def, penalty::Kind::scad), Error);
}
