// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
// Usage: cst_acceptance [--allow-fail N]... [criterion numbers...]   (default: all ten)
// --allow-fail N still prints FAIL for criterion N but leaves it out of the exit status.
// CST_ACCEPT_REPS overrides the Monte Carlo replication count (development only).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>

#include "cst/cluster.hpp"
#include "cst/harness.hpp"
#include "cst/inference.hpp"
#include "cst/model.hpp"
#include "cst/penalty.hpp"
#include "cst/solver.hpp"
#include "oracles.hpp"

using namespace cst;
using harness::HypothesisKind;
using harness::McResult;
using harness::SimConfig;
using model::Family;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int reps(int full) {
  if (const char* env = std::getenv("CST_ACCEPT_REPS")) return std::max(1, std::atoi(env));
  return full;
}

SimConfig desk(Family f, double h) {
  SimConfig cfg;
  cfg.family = f;
  cfg.m = 10;
  cfg.n_per_site = 100;
  cfg.p = 400;
  cfg.hypothesis = HypothesisKind::h1_univariate;
  cfg.h = h;
  cfg.alphas = {0.05};
  cfg.threads = 0;
  return cfg;
}

void progress(const harness::ReplicationRecord& rec) {
  if (!rec.ok) std::fprintf(stderr, "  replication %d failed: %s\n", rec.rep, rec.error.c_str());
}

McResult simulate(SimConfig cfg, int r) {
  cfg.replications = reps(r);
  const auto res = harness::run_monte_carlo(cfg, progress);
  std::fprintf(stderr, "  %s: R=%d rate=%.3f ocst=%.3f agree=%d (%.0fs)\n", res.label.c_str(), res.replications,
               res.rejection_rate.at(0.05), res.ocst_rejection_rate.count(0.05) ? res.ocst_rejection_rate.at(0.05) : -1.0,
               res.oracle_agreements, res.wall_time);
  return res;
}

// Cached null runs shared by criteria 1, 3, 4 and 5.
std::map<Family, McResult> null_runs;
const McResult& null_run(Family f) {
  auto it = null_runs.find(f);
  if (it == null_runs.end()) it = null_runs.emplace(f, simulate(desk(f, 0.0), 200)).first;
  return it->second;
}

bool in_size_band(double rate) { return rate >= 0.010 && rate <= 0.100; }

// Power at every grid point; monotone with slack 0.05.
struct GridRun {
  std::vector<double> h, power;
  bool monotone = true;
};

GridRun power_grid(Family f, const std::vector<double>& grid, int r) {
  GridRun out;
  for (double h : grid) {
    const McResult& res = h == 0.0 ? null_run(f) : simulate(desk(f, h), r);
    out.h.push_back(h);
    out.power.push_back(res.rejection_rate.at(0.05));
  }
  for (std::size_t i = 1; i < out.power.size(); ++i)
    if (out.power[i] < out.power[i - 1] - 0.05) out.monotone = false;
  return out;
}

std::string describe(const GridRun& g) {
  std::string s;
  for (std::size_t i = 0; i < g.h.size(); ++i) s += fmt("%s%g:%.3f", i ? " " : "", g.h[i], g.power[i]);
  return s;
}

Outcome criterion1() {
  const auto& r = null_run(Family::gaussian);
  const double rate = r.rejection_rate.at(0.05);
  return {in_size_band(rate) && r.replications > 0,
          fmt("gaussian H1 h=0, R=%d: rejection %.3f, band [0.010, 0.100]", r.replications, rate)};
}

Outcome criterion2() {
  const auto g = power_grid(Family::gaussian, {0.0, 0.03, 0.06, 0.08, 0.10}, 100);
  const double top = g.power.back();
  return {g.monotone && top > 0.9, fmt("gaussian power %s; monotone=%d, top %.3f > 0.9", describe(g).c_str(),
                                       static_cast<int>(g.monotone), top)};
}

Outcome criterion3() {
  const auto g = power_grid(Family::logistic, {0.0, 0.06, 0.12, 0.18, 0.24}, 100);
  const double size = g.power.front(), top = g.power.back();
  return {in_size_band(size) && top >= 0.8,
          fmt("logistic power %s; size in [0.010, 0.100], top %.3f >= 0.8", describe(g).c_str(), top)};
}

Outcome criterion4() {
  int agree = 0, total = 0;
  for (Family f : {Family::gaussian, Family::logistic}) {
    agree += null_run(f).oracle_agreements;
    total += null_run(f).replications;
  }
  const double frac = total ? static_cast<double>(agree) / total : 0.0;
  return {frac >= 0.9, fmt("CST/OCST agree to 1e-8 in %d/%d null replications (%.3f >= 0.90)", agree, total, frac)};
}

double ks_statistic(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  const double n = static_cast<double>(p.size());
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    d = std::max({d, (i + 1) / n - p[i], p[i] - i / n});
  return d;
}

Outcome criterion5() {
  bool ok = true;
  std::string detail;
  for (Family f : {Family::gaussian, Family::logistic}) {
    const auto& r = null_run(f);
    const double d = ks_statistic(r.p_values);
    const double crit = 1.63 / std::sqrt(static_cast<double>(r.p_values.size()));
    ok = ok && !r.p_values.empty() && d < crit;
    detail += fmt("%s KS %.4f < %.4f; ", f == Family::gaussian ? "gaussian" : "logistic", d, crit);
  }
  return {ok, detail};
}

inference::LinearHypothesis h1_hyp() {
  inference::LinearHypothesis h;
  h.c = Mat::Ones(1, 1);
  h.t = Vec::Zero(1);
  h.target_idx = {0};
  return h;
}

std::vector<model::SiteData> sites_for(Family f, const Vec& beta, const std::vector<Index>& sizes, std::uint64_t seed) {
  const model::CovarianceFactor sigma(model::Toeplitz{beta.size(), 0.5});
  std::vector<model::SiteData> out;
  for (std::size_t k = 0; k < sizes.size(); ++k)
    out.push_back(model::simulate(f, beta, sizes[k], sigma, seed + 17 * k, static_cast<int>(k)));
  return out;
}

Vec sparse_beta(Index p, double b0) {
  Vec b = Vec::Zero(p);
  b(0) = b0;
  b(3) = 1.0;
  b(4) = 1.0;
  return b;
}

Outcome criterion6() {
  bool exact = true;
  for (Family f : {Family::gaussian, Family::logistic}) {
    const auto data = sites_for(f, sparse_beta(60, 0.1), {600}, 61);
    auto one = cluster::Cluster::in_process(f, data);
    cluster::PooledView direct(f, data[0]);
    const auto a = solver::run_two_stage(*one, h1_hyp(), penalty::Kind::scad);
    const auto b = solver::run_two_stage(direct, h1_hyp(), penalty::Kind::scad);
    const auto ra = inference::cst_test(*one, a, h1_hyp(), inference::VarianceMode::pooled);
    const auto rb = inference::cst_test(direct, b, h1_hyp(), inference::VarianceMode::pooled);
    exact = exact && a.beta_hat.beta() == b.beta_hat.beta() && ra.statistic == rb.statistic &&
            ra.p_value == rb.p_value && ra.support == rb.support;
  }

  double worst = 0.0;
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    const Family f = trial % 2 ? Family::logistic : Family::gaussian;
    const auto pooled = sites_for(f, sparse_beta(30, 0.2), {500}, 600 + trial)[0];
    // random cut points into 2..8 sites
    std::uniform_int_distribution<int> mdist(2, 8);
    const int m = mdist(rng);
    std::vector<Index> cuts{0, pooled.n()};
    std::uniform_int_distribution<Index> cdist(1, pooled.n() - 1);
    while (static_cast<int>(cuts.size()) < m + 1) {
      const Index c = cdist(rng);
      if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<model::SiteData> parts;
    for (int k = 0; k < m; ++k) {
      model::SiteData s;
      s.x = pooled.x.middleRows(cuts[k], cuts[k + 1] - cuts[k]);
      s.y = pooled.y.segment(cuts[k], cuts[k + 1] - cuts[k]);
      parts.push_back(std::move(s));
    }
    auto c = cluster::Cluster::in_process(f, parts);
    for (int t = 0; t < 5; ++t) {
      const Vec beta = oracle::random_matrix(30, 1, rng) * 0.5;
      const Vec g = c->global_gradient(beta);
      const Vec ref = model::gradient(f, beta, pooled);
      worst = std::max(worst, (g - ref).cwiseAbs().maxCoeff());
    }
  }
  return {exact && worst <= 1e-12,
          fmt("m=1 pooled-mode pipeline bit-identical=%d; partition gradient max error %.2e <= 1e-12",
              static_cast<int>(exact), worst)};
}

Outcome criterion7() {
  SimConfig cfg = desk(Family::gaussian, 0.0);
  cfg.m = 20;
  cfg.n_per_site = 200;
  cfg.h_grid = {0.015, 0.03, 0.04, 0.05};
  cfg.replications = reps(200);
  const auto curve = harness::power_curve(cfg, true, progress);
  bool ok = true;
  std::string detail = "N=4000, r=1:";
  for (const auto& pt : curve) {
    const double emp = pt.empirical.value_or(-1.0);
    ok = ok && std::abs(emp - pt.theoretical) <= 0.10;
    detail += fmt(" h=%g emp %.3f vs %.3f;", pt.h, emp, pt.theoretical);
  }
  return {ok, detail + " tolerance 0.10"};
}

Outcome criterion8() {
  std::mt19937_64 rng(80);
  // (a) L1 subproblem vs coordinate descent
  double worst_cd = 0.0;
  std::uniform_int_distribution<int> pdist(3, 20);
  for (int trial = 0; trial < 20; ++trial) {
    const Family f = trial % 2 ? Family::logistic : Family::gaussian;
    const Index p = pdist(rng);
    Vec beta = Vec::Zero(p);
    beta(0) = 0.5;
    beta(p - 1) = 1.0;
    const auto data = sites_for(f, beta, {60, 50, 40}, 800 + trial);
    auto c = cluster::Cluster::in_process(f, data);
    const Vec anchor = oracle::random_matrix(p, 1, rng) * 0.2;
    const Vec g = c->global_gradient(anchor);
    const solver::SurrogateLoss loss(*c, anchor, g);
    const double lam = f == Family::gaussian ? 0.08 : 0.03;
    const Vec w = Vec::Constant(p - 1, lam);
    solver::StageConfig tight;
    tight.inner_tol = 1e-12;
    tight.inner_max = 200000;
    const auto res = solver::prox_grad_solve(*c, anchor, g, w, h1_hyp(), false, Vec::Zero(p), tight);
    Vec w_full(p);
    w_full(0) = 0.0;
    w_full.tail(p - 1) = w;
    const Vec ref = oracle::coordinate_descent(data[0].x, data[0].y, f == Family::logistic, loss.shift(), w_full);
    worst_cd = std::max(worst_cd, (res.beta - ref).cwiseAbs().maxCoeff());
  }

  // (b) constrained, unpenalised least squares vs KKT
  double worst_kkt = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index p = 5;
    Vec beta(p);
    beta << 0.4, -0.2, 1.0, 0.5, 0.0;
    const auto data = sites_for(Family::gaussian, beta, {50, 40}, 900 + trial);
    auto c = cluster::Cluster::in_process(Family::gaussian, data);
    inference::LinearHypothesis hyp;
    hyp.c = oracle::random_matrix(1, 3, rng);
    hyp.t = oracle::random_matrix(1, 1, rng);
    hyp.target_idx = {0, 1, 2};
    const Vec anchor = oracle::random_matrix(p, 1, rng) * 0.3;
    const Vec g = c->global_gradient(anchor);
    solver::StageConfig tight;
    tight.inner_tol = 1e-12;
    tight.inner_max = 200000;
    const auto res = solver::prox_grad_solve(*c, anchor, g, Vec::Zero(2), hyp, true, Vec::Zero(p), tight);
    Mat a = Mat::Zero(1, p);
    a.leftCols(3) = hyp.c;
    const Vec shift = solver::SurrogateLoss(*c, anchor, g).shift();
    const Vec ref = oracle::constrained_least_squares(data[0].x, data[0].y, shift, a, hyp.t);
    worst_kkt = std::max(worst_kkt, (res.beta - ref).cwiseAbs().maxCoeff());
  }

  // (c) prox vs scalar grid search
  double worst_prox = 0.0;
  std::uniform_real_distribution<double> v(-3.0, 3.0), w(0.0, 2.0), eta(0.05, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double vi = v(rng), wi = w(rng), ei = eta(rng);
    const double got = penalty::prox_weighted_l1(Vec::Constant(1, vi), Vec::Constant(1, wi), ei)(0);
    worst_prox = std::max(worst_prox, std::abs(got - oracle::prox_grid_search(vi, wi, ei)));
  }
  return {worst_cd < 1e-5 && worst_kkt < 1e-6 && worst_prox < 1e-4,
          fmt("CD max err %.2e < 1e-5; KKT max err %.2e < 1e-6; prox max err %.2e < 1e-4", worst_cd, worst_kkt,
              worst_prox)};
}

Outcome criterion9() {
  std::mt19937_64 rng(90);
  double worst_omega = 0.0, worst_proj = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 1 + trial % 4;
    const Index r = 1 + trial % d;
    const Index s = trial % 6;
    inference::LinearHypothesis hyp;
    hyp.c = oracle::random_matrix(r, d, rng);
    hyp.t = Vec::Zero(r);
    for (Index i = 0; i < d; ++i) hyp.target_idx.push_back(i);
    const Mat j = oracle::random_spd(d + s, rng);
    const Mat k = oracle::random_spd(d + s, rng);
    const auto om = inference::build_omega(j, k, hyp, s);
    worst_omega = std::max(worst_omega, (om.omega * k * om.omega.transpose() - Mat::Identity(r, r)).cwiseAbs().maxCoeff());
    const Mat p0 = inference::projection_matrix(j, hyp, s);
    worst_proj = std::max(worst_proj, (p0 * p0 - p0).cwiseAbs().maxCoeff());
  }

  double worst_grad = 0.0, worst_hess = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Family f = trial % 2 ? Family::logistic : Family::gaussian;
    const Index p = 6;
    const auto data = sites_for(f, sparse_beta(p, 0.3), {80}, 950 + trial)[0];
    const Vec beta = oracle::random_matrix(p, 1, rng) * 0.5;
    const Vec g = model::gradient(f, beta, data);
    IndexList all(p);
    for (Index i = 0; i < p; ++i) all[i] = i;
    const Mat hs = model::hessian(f, beta, data, all);
    const double step = 1e-5;
    for (Index i = 0; i < p; ++i) {
      Vec up = beta, dn = beta;
      up(i) += step;
      dn(i) -= step;
      const double fd = (model::loss(f, up, data) - model::loss(f, dn, data)) / (2 * step);
      worst_grad = std::max(worst_grad, std::abs(fd - g(i)) / std::max(1.0, std::abs(g(i))));
      const Vec col = (model::gradient(f, up, data) - model::gradient(f, dn, data)) / (2 * step);
      worst_hess = std::max(worst_hess, (col - hs.col(i)).cwiseAbs().maxCoeff() / std::max(1.0, hs.col(i).cwiseAbs().maxCoeff()));
    }
  }
  return {worst_omega < 1e-8 && worst_proj < 1e-8 && worst_grad < 1e-6 && worst_hess < 1e-5,
          fmt("|OKO'-I| %.1e, |P^2-P| %.1e < 1e-8; gradient FD %.1e < 1e-6, Hessian FD %.1e < 1e-5", worst_omega,
              worst_proj, worst_grad, worst_hess)};
}

Outcome criterion10() {
  const Index p = 50;
  const std::vector<Index> sizes{150, 120, 120, 100, 90};
  const std::uint64_t m = sizes.size();
  bool ok = true;
  std::string detail;
  for (Family f : {Family::gaussian, Family::logistic}) {
    const auto data = sites_for(f, sparse_beta(p, 0.2), sizes, 1000);
    auto inproc = cluster::Cluster::in_process(f, data);
    auto sock = cluster::Cluster::loopback_sockets(f, data);
    const auto ta = solver::run_two_stage(*inproc, h1_hyp(), penalty::Kind::scad);
    const auto tb = solver::run_two_stage(*sock, h1_hyp(), penalty::Kind::scad);
    const auto ra = inference::cst_test(*inproc, ta, h1_hyp());
    const auto rb = inference::cst_test(*sock, tb, h1_hyp());
    const std::uint64_t k = static_cast<std::uint64_t>(ta.stage1_iterations + ta.stage2_iterations);
    const std::uint64_t q = 1 + ta.support.size();
    const bool rounds = ra.comm.rounds == k + 2;
    const bool bytes = ra.comm.bytes_to_sites == (k + 1) * m * 8 * p + m * 8 * q &&
                       ra.comm.bytes_from_sites == (k + 1) * m * 8 * p + m * (2 * 8 * q * q + 8);
    const bool same = ra.statistic == rb.statistic && ra.p_value == rb.p_value && ra.comm.rounds == rb.comm.rounds &&
                      ra.comm.bytes_to_sites == rb.comm.bytes_to_sites;
    ok = ok && rounds && bytes && same;
    detail += fmt("%s K=%llu rounds=%llu bytes_ok=%d socket_identical=%d; ", f == Family::gaussian ? "gaussian" : "logistic",
                  static_cast<unsigned long long>(k), static_cast<unsigned long long>(ra.comm.rounds),
                  static_cast<int>(bytes), static_cast<int>(same));
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"type I error, linear model", criterion1},
      {"power consistency, linear model", criterion2},
      {"logistic size and power", criterion3},
      {"oracle agreement", criterion4},
      {"p-value uniformity", criterion5},
      {"centralized equivalence", criterion6},
      {"power-function oracle", criterion7},
      {"solver oracles", criterion8},
      {"algebraic invariants", criterion9},
      {"communication accounting", criterion10},
  };
  std::set<int> chosen, allowed;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--allow-fail" && i + 1 < argc) allowed.insert(std::atoi(argv[++i]));
    else chosen.insert(std::atoi(argv[i]));
  }

  int failed = 0, allowed_failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!chosen.empty() && !chosen.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool tolerated = !out.pass && allowed.count(id);
    std::printf("[%s] criterion %2d %-34s %s (%.0fs)%s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                out.detail.c_str(), secs, tolerated ? " [allowed failure]" : "");
    std::fflush(stdout);
    if (!out.pass) ++(tolerated ? allowed_failed : failed);
  }
  std::printf("%d criteria failed, %d allowed failures\n", failed + allowed_failed, allowed_failed);
  return failed == 0 ? 0 : 1;
}
