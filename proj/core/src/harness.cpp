#include "cst/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <random>
#include <thread>

#include "cst/error.hpp"

namespace cst::harness {

std::string_view to_string(HypothesisKind k) noexcept {
  switch (k) {
    case HypothesisKind::h1_univariate: return "H1_univariate";
    case HypothesisKind::h2_multivariate: return "H2_multivariate";
    case HypothesisKind::h3_contrast: return "H3_contrast";
  }
  return "unknown";
}

HypothesisKind parse_hypothesis(std::string_view name) {
  if (name == "H1_univariate" || name == "H1") return HypothesisKind::h1_univariate;
  if (name == "H2_multivariate" || name == "H2") return HypothesisKind::h2_multivariate;
  if (name == "H3_contrast" || name == "H3") return HypothesisKind::h3_contrast;
  fail(Errc::invalid_config, "unknown hypothesis '" + std::string(name) + "'");
}

namespace {

Index target_dim(HypothesisKind k) {
  switch (k) {
    case HypothesisKind::h1_univariate: return 1;
    case HypothesisKind::h2_multivariate: return 3;
    case HypothesisKind::h3_contrast: return 2;
  }
  return 1;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void validate(const SimConfig& cfg) {
  require(cfg.replications >= 1, Errc::invalid_config, "replications must be >= 1");
  require(cfg.n_per_site >= 1 && cfg.m >= 1, Errc::invalid_config, "site sizes must be positive");
  require(cfg.p >= 5 && cfg.p > target_dim(cfg.hypothesis), Errc::invalid_config,
          "p must be at least 5 and exceed the tested dimension");
  require(cfg.m * cfg.n_per_site >= 3, Errc::invalid_config, "total sample size must be >= 3");
  require(std::abs(cfg.rho) < 1.0, Errc::invalid_config, "rho must lie in (-1, 1)");
  require(std::isfinite(cfg.h), Errc::invalid_config, "h must be finite");
  for (double h : cfg.h_grid) require(std::isfinite(h), Errc::invalid_config, "h_grid must be finite");
  require(!cfg.alphas.empty(), Errc::invalid_config, "alphas must not be empty");
  for (double a : cfg.alphas) require(a > 0.0 && a < 1.0, Errc::invalid_config, "alpha must lie in (0, 1)");
  require(cfg.threads >= 0, Errc::invalid_config, "threads must be >= 0");
  try {
    solver::validate(cfg.stage);
  } catch (const Error& e) {
    fail(Errc::invalid_config, e.what());
  }
}

SimConfig paper_scale(SimConfig cfg) {
  cfg.m = 20;
  cfg.n_per_site = 200;
  cfg.p = 1000;
  cfg.replications = 500;
  return cfg;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t rep, std::uint64_t site) {
  return seed ^ splitmix64(splitmix64(rep) ^ (site + 0x632BE59BD9B4E019ULL));
}

Design make_design(const SimConfig& cfg, double h) {
  Design d;
  d.beta_star = Vec::Zero(cfg.p);
  d.beta_star(3) = 1.0;
  d.beta_star(4) = 1.0;
  auto& hyp = d.hypothesis;
  switch (cfg.hypothesis) {
    case HypothesisKind::h1_univariate:
      d.beta_star(0) = h;
      hyp.c = Mat::Ones(1, 1);
      hyp.t = Vec::Zero(1);
      hyp.target_idx = {0};
      d.true_support = {3, 4};
      break;
    case HypothesisKind::h2_multivariate:
      d.beta_star(0) = h;
      hyp.c = Mat::Identity(3, 3);
      hyp.t = Vec::Zero(3);
      hyp.target_idx = {0, 1, 2};
      d.true_support = {3, 4};
      break;
    case HypothesisKind::h3_contrast:
      d.beta_star(3) = 1.0 + h;
      hyp.c = Mat(1, 2);
      hyp.c << 1.0, -1.0;
      hyp.t = Vec::Zero(1);
      hyp.target_idx = {3, 4};
      break;
  }
  d.deviation = hyp.c * d.beta_star(hyp.target_idx) - hyp.t;
  return d;
}

Scene make_scene(const SimConfig& cfg, int rep, const model::CovarianceFactor* sigma,
                 cluster::Transport transport) {
  validate(cfg);
  std::optional<model::CovarianceFactor> own;
  if (sigma == nullptr) {
    own.emplace(model::Toeplitz{cfg.p, cfg.rho});
    sigma = &*own;
  }
  require(sigma->p() == cfg.p, Errc::invalid_config, "covariance dimension does not match p");

  Design design = make_design(cfg, cfg.h);
  std::vector<model::SiteData> sites;
  sites.reserve(static_cast<std::size_t>(cfg.m));
  for (Index k = 0; k < cfg.m; ++k) {
    sites.push_back(model::simulate(cfg.family, design.beta_star, cfg.n_per_site, *sigma,
                                    derive_seed(cfg.seed, static_cast<std::uint64_t>(rep),
                                                static_cast<std::uint64_t>(k)),
                                    static_cast<int>(k)));
  }

  Scene scene;
  scene.cluster = transport == cluster::Transport::socket
                      ? cluster::Cluster::loopback_sockets(cfg.family, std::move(sites))
                      : cluster::Cluster::in_process(cfg.family, std::move(sites));
  scene.hypothesis = std::move(design.hypothesis);
  scene.beta_star = std::move(design.beta_star);
  scene.true_support = std::move(design.true_support);
  scene.deviation = std::move(design.deviation);
  scene.coordinate_order = scene.hypothesis.target_idx;
  for (Index j : model::complement(scene.hypothesis.target_idx, cfg.p)) scene.coordinate_order.push_back(j);
  return scene;
}

double rejection_rate(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) return 0.0;
  const auto hits = std::count_if(p_values.begin(), p_values.end(), [alpha](double pv) { return pv < alpha; });
  return static_cast<double>(hits) / static_cast<double>(p_values.size());
}

namespace {

ReplicationRecord run_replication(const SimConfig& cfg, int rep, const model::CovarianceFactor& sigma) {
  ReplicationRecord rec;
  rec.rep = rep;
  try {
    Scene scene = make_scene(cfg, rep, &sigma);
    const auto two_stage = solver::run_two_stage(*scene.cluster, scene.hypothesis, cfg.penalty, cfg.stage);
    rec.outer_iterations = two_stage.stage1_iterations + two_stage.stage2_iterations;
    rec.converged = two_stage.converged;
    rec.cst = inference::cst_test(*scene.cluster, two_stage, scene.hypothesis, cfg.variance_mode, cfg.alphas);
    if (cfg.run_oracle) {
      rec.ocst = inference::ocst_test(*scene.cluster, two_stage, scene.hypothesis, scene.true_support,
                                      cfg.variance_mode, cfg.alphas, cfg.stage);
    }
    rec.ok = std::isfinite(rec.cst.statistic) && std::isfinite(rec.cst.p_value);
    if (!rec.ok) rec.error = "non-finite statistic";
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

std::string format_h(double h) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", h);
  return buf;
}

}  // namespace

std::string scenario_label(const SimConfig& cfg) {
  if (!cfg.label.empty()) return cfg.label;
  return std::string(model::to_string(cfg.family)) + "_" + std::string(to_string(cfg.hypothesis)) + "_" +
         std::string(penalty::to_string(cfg.penalty));
}

McResult run_monte_carlo(const SimConfig& cfg, const std::function<void(const ReplicationRecord&)>& on_replication) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  const model::CovarianceFactor sigma(model::Toeplitz{cfg.p, cfg.rho});

  const int reps = cfg.replications;
  std::vector<ReplicationRecord> records(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (int rep = next.fetch_add(1); rep < reps; rep = next.fetch_add(1)) {
      records[static_cast<std::size_t>(rep)] = run_replication(cfg, rep, sigma);
      if (on_replication) {
        std::lock_guard lock(callback_mutex);
        on_replication(records[static_cast<std::size_t>(rep)]);
      }
    }
  };
  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, reps);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  McResult res;
  res.label = scenario_label(cfg) + "_h" + format_h(cfg.h);
  res.h = cfg.h;
  res.alphas = cfg.alphas;
  double support_sum = 0.0;
  double rounds_sum = 0.0;
  std::string first_error;
  for (const auto& rec : records) {
    if (!rec.ok) {
      ++res.failures;
      if (first_error.empty()) first_error = rec.error;
      continue;
    }
    ++res.replications;
    res.p_values.push_back(rec.cst.p_value);
    res.statistics.push_back(rec.cst.statistic);
    support_sum += static_cast<double>(rec.cst.support.size());
    rounds_sum += static_cast<double>(rec.cst.comm.rounds);
    if (rec.ocst) {
      res.ocst_p_values.push_back(rec.ocst->p_value);
      res.ocst_statistics.push_back(rec.ocst->statistic);
      const double t = rec.cst.statistic;
      if (std::abs(t - rec.ocst->statistic) <= 1e-8 * std::max(1.0, std::abs(t))) ++res.oracle_agreements;
    }
  }
  if (res.failures > 0.05 * reps) {
    fail(Errc::diverged, std::to_string(res.failures) + " of " + std::to_string(reps) +
                             " replications failed; first: " + first_error);
  }
  for (double a : cfg.alphas) {
    res.rejection_rate[a] = rejection_rate(res.p_values, a);
    if (cfg.run_oracle) res.ocst_rejection_rate[a] = rejection_rate(res.ocst_p_values, a);
  }
  if (res.replications > 0) {
    res.mean_support_size = support_sum / res.replications;
    res.mean_rounds = rounds_sum / res.replications;
  }
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<McResult> run_sweep(const SimConfig& cfg,
                                const std::function<void(const ReplicationRecord&)>& on_replication) {
  std::vector<double> grid = cfg.h_grid.empty() ? std::vector<double>{cfg.h} : cfg.h_grid;
  std::vector<McResult> out;
  for (double h : grid) {
    SimConfig one = cfg;
    one.h = h;
    one.h_grid.clear();
    out.push_back(run_monte_carlo(one, on_replication));
  }
  return out;
}

Mat population_v(const SimConfig& cfg, std::uint64_t mc_draws) {
  validate(cfg);
  const Design design = make_design(cfg, 0.0);
  IndexList b = design.hypothesis.target_idx;
  b.insert(b.end(), design.true_support.begin(), design.true_support.end());
  const auto q = static_cast<Index>(b.size());
  const auto s_hat = static_cast<Index>(design.true_support.size());

  Mat j0(q, q);
  if (cfg.family == model::Family::gaussian) {
    for (Index i = 0; i < q; ++i)
      for (Index k = 0; k < q; ++k) j0(i, k) = std::pow(cfg.rho, std::abs(static_cast<double>(b[i] - b[k])));
  } else {
    // Coordinates that matter: b and the support of beta*.
    IndexList u = b;
    for (Index j = 0; j < cfg.p; ++j)
      if (design.beta_star(j) != 0.0) u.push_back(j);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    const auto nu = static_cast<Index>(u.size());
    Mat sig(nu, nu);
    for (Index i = 0; i < nu; ++i)
      for (Index k = 0; k < nu; ++k) sig(i, k) = std::pow(cfg.rho, std::abs(static_cast<double>(u[i] - u[k])));
    const Mat lower = sig.llt().matrixL();
    const Vec beta_u = design.beta_star(u);
    IndexList pos(b.size());
    for (std::size_t i = 0; i < b.size(); ++i)
      pos[i] = std::find(u.begin(), u.end(), b[i]) - u.begin();

    std::mt19937_64 rng(derive_seed(cfg.seed, ~0ULL, ~0ULL));
    std::normal_distribution<double> normal;
    j0.setZero();
    Vec z(nu);
    for (std::uint64_t it = 0; it < mc_draws; ++it) {
      for (Index i = 0; i < nu; ++i) z(i) = normal(rng);
      const Vec x = lower * z;
      const double w = model::variance(cfg.family, x.dot(beta_u));
      const Vec xb = x(pos);
      j0.noalias() += w * xb * xb.transpose();
    }
    j0 /= static_cast<double>(mc_draws);
  }
  return inference::build_omega(j0, j0, design.hypothesis, s_hat).v;
}

std::vector<PowerPoint> power_curve(const SimConfig& cfg, bool with_empirical,
                                    const std::function<void(const ReplicationRecord&)>& on_replication) {
  validate(cfg);
  const Mat v = population_v(cfg);
  const std::vector<double> grid = cfg.h_grid.empty() ? std::vector<double>{cfg.h} : cfg.h_grid;
  const double alpha = cfg.alphas.front();
  std::vector<PowerPoint> out;
  for (double h : grid) {
    const Design design = make_design(cfg, h);
    PowerPoint pt;
    pt.h = h;
    pt.theoretical = inference::asymptotic_power(design.hypothesis, v, design.deviation, cfg.m * cfg.n_per_site, alpha);
    if (with_empirical) {
      SimConfig one = cfg;
      one.h = h;
      one.h_grid.clear();
      pt.empirical = run_monte_carlo(one, on_replication).rejection_rate.at(alpha);
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace cst::harness
