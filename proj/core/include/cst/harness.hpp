#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cst/cluster.hpp"
#include "cst/inference.hpp"
#include "cst/model.hpp"
#include "cst/penalty.hpp"
#include "cst/solver.hpp"

namespace cst::harness {

using inference::LinearHypothesis;
using inference::TestReport;
using inference::VarianceMode;

/// H1: beta_1 = 0; H2: (beta_1, beta_2, beta_3) = 0; H3: beta_4 - beta_5 = 0 (1-based).
enum class HypothesisKind { h1_univariate, h2_multivariate, h3_contrast };

std::string_view to_string(HypothesisKind k) noexcept;
HypothesisKind parse_hypothesis(std::string_view name);

struct SimConfig {
  model::Family family = model::Family::gaussian;
  Index n_per_site = 100;
  Index m = 10;
  Index p = 400;
  double rho = 0.5;
  HypothesisKind hypothesis = HypothesisKind::h1_univariate;
  double h = 0.0;
  std::vector<double> h_grid;  // sweep; overrides h when non-empty
  penalty::Kind penalty = penalty::Kind::scad;
  int replications = 200;
  std::vector<double> alphas{0.05};
  std::uint64_t seed = 20240601;
  std::optional<VarianceMode> variance_mode;  // nullopt: averaged when every site is large enough
  bool run_oracle = true;
  int threads = 0;  // 0: hardware concurrency
  solver::StageConfig stage;
  std::string label;
};

void validate(const SimConfig& cfg);
/// m = 20, n = 200, p = 1000, 500 replications.
SimConfig paper_scale(SimConfig cfg);
/// Parses JSON, or TOML when `toml` is set (flat key = value subset).
SimConfig parse_config(const std::string& text, bool toml);
SimConfig load_config(const std::filesystem::path& path);
std::string scenario_label(const SimConfig& cfg);

/// Counter-based seed for (replication, site); independent of scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t rep, std::uint64_t site);

struct Scene {
  std::unique_ptr<cluster::Cluster> cluster;
  LinearHypothesis hypothesis;
  Vec beta_star;
  IndexList true_support;      // nuisance coordinates with non-zero beta*
  IndexList coordinate_order;  // tested coordinates first, then the rest
  Vec deviation;               // C theta* - t
};

/// Hypothesis (C, t, target) and beta* for a configuration.
struct Design {
  LinearHypothesis hypothesis;
  Vec beta_star;
  IndexList true_support;
  Vec deviation;
};

Design make_design(const SimConfig& cfg, double h);

Scene make_scene(const SimConfig& cfg, int rep, const model::CovarianceFactor* sigma = nullptr,
                 cluster::Transport transport = cluster::Transport::in_process);

struct ReplicationRecord {
  int rep = 0;
  bool ok = false;
  std::string error;
  TestReport cst;
  std::optional<TestReport> ocst;
  int outer_iterations = 0;
  bool converged = true;
};

struct McResult {
  std::string label;
  double h = 0.0;
  std::vector<double> alphas;
  std::map<double, double> rejection_rate;
  std::map<double, double> ocst_rejection_rate;  // empty when the oracle was not run
  std::vector<double> p_values;                  // successful replications, in replication order
  std::vector<double> ocst_p_values;
  std::vector<double> statistics;
  std::vector<double> ocst_statistics;
  int replications = 0;  // successful replications
  int failures = 0;
  int oracle_agreements = 0;  // |T - T_ora| <= 1e-8 max(1, T)
  double mean_support_size = 0.0;
  double mean_rounds = 0.0;
  double wall_time = 0.0;  // seconds
};

/// #{p < alpha} / R.
double rejection_rate(const std::vector<double>& p_values, double alpha);

/// Runs every replication of one scenario (cfg.h; h_grid is ignored here).
McResult run_monte_carlo(const SimConfig& cfg,
                         const std::function<void(const ReplicationRecord&)>& on_replication = {});

/// One McResult per h in cfg.h_grid (or cfg.h alone).
std::vector<McResult> run_sweep(const SimConfig& cfg,
                                const std::function<void(const ReplicationRecord&)>& on_replication = {});

/// Writes rejections.csv, pvalues.csv and (optionally) qq_<label>.csv under `dir`.
void emit(const std::vector<McResult>& results, const std::filesystem::path& dir, bool qq_files = true);

/// Population V at the null design: J0 = K0 on target + true support.
Mat population_v(const SimConfig& cfg, std::uint64_t mc_draws = 200000);

struct PowerPoint {
  double h = 0.0;
  double theoretical = 0.0;
  std::optional<double> empirical;
};

std::vector<PowerPoint> power_curve(const SimConfig& cfg, bool with_empirical,
                                    const std::function<void(const ReplicationRecord&)>& on_replication = {});
void emit_power_curve(const std::vector<PowerPoint>& curve, const std::filesystem::path& file);

struct LoadedSites {
  std::unique_ptr<cluster::Cluster> cluster;
  LinearHypothesis hypothesis;
  std::vector<std::string> feature_names;
  std::vector<std::filesystem::path> files;  // master first
};

/// Per-site CSVs (header row, last column = response). The largest file becomes the master.
std::vector<model::SiteData> read_site_csvs(const std::filesystem::path& dir, model::Family family,
                                            std::vector<std::string>* feature_names = nullptr,
                                            std::vector<std::filesystem::path>* files = nullptr);

LinearHypothesis read_hypothesis(const std::filesystem::path& file, const std::vector<std::string>& feature_names);

LoadedSites load_sites(const std::filesystem::path& dir, model::Family family,
                       const std::filesystem::path& hypothesis_file,
                       cluster::Transport transport = cluster::Transport::in_process);

}  // namespace cst::harness
