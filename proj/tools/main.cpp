#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "cst/error.hpp"
#include "cst/harness.hpp"
#include "cst/inference.hpp"
#include "cst/solver.hpp"

namespace fs = std::filesystem;
using namespace cst;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::invalid_config:
    case Errc::io_error:
    case Errc::schema_mismatch:
    case Errc::empty_site:
    case Errc::bad_hypothesis:
    case Errc::invalid_arg:
    case Errc::dimension_mismatch:
      return kConfigError;
    default:
      return kNumericalError;
  }
}

model::Family parse_family(const std::string& name) {
  if (name == "gaussian") return model::Family::gaussian;
  if (name == "logistic") return model::Family::logistic;
  fail(Errc::invalid_config, "unknown family '" + name + "'");
}

void progress(const harness::ReplicationRecord& rec) {
  if (!rec.ok) std::cerr << "replication " << rec.rep << " failed: " << rec.error << '\n';
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  bool paper_scale = false;
};

int run_simulate(const SimulateArgs& a) {
  harness::SimConfig cfg = harness::load_config(a.config);
  if (a.paper_scale) cfg = harness::paper_scale(cfg);
  if (a.seed) cfg.seed = *a.seed;
  if (a.reps) cfg.replications = *a.reps;
  harness::validate(cfg);
  const auto results = harness::run_sweep(cfg, progress);
  harness::emit(results, a.out);
  for (const auto& r : results) {
    std::printf("%s: reps=%d failures=%d", r.label.c_str(), r.replications, r.failures);
    for (const auto& [alpha, rate] : r.rejection_rate) std::printf(" rate@%g=%.4f", alpha, rate);
    std::printf(" (%.1fs)\n", r.wall_time);
  }
  return 0;
}

struct TestArgs {
  std::string data_dir;
  std::string family;
  std::string hypothesis;
  std::string variance;
  std::string transport = "inproc";
  std::optional<int> listen;
  std::vector<std::string> connect;
  std::string penalty = "scad";
  std::vector<double> alphas{0.05};
};

int run_test(const TestArgs& a) {
  const model::Family family = parse_family(a.family);
  if (a.transport != "inproc" && a.transport != "socket")
    fail(Errc::invalid_config, "transport must be inproc or socket");

  if (a.listen) {
    // Site role: serve the (pooled) CSVs in data-dir to one master.
    require(*a.listen > 0 && *a.listen < 65536, Errc::invalid_config, "bad listen port");
    auto sites = harness::read_site_csvs(a.data_dir, family);
    auto data = std::make_shared<const model::SiteData>(sites.size() == 1 ? std::move(sites[0]) : cluster::pool(sites));
    cluster::SiteServer server(cluster::SiteWorker(family, data), static_cast<std::uint16_t>(*a.listen), "0.0.0.0");
    std::cerr << "serving " << data->n() << " rows on port " << server.port() << '\n';
    server.serve_one();
    return 0;
  }

  std::unique_ptr<cluster::Cluster> cl;
  inference::LinearHypothesis hyp;
  if (!a.connect.empty()) {
    std::vector<std::string> names;
    auto sites = harness::read_site_csvs(a.data_dir, family, &names);
    hyp = harness::read_hypothesis(a.hypothesis, names);
    cl = cluster::Cluster::connect(family, sites.size() == 1 ? std::move(sites[0]) : cluster::pool(sites), a.connect);
  } else {
    const auto transport = a.transport == "socket" ? cluster::Transport::socket : cluster::Transport::in_process;
    auto loaded = harness::load_sites(a.data_dir, family, a.hypothesis, transport);
    cl = std::move(loaded.cluster);
    hyp = std::move(loaded.hypothesis);
  }

  std::optional<inference::VarianceMode> mode;
  if (a.variance == "pooled") mode = inference::VarianceMode::pooled;
  else if (a.variance == "averaged") mode = inference::VarianceMode::averaged_local;
  else if (!a.variance.empty()) fail(Errc::invalid_config, "variance must be pooled or averaged");

  const penalty::Kind pk = a.penalty == "mcp" ? penalty::Kind::mcp : penalty::Kind::scad;
  const auto ts = solver::run_two_stage(*cl, hyp, pk);
  const auto report = inference::cst_test(*cl, ts, hyp, mode, a.alphas);
  std::cout << inference::to_json(report) << '\n';
  return 0;
}

int run_power_curve(const std::string& config, const std::string& out, bool empirical) {
  harness::SimConfig cfg = harness::load_config(config);
  harness::validate(cfg);
  const auto curve = harness::power_curve(cfg, empirical, progress);
  if (!out.empty()) harness::emit_power_curve(curve, out);
  std::printf("h,theoretical,empirical\n");
  for (const auto& pt : curve) {
    if (pt.empirical) std::printf("%g,%.6f,%.6f\n", pt.h, pt.theoretical, *pt.empirical);
    else std::printf("%g,%.6f,\n", pt.h, pt.theoretical);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed score test for linear hypotheses in sparse GLMs"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo rejection rates for a scenario");
  simulate->add_option("--config", sim.config, "JSON or TOML configuration")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--seed", sim.seed, "override the configured seed");
  simulate->add_option("--reps", sim.reps, "override the number of replications")->check(CLI::PositiveNumber);
  simulate->add_flag("--paper-scale", sim.paper_scale, "m=20, n=200, p=1000, 500 replications");

  TestArgs ta;
  auto* test = app.add_subcommand("test", "Run the test on per-site CSV files");
  test->add_option("--data-dir", ta.data_dir, "directory of per-site CSVs")->required()->check(CLI::ExistingDirectory);
  test->add_option("--family", ta.family, "gaussian or logistic")->required();
  test->add_option("--hypothesis", ta.hypothesis, "hypothesis JSON {C, t, target}");
  test->add_option("--variance", ta.variance, "pooled or averaged (default: auto)");
  test->add_option("--transport", ta.transport, "inproc or socket");
  test->add_option("--listen", ta.listen, "serve data-dir as a single site on this port");
  test->add_option("--connect", ta.connect, "site addresses host:port (master role)")->delimiter(',');
  test->add_option("--penalty", ta.penalty, "scad or mcp");
  test->add_option("--alpha", ta.alphas, "significance levels for the decision")->delimiter(',');

  std::string pc_config, pc_out;
  bool pc_empirical = false;
  auto* pc = app.add_subcommand("power-curve", "Asymptotic power curve, optionally with simulated power");
  pc->add_option("--config", pc_config, "JSON or TOML configuration")->required()->check(CLI::ExistingFile);
  pc->add_option("--out", pc_out, "CSV output file");
  pc->add_flag("--empirical", pc_empirical, "also simulate each h");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*test) {
      if (!ta.listen && ta.hypothesis.empty()) fail(Errc::invalid_config, "--hypothesis is required");
      return run_test(ta);
    }
    return run_power_curve(pc_config, pc_out, pc_empirical);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
}
