#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "cst/model.hpp"
#include "cst/types.hpp"

namespace cst::cluster {

using model::Family;
using model::SiteData;

/// Payload accounting: parameter/gradient/variance bytes only, frame headers excluded.
struct CommStats {
  std::uint64_t rounds = 0;
  std::uint64_t bytes_to_sites = 0;
  std::uint64_t bytes_from_sites = 0;

  friend bool operator==(const CommStats&, const CommStats&) = default;
};

/// Local variance estimates returned by one site: Hessian and score covariance on idx.
struct VarianceBlock {
  int site_id = 0;
  Index n = 0;
  Mat hessian;
  Mat score_cov;
};

/// Everything a site does with its own data. Lives on the site side of the boundary.
class SiteWorker {
 public:
  SiteWorker(Family family, std::shared_ptr<const SiteData> data);

  Index n() const noexcept { return data_->n(); }
  Index p() const noexcept { return data_->p(); }
  int site_id() const noexcept { return data_->site_id; }

  /// Stores beta as the current parameter and returns the local gradient.
  Vec on_params(const Vec& beta);
  /// Variance estimates at the last broadcast parameter.
  VarianceBlock on_variance_request(const IndexList& idx) const;

 private:
  Family family_;
  std::shared_ptr<const SiteData> data_;
  Vec beta_;
};

/// Master-side handle to one site. Requests are split into send/receive so that
/// remote sites compute concurrently within a round.
class SiteChannel {
 public:
  virtual ~SiteChannel() = default;
  virtual int site_id() const = 0;
  virtual Index n() const = 0;
  virtual void send_params(const Vec& beta) = 0;
  virtual Vec receive_gradient() = 0;
  virtual void send_variance_request(const IndexList& idx) = 0;
  virtual VarianceBlock receive_variance() = 0;
  virtual void shutdown() {}
};

class InProcessChannel final : public SiteChannel {
 public:
  explicit InProcessChannel(SiteWorker worker) : worker_(std::move(worker)) {}
  int site_id() const override { return worker_.site_id(); }
  Index n() const override { return worker_.n(); }
  void send_params(const Vec& beta) override;
  Vec receive_gradient() override;
  void send_variance_request(const IndexList& idx) override;
  VarianceBlock receive_variance() override;

 private:
  SiteWorker worker_;
  Vec pending_gradient_;
  VarianceBlock pending_variance_;
};

/// TCP client end; one connection per site, opened by the master.
class SocketChannel final : public SiteChannel {
 public:
  SocketChannel(const std::string& host, std::uint16_t port, int site_id);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  int site_id() const override { return site_id_; }
  Index n() const override { return n_; }
  void send_params(const Vec& beta) override;
  Vec receive_gradient() override;
  void send_variance_request(const IndexList& idx) override;
  VarianceBlock receive_variance() override;
  void shutdown() override;

 private:
  int fd_ = -1;
  int site_id_ = 0;
  Index n_ = 0;
  Index pending_q_ = 0;
};

/// TCP server end: accepts one master connection and answers until Shutdown.
class SiteServer {
 public:
  /// Binds `host:port`; port 0 picks an ephemeral port.
  SiteServer(SiteWorker worker, std::uint16_t port = 0, const std::string& host = "127.0.0.1");
  ~SiteServer();
  SiteServer(const SiteServer&) = delete;
  SiteServer& operator=(const SiteServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Blocks until the connected master sends Shutdown or disconnects.
  void serve_one();

 private:
  SiteWorker worker_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

enum class Transport { in_process, socket };

/// The master's view of the collaboration. Solver and inference code only see this.
class MasterView {
 public:
  virtual ~MasterView() = default;

  virtual Family family() const = 0;
  virtual const SiteData& master_data() const = 0;
  virtual Index total_n() const = 0;
  virtual Index num_sites() const = 0;
  virtual Index p() const = 0;
  virtual const CommStats& stats() const = 0;
  /// n_k for every site, master first.
  virtual std::vector<Index> site_sizes() const = 0;

  /// One communication round: (1/N) sum_k n_k grad L_k(beta).
  virtual Vec global_gradient(const Vec& beta) = 0;
  /// One round: local Hessian and score covariance on idx from every site with n_k >= min_site_n.
  virtual std::vector<VarianceBlock> collect_variance(const Vec& beta_hat, const IndexList& idx,
                                                      Index min_site_n) = 0;

  Vec master_gradient(const Vec& beta) const;
  Mat master_hessian(const Vec& beta, const IndexList& idx) const;
};

class Cluster final : public MasterView {
 public:
  /// Site 0 (after sorting by site_id) is the master and is always evaluated in-process.
  Cluster(Family family, std::shared_ptr<const SiteData> master,
          std::vector<std::unique_ptr<SiteChannel>> remote, Transport transport);
  ~Cluster() override;
  Cluster(Cluster&&) = delete;

  static std::unique_ptr<Cluster> in_process(Family family, std::vector<SiteData> sites);
  /// Serves every non-master site from a loopback TCP server thread.
  static std::unique_ptr<Cluster> loopback_sockets(Family family, std::vector<SiteData> sites);
  /// Master with local data; remote sites at "host:port" addresses.
  static std::unique_ptr<Cluster> connect(Family family, SiteData master,
                                          const std::vector<std::string>& addresses);

  Family family() const override { return family_; }
  const SiteData& master_data() const override { return *master_; }
  Index total_n() const override { return total_n_; }
  Index num_sites() const override { return static_cast<Index>(channels_.size()); }
  Index p() const override { return master_->p(); }
  const CommStats& stats() const override { return stats_; }
  Transport transport() const noexcept { return transport_; }
  std::vector<Index> site_sizes() const override;

  Vec global_gradient(const Vec& beta) override;
  std::vector<VarianceBlock> collect_variance(const Vec& beta_hat, const IndexList& idx,
                                              Index min_site_n) override;

  void reset_stats() { stats_ = {}; }

 private:
  Family family_;
  std::shared_ptr<const SiteData> master_;
  std::vector<std::unique_ptr<SiteChannel>> channels_;  // sorted by site_id, master first
  std::vector<std::thread> servers_;
  Transport transport_;
  Index total_n_ = 0;
  CommStats stats_;
  Vec last_broadcast_;
};

/// Single-machine computation on pooled data; no communication, no accounting.
class PooledView final : public MasterView {
 public:
  PooledView(Family family, SiteData pooled);

  Family family() const override { return family_; }
  const SiteData& master_data() const override { return data_; }
  Index total_n() const override { return data_.n(); }
  Index num_sites() const override { return 1; }
  Index p() const override { return data_.p(); }
  const CommStats& stats() const override { return stats_; }
  std::vector<Index> site_sizes() const override { return {data_.n()}; }

  Vec global_gradient(const Vec& beta) override;
  std::vector<VarianceBlock> collect_variance(const Vec& beta_hat, const IndexList& idx,
                                              Index min_site_n) override;

 private:
  Family family_;
  SiteData data_;
  CommStats stats_;
};

/// Row-wise concatenation of site data (site_id of the result is 0).
SiteData pool(const std::vector<SiteData>& sites);

}  // namespace cst::cluster
