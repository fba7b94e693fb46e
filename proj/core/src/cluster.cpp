#include "cst/cluster.hpp"

#include <algorithm>
#include <string>

#include "cst/error.hpp"

namespace cst::cluster {

SiteWorker::SiteWorker(Family family, std::shared_ptr<const SiteData> data)
    : family_(family), data_(std::move(data)) {
  require(data_ != nullptr, Errc::invalid_arg, "site worker needs data");
  model::validate(family_, *data_);
}

Vec SiteWorker::on_params(const Vec& beta) {
  beta_ = beta;
  return model::gradient(family_, beta_, *data_);
}

VarianceBlock SiteWorker::on_variance_request(const IndexList& idx) const {
  require(beta_.size() == data_->p(), Errc::protocol_error, "variance requested before any parameter broadcast");
  VarianceBlock out;
  out.site_id = data_->site_id;
  out.n = data_->n();
  out.hessian = model::hessian(family_, beta_, *data_, idx);
  const Mat scores = model::per_sample_scores(family_, beta_, *data_, idx);
  Mat k = scores.transpose() * scores / static_cast<double>(out.n);
  out.score_cov = 0.5 * (k + k.transpose());
  return out;
}

void InProcessChannel::send_params(const Vec& beta) { pending_gradient_ = worker_.on_params(beta); }

Vec InProcessChannel::receive_gradient() { return std::move(pending_gradient_); }

void InProcessChannel::send_variance_request(const IndexList& idx) {
  pending_variance_ = worker_.on_variance_request(idx);
}

VarianceBlock InProcessChannel::receive_variance() { return std::move(pending_variance_); }

Vec MasterView::master_gradient(const Vec& beta) const {
  return model::gradient(family(), beta, master_data());
}

Mat MasterView::master_hessian(const Vec& beta, const IndexList& idx) const {
  return model::hessian(family(), beta, master_data(), idx);
}

Cluster::Cluster(Family family, std::shared_ptr<const SiteData> master,
                 std::vector<std::unique_ptr<SiteChannel>> remote, Transport transport)
    : family_(family), master_(std::move(master)), transport_(transport) {
  require(master_ != nullptr, Errc::invalid_arg, "cluster needs a master site");
  std::sort(remote.begin(), remote.end(),
            [](const auto& a, const auto& b) { return a->site_id() < b->site_id(); });
  channels_.push_back(std::make_unique<InProcessChannel>(SiteWorker(family_, master_)));
  for (auto& ch : remote) {
    require(ch->site_id() != master_->site_id, Errc::invalid_arg, "duplicate site id");
    channels_.push_back(std::move(ch));
  }
  for (const auto& ch : channels_) total_n_ += ch->n();
}

Cluster::~Cluster() {
  for (auto& ch : channels_) {
    try {
      ch->shutdown();
    } catch (...) {
    }
  }
  channels_.clear();
  for (auto& t : servers_) {
    if (t.joinable()) t.join();
  }
}

std::unique_ptr<Cluster> Cluster::in_process(Family family, std::vector<SiteData> sites) {
  require(!sites.empty(), Errc::invalid_arg, "cluster needs at least one site");
  for (std::size_t k = 0; k < sites.size(); ++k) sites[k].site_id = static_cast<int>(k);
  auto master = std::make_shared<const SiteData>(std::move(sites[0]));
  std::vector<std::unique_ptr<SiteChannel>> remote;
  for (std::size_t k = 1; k < sites.size(); ++k) {
    auto data = std::make_shared<const SiteData>(std::move(sites[k]));
    remote.push_back(std::make_unique<InProcessChannel>(SiteWorker(family, data)));
  }
  return std::make_unique<Cluster>(family, std::move(master), std::move(remote), Transport::in_process);
}

std::unique_ptr<Cluster> Cluster::loopback_sockets(Family family, std::vector<SiteData> sites) {
  require(!sites.empty(), Errc::invalid_arg, "cluster needs at least one site");
  for (std::size_t k = 0; k < sites.size(); ++k) sites[k].site_id = static_cast<int>(k);
  auto master = std::make_shared<const SiteData>(std::move(sites[0]));

  std::vector<std::thread> threads;
  std::vector<std::unique_ptr<SiteChannel>> remote;
  for (std::size_t k = 1; k < sites.size(); ++k) {
    auto data = std::make_shared<const SiteData>(std::move(sites[k]));
    auto server = std::make_shared<SiteServer>(SiteWorker(family, data));
    const std::uint16_t port = server->port();
    threads.emplace_back([server] {
      try {
        server->serve_one();
      } catch (const std::exception&) {
      }
    });
    remote.push_back(std::make_unique<SocketChannel>("127.0.0.1", port, static_cast<int>(k)));
  }
  auto cluster = std::make_unique<Cluster>(family, std::move(master), std::move(remote), Transport::socket);
  cluster->servers_ = std::move(threads);
  return cluster;
}

std::unique_ptr<Cluster> Cluster::connect(Family family, SiteData master,
                                          const std::vector<std::string>& addresses) {
  master.site_id = 0;
  std::vector<std::unique_ptr<SiteChannel>> remote;
  int id = 1;
  for (const auto& addr : addresses) {
    const auto colon = addr.rfind(':');
    require(colon != std::string::npos, Errc::invalid_config, "address '" + addr + "' is not host:port");
    const int port = std::stoi(addr.substr(colon + 1));
    require(port > 0 && port < 65536, Errc::invalid_config, "bad port in '" + addr + "'");
    remote.push_back(std::make_unique<SocketChannel>(addr.substr(0, colon), static_cast<std::uint16_t>(port), id++));
  }
  return std::make_unique<Cluster>(family, std::make_shared<const SiteData>(std::move(master)),
                                   std::move(remote), Transport::socket);
}

std::vector<Index> Cluster::site_sizes() const {
  std::vector<Index> out;
  for (const auto& ch : channels_) out.push_back(ch->n());
  return out;
}

Vec Cluster::global_gradient(const Vec& beta) {
  const Index p = master_->p();
  require(beta.size() == p, Errc::dimension_mismatch, "parameter length differs from p");
  require(beta.allFinite(), Errc::non_finite, "parameter has non-finite entries");
  for (auto& ch : channels_) ch->send_params(beta);

  Vec g = Vec::Zero(p);
  const double total = static_cast<double>(total_n_);
  for (auto& ch : channels_) {
    const Vec gk = ch->receive_gradient();
    require(gk.size() == p, Errc::dimension_mismatch, "site returned a gradient of the wrong length");
    g += (static_cast<double>(ch->n()) / total) * gk;
  }

  const auto m = static_cast<std::uint64_t>(channels_.size());
  stats_.rounds += 1;
  stats_.bytes_to_sites += m * 8 * static_cast<std::uint64_t>(p);
  stats_.bytes_from_sites += m * 8 * static_cast<std::uint64_t>(p);
  last_broadcast_ = beta;
  return g;
}

std::vector<VarianceBlock> Cluster::collect_variance(const Vec& beta_hat, const IndexList& idx,
                                                     Index min_site_n) {
  const bool current = last_broadcast_.size() == beta_hat.size() &&
                       std::equal(beta_hat.begin(), beta_hat.end(), last_broadcast_.begin());
  if (!current) global_gradient(beta_hat);

  std::vector<SiteChannel*> eligible;
  for (auto& ch : channels_) {
    if (ch->n() >= min_site_n) eligible.push_back(ch.get());
  }
  require(!eligible.empty(), Errc::no_eligible_sites,
          "no site has at least " + std::to_string(min_site_n) + " observations");
  for (auto* ch : eligible) ch->send_variance_request(idx);

  std::vector<VarianceBlock> out;
  const auto q = static_cast<std::uint64_t>(idx.size());
  for (auto* ch : eligible) {
    out.push_back(ch->receive_variance());
    out.back().site_id = ch->site_id();
    stats_.bytes_to_sites += 8 * q;
    stats_.bytes_from_sites += 2 * 8 * q * q + 8;
  }
  stats_.rounds += 1;
  return out;
}

PooledView::PooledView(Family family, SiteData pooled) : family_(family), data_(std::move(pooled)) {
  model::validate(family_, data_);
}

Vec PooledView::global_gradient(const Vec& beta) { return model::gradient(family_, beta, data_); }

std::vector<VarianceBlock> PooledView::collect_variance(const Vec& beta_hat, const IndexList& idx,
                                                        Index min_site_n) {
  require(data_.n() >= min_site_n, Errc::no_eligible_sites, "pooled sample below minimum size");
  VarianceBlock block;
  block.n = data_.n();
  block.hessian = model::hessian(family_, beta_hat, data_, idx);
  const Mat scores = model::per_sample_scores(family_, beta_hat, data_, idx);
  Mat k = scores.transpose() * scores / static_cast<double>(block.n);
  block.score_cov = 0.5 * (k + k.transpose());
  return {std::move(block)};
}

SiteData pool(const std::vector<SiteData>& sites) {
  require(!sites.empty(), Errc::invalid_arg, "nothing to pool");
  Index rows = 0;
  for (const auto& s : sites) {
    require(s.p() == sites[0].p(), Errc::dimension_mismatch, "sites disagree on p");
    rows += s.n();
  }
  SiteData out;
  out.x.resize(rows, sites[0].p());
  out.y.resize(rows);
  Index at = 0;
  for (const auto& s : sites) {
    out.x.middleRows(at, s.n()) = s.x;
    out.y.segment(at, s.n()) = s.y;
    at += s.n();
  }
  return out;
}

}  // namespace cst::cluster
