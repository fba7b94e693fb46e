#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cst/error.hpp"
#include "cst/harness.hpp"

namespace cst::harness {

namespace fs = std::filesystem;

namespace {

// Shortest representation that parses back to the same double.
std::string num(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, res.ptr};
}

std::ofstream open_out(const fs::path& file) {
  std::ofstream out(file);
  require(static_cast<bool>(out), Errc::io_error, "cannot write " + file.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& file) {
  out.close();
  require(!out.fail(), Errc::io_error, "error writing " + file.string());
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  s = s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + file.string());
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      require(table.header.size() >= 2, Errc::schema_mismatch,
              file.string() + ": need at least one covariate and a response");
      continue;
    }
    require(cells.size() == table.header.size(), Errc::schema_mismatch,
            file.string() + ":" + std::to_string(line_no) + ": wrong number of fields");
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto& c = cells[j];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), row[j]);
      require(res.ec == std::errc() && res.ptr == c.data() + c.size(), Errc::schema_mismatch,
              file.string() + ":" + std::to_string(line_no) + ": not a number '" + c + "'");
    }
    table.rows.push_back(std::move(row));
  }
  require(!table.header.empty() && !table.rows.empty(), Errc::empty_site, file.string() + " has no observations");
  return table;
}

}  // namespace

void emit(const std::vector<McResult>& results, const fs::path& dir, bool qq_files) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io_error, "cannot create " + dir.string() + ": " + ec.message());

  {
    const auto file = dir / "rejections.csv";
    auto out = open_out(file);
    out << "scenario,h,alpha,cst_rate,ocst_rate,reps\n";
    for (const auto& r : results) {
      for (double a : r.alphas) {
        out << r.label << ',' << num(r.h) << ',' << num(a) << ',' << num(r.rejection_rate.at(a)) << ',';
        if (auto it = r.ocst_rejection_rate.find(a); it != r.ocst_rejection_rate.end()) out << num(it->second);
        out << ',' << r.replications << '\n';
      }
    }
    close_out(out, file);
  }
  {
    const auto file = dir / "pvalues.csv";
    auto out = open_out(file);
    std::size_t rows = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      out << (i ? "," : "") << results[i].label;
      rows = std::max(rows, results[i].p_values.size());
    }
    out << '\n';
    for (std::size_t k = 0; k < rows; ++k) {
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (i) out << ',';
        if (k < results[i].p_values.size()) out << num(results[i].p_values[k]);
      }
      out << '\n';
    }
    close_out(out, file);
  }
  if (!qq_files) return;
  for (const auto& r : results) {
    const auto file = dir / ("qq_" + r.label + ".csv");
    auto out = open_out(file);
    auto sorted = r.p_values;
    std::sort(sorted.begin(), sorted.end());
    auto oracle = r.ocst_p_values;
    std::sort(oracle.begin(), oracle.end());
    const bool with_oracle = oracle.size() == sorted.size() && !oracle.empty();
    out << "rank,uniform_quantile,cst_p" << (with_oracle ? ",ocst_p" : "") << '\n';
    const double n = static_cast<double>(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      out << k + 1 << ',' << num((static_cast<double>(k) + 0.5) / n) << ',' << num(sorted[k]);
      if (with_oracle) out << ',' << num(oracle[k]);
      out << '\n';
    }
    close_out(out, file);
  }
}

void emit_power_curve(const std::vector<PowerPoint>& curve, const fs::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    require(!ec, Errc::io_error, "cannot create " + file.parent_path().string());
  }
  auto out = open_out(file);
  out << "h,theoretical,empirical\n";
  for (const auto& pt : curve) {
    out << num(pt.h) << ',' << num(pt.theoretical) << ',';
    if (pt.empirical) out << num(*pt.empirical);
    out << '\n';
  }
  close_out(out, file);
}

std::vector<model::SiteData> read_site_csvs(const fs::path& dir, model::Family family,
                                            std::vector<std::string>* feature_names,
                                            std::vector<fs::path>* files) {
  require(fs::is_directory(dir), Errc::io_error, dir.string() + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  require(!paths.empty(), Errc::io_error, "no .csv files in " + dir.string());

  std::vector<CsvTable> tables;
  for (const auto& path : paths) tables.push_back(read_csv(path));

  const auto& ref = tables.front().header;
  std::vector<std::string> names(ref.begin(), ref.end() - 1);
  std::vector<std::string> sorted_ref = ref;
  std::sort(sorted_ref.begin(), sorted_ref.end());
  require(std::adjacent_find(sorted_ref.begin(), sorted_ref.end()) == sorted_ref.end(), Errc::schema_mismatch,
          paths.front().string() + " has duplicate column names");

  std::vector<model::SiteData> sites;
  for (std::size_t f = 0; f < tables.size(); ++f) {
    const auto& tab = tables[f];
    auto sorted_hdr = tab.header;
    std::sort(sorted_hdr.begin(), sorted_hdr.end());
    require(sorted_hdr == sorted_ref && tab.header.back() == ref.back(), Errc::schema_mismatch,
            paths[f].string() + ": column set differs from " + paths.front().string());
    std::vector<std::size_t> col(names.size());
    for (std::size_t j = 0; j < names.size(); ++j)
      col[j] = static_cast<std::size_t>(std::find(tab.header.begin(), tab.header.end(), names[j]) - tab.header.begin());

    model::SiteData site;
    const auto n = static_cast<Index>(tab.rows.size());
    const auto p = static_cast<Index>(names.size());
    site.x.resize(n, p);
    site.y.resize(n);
    for (Index i = 0; i < n; ++i) {
      const auto& row = tab.rows[static_cast<std::size_t>(i)];
      for (Index j = 0; j < p; ++j) site.x(i, j) = row[col[static_cast<std::size_t>(j)]];
      site.y(i) = row.back();
    }
    try {
      model::validate(family, site);
    } catch (const Error& e) {
      fail(e.code(), paths[f].string() + ": " + e.what());
    }
    sites.push_back(std::move(site));
  }

  // Largest site first (earliest file on ties); the rest keep file order.
  std::size_t master = 0;
  for (std::size_t k = 1; k < sites.size(); ++k)
    if (sites[k].n() > sites[master].n()) master = k;
  std::rotate(sites.begin(), sites.begin() + static_cast<std::ptrdiff_t>(master),
              sites.begin() + static_cast<std::ptrdiff_t>(master) + 1);
  std::rotate(paths.begin(), paths.begin() + static_cast<std::ptrdiff_t>(master),
              paths.begin() + static_cast<std::ptrdiff_t>(master) + 1);
  for (std::size_t k = 0; k < sites.size(); ++k) sites[k].site_id = static_cast<int>(k);

  if (feature_names) *feature_names = names;
  if (files) *files = paths;
  return sites;
}

LinearHypothesis read_hypothesis(const fs::path& file, const std::vector<std::string>& feature_names) {
  using nlohmann::json;
  std::ifstream in(file);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + file.string());
  LinearHypothesis hyp;
  try {
    const json doc = json::parse(in);
    const auto t = doc.at("t").get<std::vector<double>>();
    const auto r = static_cast<Index>(t.size());
    hyp.t = Eigen::Map<const Vec>(t.data(), r);

    for (const auto& item : doc.at("target")) {
      if (item.is_string()) {
        const auto name = item.get<std::string>();
        const auto it = std::find(feature_names.begin(), feature_names.end(), name);
        require(it != feature_names.end(), Errc::bad_hypothesis, "unknown target column '" + name + "'");
        hyp.target_idx.push_back(it - feature_names.begin());
      } else {
        hyp.target_idx.push_back(item.get<Index>());
      }
    }
    const auto d = static_cast<Index>(hyp.target_idx.size());

    const json& c = doc.at("C");
    std::vector<double> flat;
    if (!c.empty() && c.front().is_array()) {
      require(static_cast<Index>(c.size()) == r, Errc::bad_hypothesis, "C must have one row per entry of t");
      for (const auto& row : c) {
        const auto vals = row.get<std::vector<double>>();
        require(static_cast<Index>(vals.size()) == d, Errc::bad_hypothesis, "C rows must have one entry per target");
        flat.insert(flat.end(), vals.begin(), vals.end());
      }
    } else {
      flat = c.get<std::vector<double>>();
      require(static_cast<Index>(flat.size()) == r * d, Errc::bad_hypothesis, "C must have r x d entries");
    }
    hyp.c = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), r, d);
  } catch (const json::exception& e) {
    fail(Errc::bad_hypothesis, file.string() + ": " + e.what());
  }
  inference::validate(hyp, static_cast<Index>(feature_names.size()));
  return hyp;
}

LoadedSites load_sites(const fs::path& dir, model::Family family, const fs::path& hypothesis_file,
                       cluster::Transport transport) {
  LoadedSites out;
  auto sites = read_site_csvs(dir, family, &out.feature_names, &out.files);
  out.hypothesis = read_hypothesis(hypothesis_file, out.feature_names);
  out.cluster = transport == cluster::Transport::socket ? cluster::Cluster::loopback_sockets(family, std::move(sites))
                                                         : cluster::Cluster::in_process(family, std::move(sites));
  return out;
}

}  // namespace cst::harness
