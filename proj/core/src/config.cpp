#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "cst/error.hpp"
#include "cst/harness.hpp"

namespace cst::harness {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      if (c == '\\' && quote == '"') ++i;
      else if (c == quote) in_string = false;
    } else if (c == '"' || c == '\'') {
      in_string = true;
      quote = c;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

// Flat TOML: `key = value` lines with strings, numbers, booleans and one-line arrays.
json toml_to_json(const std::string& text) {
  static const std::regex literal_string(R"('([^']*)')");
  static const std::regex trailing_comma(R"(,\s*\])");
  static const std::regex digit_underscore(R"((\d)_(?=\d))");
  json out = json::object();
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    require(line.front() != '[', Errc::invalid_config, "TOML tables are not supported" + where);
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::invalid_config, "expected key = value" + where);
    std::string key = trim(line.substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    std::string value = trim(line.substr(eq + 1));
    value = std::regex_replace(value, literal_string, "\"$1\"");
    value = std::regex_replace(value, trailing_comma, "]");
    if (value.empty() || value.front() != '"') value = std::regex_replace(value, digit_underscore, "$1");
    require(!out.contains(key), Errc::invalid_config, "duplicate key '" + key + "'" + where);
    try {
      out[key] = json::parse(value);
    } catch (const json::exception&) {
      fail(Errc::invalid_config, "cannot parse value for '" + key + "'" + where);
    }
  }
  return out;
}

std::vector<double> number_list(const json& v) {
  if (v.is_number()) return {v.get<double>()};
  return v.get<std::vector<double>>();
}

SimConfig from_json(const json& doc) {
  require(doc.is_object(), Errc::invalid_config, "configuration must be an object");
  SimConfig cfg;
  for (const auto& [key, v] : doc.items()) {
    if (key == "family") cfg.family = model::parse_family(v.get<std::string>());
    else if (key == "n_per_site") cfg.n_per_site = v.get<Index>();
    else if (key == "m") cfg.m = v.get<Index>();
    else if (key == "p") cfg.p = v.get<Index>();
    else if (key == "rho") cfg.rho = v.get<double>();
    else if (key == "hypothesis") cfg.hypothesis = parse_hypothesis(v.get<std::string>());
    else if (key == "h") cfg.h = v.get<double>();
    else if (key == "h_grid") cfg.h_grid = number_list(v);
    else if (key == "penalty") cfg.penalty = penalty::parse_kind(v.get<std::string>());
    else if (key == "replications") cfg.replications = v.get<int>();
    else if (key == "alphas") cfg.alphas = number_list(v);
    else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
    else if (key == "variance_mode") {
      const auto s = v.get<std::string>();
      if (s == "auto") cfg.variance_mode.reset();
      else cfg.variance_mode = inference::parse_variance_mode(s);
    } else if (key == "run_oracle") cfg.run_oracle = v.get<bool>();
    else if (key == "threads") cfg.threads = v.get<int>();
    else if (key == "label") cfg.label = v.get<std::string>();
    else if (key == "lambda_grid") cfg.stage.lambda_grid = number_list(v);
    else if (key == "max_outer") cfg.stage.max_outer = v.get<int>();
    else if (key == "outer_tol") cfg.stage.outer_tol = v.get<double>();
    else if (key == "inner_max") cfg.stage.inner_max = v.get<int>();
    else if (key == "inner_tol") cfg.stage.inner_tol = v.get<double>();
    else if (key == "grid_points") cfg.stage.grid_points = v.get<int>();
    else if (key == "grid_ratio") cfg.stage.grid_ratio = v.get<double>();
    else if (key == "hbic_scale") {
      const auto s = v.get<std::string>();
      require(s == "master" || s == "total", Errc::invalid_config, "hbic_scale must be master or total");
      cfg.stage.hbic_scale = s == "master" ? solver::HbicScale::master : solver::HbicScale::total;
    }
    else fail(Errc::invalid_config, "unknown configuration key '" + key + "'");
  }
  return cfg;
}

}  // namespace

SimConfig parse_config(const std::string& text, bool toml) {
  SimConfig cfg;
  try {
    cfg = from_json(toml ? toml_to_json(text) : json::parse(text));
  } catch (const json::exception& e) {
    fail(Errc::invalid_config, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_config) throw;
    fail(Errc::invalid_config, e.what());
  }
  validate(cfg);
  return cfg;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto ext = path.extension().string();
  return parse_config(ss.str(), ext == ".toml");
}

}  // namespace cst::harness
