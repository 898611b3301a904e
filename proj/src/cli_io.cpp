#include "nisb/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "nisb/error.hpp"
#include "nisb/kernels.hpp"
#include "nisb/pmm_linear.hpp"
#include "nisb/probit_latent.hpp"
#include "nisb/random.hpp"

namespace nisb::io {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  const char* first = s.data() + (s[0] == '+' ? 1 : 0);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool is_missing(const std::string& raw) {
  const std::string s = trim(raw);
  return s.empty() || s == "NA";
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
  return a;
}

}  // namespace

// ---- CSV -------------------------------------------------------------------

CsvTable read_csv(std::istream& in, const std::string& source) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  std::size_t line = 1;
  std::size_t record_line = 1;
  bool record_has_content = false;

  auto finish_record = [&] {
    record.push_back(field);
    field.clear();
    field_quoted = false;
    const bool blank = record.size() == 1 && record[0].empty() && !record_has_content;
    if (!blank) {
      if (table.header.empty() && table.rows.empty()) {
        table.header = record;
      } else {
        if (record.size() != table.header.size())
          throw Error(ErrorCode::parse_error, source + ":" + std::to_string(record_line) + ": expected " +
                                                  std::to_string(table.header.size()) + " fields, found " +
                                                  std::to_string(record.size()));
        table.rows.push_back(record);
        table.lines.push_back(record_line);
      }
    }
    record.clear();
    record_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_quoted)
          throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line) + ": stray quote inside a field");
        in_quotes = true;
        field_quoted = true;
        record_has_content = true;
        break;
      case ',':
        record.push_back(field);
        field.clear();
        field_quoted = false;
        record_has_content = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        finish_record();
        ++line;
        record_line = line;
        break;
      default:
        if (field_quoted)
          throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line) + ": text after closing quote");
        field.push_back(c);
        record_has_content = true;
    }
  }
  if (in_quotes)
    throw Error(ErrorCode::parse_error, source + ":" + std::to_string(record_line) + ": unterminated quoted field");
  if (!field.empty() || !record.empty() || record_has_content) finish_record();
  if (table.header.empty()) throw Error(ErrorCode::parse_error, source + ": missing header row");

  std::set<std::string> seen;
  for (const auto& h : table.header)
    if (!seen.insert(h).second) throw Error(ErrorCode::parse_error, source + ":1: duplicate column '" + h + "'");
  return table;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return read_csv(in, path.string());
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_field(fields[i]);
  }
  out << "\r\n";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error(ErrorCode::io_error, "number formatting failed");
  return std::string(buf, ptr);
}

// ---- Roles -----------------------------------------------------------------

OutcomeKind parse_outcome_kind(const std::string& text) {
  if (text == "auto") return OutcomeKind::automatic;
  if (text == "continuous") return OutcomeKind::continuous;
  if (text == "binary") return OutcomeKind::binary;
  throw Error(ErrorCode::invalid_argument, "outcome kind must be auto, continuous or binary, got '" + text + "'");
}

EncodedSample encode_sample(const CsvTable& table, const RoleMapping& roles, OutcomeKind kind) {
  if (roles.y.empty()) throw Error(ErrorCode::invalid_argument, "no outcome column given");
  if (roles.a.empty()) throw Error(ErrorCode::invalid_argument, "at least one auxiliary column is required");

  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < table.header.size(); ++j) col[table.header[j]] = j;
  std::map<std::string, std::string> assigned;
  auto claim = [&](const std::string& name, const std::string& role) {
    if (!col.count(name)) throw Error(ErrorCode::invalid_argument, "column '" + name + "' not found in the microdata");
    const auto [it, fresh] = assigned.emplace(name, role);
    if (!fresh)
      throw Error(ErrorCode::invalid_argument, "column '" + name + "' mapped to both " + it->second + " and " + role);
  };
  claim(roles.y, "Y");
  for (const auto& z : roles.z) claim(z, "Z");
  for (const auto& a : roles.a) claim(a, "A");
  for (const auto& x : roles.ignore) claim(x, "ignore");

  EncodedSample out;
  for (const auto& h : table.header)
    if (!assigned.count(h) || assigned[h] == "ignore") {
      if (h != roles.y) out.ignored_columns.push_back(h);
    }

  std::vector<std::string> used{roles.y};
  used.insert(used.end(), roles.z.begin(), roles.z.end());
  used.insert(used.end(), roles.a.begin(), roles.a.end());
  std::size_t incomplete = 0;
  std::size_t first_bad = 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (const auto& name : used)
      if (is_missing(table.rows[r][col[name]])) {
        if (incomplete++ == 0) first_bad = table.lines[r];
        break;
      }
  }
  if (incomplete > 0)
    throw Error(ErrorCode::invalid_argument, std::to_string(incomplete) + " of " + std::to_string(table.rows.size()) +
                                                 " rows have missing cells in mapped columns (first at line " +
                                                 std::to_string(first_bad) + "); microdata must be complete-case");

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  if (n < 3) throw Error(ErrorCode::insufficient_data, "too few microdata rows");

  SelectedSample& s = out.sample;
  s.y_name = roles.y;
  s.y.resize(n);
  bool all_binary = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cell = table.rows[static_cast<std::size_t>(i)][col[roles.y]];
    const auto v = parse_double(cell);
    if (!v)
      throw Error(ErrorCode::parse_error, "line " + std::to_string(table.lines[static_cast<std::size_t>(i)]) +
                                              ": outcome '" + cell + "' is not numeric");
    s.y[i] = *v;
    all_binary = all_binary && (*v == 0.0 || *v == 1.0);
  }
  if (kind == OutcomeKind::binary && !all_binary)
    throw Error(ErrorCode::invalid_argument, "binary outcome column '" + roles.y + "' has values other than 0 and 1");
  out.binary = kind == OutcomeKind::binary || (kind == OutcomeKind::automatic && all_binary);

  // Numeric columns pass through; anything else becomes indicator columns.
  auto encode = [&](const std::vector<std::string>& names, std::vector<std::string>& out_names) {
    std::vector<Eigen::VectorXd> cols;
    for (const auto& name : names) {
      const std::size_t j = col[name];
      Eigen::VectorXd v(n);
      bool numeric = true;
      for (Eigen::Index i = 0; i < n && numeric; ++i) {
        const auto x = parse_double(table.rows[static_cast<std::size_t>(i)][j]);
        if (x) v[i] = *x; else numeric = false;
      }
      if (numeric) {
        out_names.push_back(name);
        cols.push_back(v);
        continue;
      }
      std::set<std::string> levels;
      for (const auto& row : table.rows) levels.insert(trim(row[j]));
      if (levels.size() < 2)
        throw Error(ErrorCode::invalid_argument, "categorical column '" + name + "' has a single level");
      out.encodings.push_back(name + " -> reference level '" + *levels.begin() + "'");
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        Eigen::VectorXd d(n);
        for (Eigen::Index i = 0; i < n; ++i) d[i] = trim(table.rows[static_cast<std::size_t>(i)][j]) == *it ? 1.0 : 0.0;
        out_names.push_back(name + ":" + *it);
        cols.push_back(d);
      }
    }
    Eigen::MatrixXd m(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = cols[c];
    return m;
  };
  s.z = encode(roles.z, s.z_names);
  s.a = encode(roles.a, s.a_names);
  s.validate();
  return out;
}

// ---- Summary files ---------------------------------------------------------

SummaryStats parse_summary_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, source + ": " + e.what());
  }
  auto fail = [&](const std::string& msg) { return Error(ErrorCode::parse_error, source + ": " + msg); };
  if (!j.is_object()) throw fail("top level must be an object");
  for (const char* key : {"variables", "n", "means", "cov", "cov_divisor"})
    if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");

  SummaryStats s;
  s.pattern = Pattern::nonselected;
  if (!j["variables"].is_array()) throw fail("'variables' must be an array of names");
  std::set<std::string> seen;
  for (const auto& v : j["variables"]) {
    if (!v.is_string()) throw fail("'variables' must be an array of names");
    if (!seen.insert(v.get<std::string>()).second) throw fail("duplicate variable '" + v.get<std::string>() + "'");
    s.names.push_back(v.get<std::string>());
  }
  const auto k = static_cast<Eigen::Index>(s.names.size());
  if (k == 0) throw fail("no variables");

  std::optional<std::int64_t> n;
  if (!j["n"].is_null()) {
    if (!j["n"].is_number_integer()) throw fail("'n' must be an integer or null");
    n = j["n"].get<std::int64_t>();
    if (*n < 2) throw fail("'n' must be at least 2");
  }

  const auto& means = j["means"];
  if (!means.is_array() || static_cast<Eigen::Index>(means.size()) != k)
    throw fail("'means' must have one entry per variable");
  s.means.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!means[static_cast<std::size_t>(i)].is_number()) throw fail("'means' must be numbers");
    s.means[i] = means[static_cast<std::size_t>(i)].get<double>();
  }

  const auto& cov = j["cov"];
  if (!cov.is_array() || static_cast<Eigen::Index>(cov.size()) != k)
    throw fail("'cov' must be a " + std::to_string(k) + " x " + std::to_string(k) + " matrix");
  s.cov.resize(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto& row = cov[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != k)
      throw fail("'cov' must be a " + std::to_string(k) + " x " + std::to_string(k) + " matrix");
    for (Eigen::Index c = 0; c < k; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw fail("'cov' must contain numbers");
      s.cov(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  if (!s.means.allFinite() || !s.cov.allFinite()) throw fail("non-finite moments");

  const double scale = s.cov.cwiseAbs().maxCoeff();
  const double asym = (s.cov - s.cov.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTolerance * std::max(scale, 1e-300))
    throw fail("covariance matrix is not symmetric (max asymmetry " + format_number(asym) + ")");
  s.cov = (0.5 * (s.cov + s.cov.transpose())).eval();

  if (!j["cov_divisor"].is_string()) throw fail("'cov_divisor' must be \"n-1\", \"n\" or \"population\"");
  const auto divisor = j["cov_divisor"].get<std::string>();
  if (divisor == "n-1") {
    s.count = n;
  } else if (divisor == "n" || divisor == "population") {
    if (n) {
      s.cov *= static_cast<double>(*n) / static_cast<double>(*n - 1);
      s.count = n;
    } else if (divisor == "n") {
      throw fail("cov_divisor \"n\" needs an integer 'n'");
    }
  } else {
    throw fail("unknown cov_divisor '" + divisor + "'");
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(e.code(), source + ": " + e.what());
  }
  return s;
}

SummaryStats parse_summary_file(const std::filesystem::path& path) {
  return parse_summary_json(read_file(path), path.string());
}

json summary_to_json(const SummaryStats& stats) {
  json cov = json::array();
  for (Eigen::Index r = 0; r < stats.cov.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < stats.cov.cols(); ++c) row.push_back(stats.cov(r, c));
    cov.push_back(row);
  }
  json j;
  j["variables"] = stats.names;
  j["n"] = stats.count ? json(*stats.count) : json(nullptr);
  j["means"] = vec_json(stats.means);
  j["cov"] = cov;
  j["cov_divisor"] = "n-1";
  return j;
}

void write_summary_file(const std::filesystem::path& path, const SummaryStats& stats) {
  write_file(path, summary_to_json(stats).dump(2) + "\n");
}

// ---- analyze ---------------------------------------------------------------

namespace {

std::string mode_name(RescaleMode m) { return m == RescaleMode::sqrt ? "sqrt" : "variance"; }
std::string mode_name(AggregateMode m) { return m == AggregateMode::fixed ? "fixed" : "resample"; }

std::string rho_note(double rho) { return "Cor(X,Y|Z) = " + format_number(rho); }

json summary_block(const PosteriorSummary& s) {
  return {{"median", vec_json(s.median)}, {"ci_lower", vec_json(s.ci_lower)}, {"ci_upper", vec_json(s.ci_upper)}};
}

json posterior_block(const PosteriorResult& post, const PosteriorOptions& options, std::uint64_t seed,
                     const Eigen::VectorXd& estimate) {
  json p = summary_block(post.mubns);
  p["prior"] = options.prior.label();
  p["n_draws"] = options.n_draws;
  p["seed"] = seed;
  p["unstable_draws"] = post.unstable_draws;
  p["phi_redraws"] = post.phi_redraws;
  p["floored_sigma_draws"] = post.floored_sigma_draws;
  std::vector<double> rho(post.rho_draws.data(), post.rho_draws.data() + post.rho_draws.size());
  std::sort(rho.begin(), rho.end());
  p["cor_xy_z_median"] = quantile_sorted(rho, 0.5);
  json at = json::array();
  for (std::size_t g = 0; g < options.phi_grid.size(); ++g) {
    json e = {{"phi", options.phi_grid[g]}};
    if (post.mubns_at_phi[g]) {
      e.update(summary_block(*post.mubns_at_phi[g]));
    } else {
      e["unavailable"] = "fewer than 100 stable draws at this phi";
    }
    at.push_back(e);
  }
  p["at_phi"] = at;
  if (post.mub) {
    p["mub"] = summary_block(*post.mub);
    p["adjusted_median"] = vec_json(estimate - post.mub->median);
  }
  return p;
}

PosteriorResult run_posterior(const SelectedSample& s, const SummaryStats& nonsel, const PosteriorOptions& o,
                              Random& rng, const std::string& rho_text) {
  try {
    return posterior_mubns(s, nonsel, o, rng);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::too_many_failures || e.code() == ErrorCode::weak_proxy)
      throw Error(e.code(), std::string(e.what()) + " (" + rho_text + ")");
    throw;
  }
}

PosteriorOptions posterior_options(const AnalysisRequest& req, Target target) {
  PosteriorOptions o;
  o.prior = req.prior;
  o.n_draws = req.n_draws;
  o.target = target;
  o.aggregate_mode = *req.aggregate_mode;
  o.rescale_mode = req.rescale_mode;
  o.nonselection_rate = req.nonselection_rate;
  o.phi_grid = req.phi_grid;
  return o;
}

json linear_block(const SelectedSample& s, const SummaryStats& nonsel, const AnalysisRequest& req,
                  std::vector<std::string>& warnings) {
  json m;
  m["model"] = "linear";
  const RegressionFit fit = ols_from_micro(s.y, s.design_z());
  const Eigen::VectorXd est = fit.coefficients();
  m["estimate"] = vec_json(est);
  m["se"] = vec_json(fit.coef_cov.diagonal().cwiseSqrt());

  const ProxySpec spec = fit_proxy_linear(s);
  m["proxy"] = {{"auxiliaries", s.a_names}, {"weights", vec_json(spec.a_coeffs)}};
  const ConditionalMoments sel_m = conditional_moments_selected(s, spec);
  const ConditionalMoments non_m = conditional_moments_nonselected(spec, nonsel, s.z_names, s.a_names);
  const double rho = sel_m.outcome->rho_xy_z;
  m["cor_xy_z"] = rho;
  if (std::abs(rho) < 0.2)
    warnings.push_back("linear: weak proxy, " + rho_note(rho) + "; indices near phi = 1 are unstable");

  json points = json::array();
  for (double phi : req.phi_grid) {
    json e = {{"phi", phi}};
    try {
      BiasIndexSet idx = mubns(sel_m, non_m, PhiValue(phi));
      e["mubns"] = vec_json(idx.mubns);
      e["sigma_yy_z_nonselected"] = idx.sigma_yy_z_0;
      if (idx.sigma_floored) {
        e["sigma_floored"] = true;
        warnings.push_back("linear: non-selected residual variance floored at 0 for phi = " + format_number(phi));
      }
      if (req.nonselection_rate) {
        idx = mub(idx, *req.nonselection_rate);
        e["mub"] = vec_json(*idx.mub);
        e["adjusted"] = vec_json(adjusted_coefficients(fit, idx));
      }
    } catch (const Error& err) {
      if (err.code() != ErrorCode::weak_proxy) throw;
      e["unavailable"] = std::string(err.what()) + " (" + rho_note(rho) + ")";
      warnings.push_back("linear: phi = " + format_number(phi) + " skipped, weak proxy (" + rho_note(rho) + ")");
    }
    points.push_back(e);
  }
  m["point"] = points;

  try {
    const auto iv = mle_interval(sel_m, non_m);
    Eigen::VectorXd lo(static_cast<Eigen::Index>(iv.size())), hi(static_cast<Eigen::Index>(iv.size()));
    for (std::size_t j = 0; j < iv.size(); ++j) {
      lo[static_cast<Eigen::Index>(j)] = iv[j].lower;
      hi[static_cast<Eigen::Index>(j)] = iv[j].upper;
    }
    m["mle_interval"] = {{"lower", vec_json(lo)}, {"upper", vec_json(hi)}};
  } catch (const Error& err) {
    if (err.code() != ErrorCode::weak_proxy) throw;
    m["mle_interval"] = nullptr;
  }

  const auto o = posterior_options(req, Target::linear);
  const std::uint64_t seed = derive_seed(req.seed, 0);
  Random rng(seed);
  const PosteriorResult post = run_posterior(s, nonsel, o, rng, rho_note(rho));
  m["posterior"] = posterior_block(post, o, seed, est);
  if (post.unstable_draws > 0)
    warnings.push_back("linear: " + std::to_string(post.unstable_draws) + " unstable posterior draws were redrawn");
  return m;
}

json probit_block(const SelectedSample& s, const SummaryStats& nonsel, const AnalysisRequest& req,
                  std::vector<std::string>& warnings) {
  json m;
  m["model"] = "probit";
  const ProbitFit pf = fit_probit(s);
  // Probit of Y on Z alone for the selected-sample estimate.
  const ProbitMle yz = probit_mle(s.y, s.design_z());
  m["estimate"] = vec_json(yz.coefficients);
  m["se"] = vec_json(yz.coef_cov.diagonal().cwiseSqrt());
  m["proxy"] = {{"auxiliaries", s.a_names}, {"weights", vec_json(pf.proxy.a_coeffs)}};
  m["rescale_mode"] = mode_name(req.rescale_mode);

  const auto o = posterior_options(req, Target::probit);
  const std::uint64_t seed = derive_seed(req.seed, 1);
  Random rng(seed);
  const PosteriorResult post = run_posterior(s, nonsel, o, rng, "latent scale");
  json p = posterior_block(post, o, seed, yz.coefficients);
  m["cor_xy_z"] = p["cor_xy_z_median"];
  m["posterior"] = p;
  const double rho = p["cor_xy_z_median"].get<double>();
  if (std::abs(rho) < 0.2)
    warnings.push_back("probit: weak proxy, posterior median " + rho_note(rho) + " on the latent scale");
  if (post.unstable_draws > 0)
    warnings.push_back("probit: " + std::to_string(post.unstable_draws) + " unstable posterior draws were redrawn");
  return m;
}

}  // namespace

json analyze_sample(const EncodedSample& data, const SummaryStats& nonsel, const AnalysisRequest& request) {
  AnalysisRequest req = request;
  if (!req.aggregate_mode) req.aggregate_mode = nonsel.count ? AggregateMode::resample : AggregateMode::fixed;
  const SelectedSample& s = data.sample;
  for (const auto* names : {&s.z_names, &s.a_names})
    for (const auto& name : *names)
      if (!nonsel.contains(name))
        throw Error(ErrorCode::invalid_argument, "non-selected summary has no variable '" + name + "'");
  if (req.nonselection_rate && !(*req.nonselection_rate >= 0.0 && *req.nonselection_rate <= 1.0))
    throw Error(ErrorCode::invalid_argument, "non-selection rate must lie in [0, 1]");
  for (double f : req.phi_grid) static_cast<void>(PhiValue(f));

  json r;
  r["schema"] = kReportSchema;
  r["version"] = kVersion;

  json cfg;
  cfg["selected_data"] = req.selected_data.string();
  cfg["nonselected_summary"] = req.nonselected_summary.string();
  cfg["roles"] = {{"y", req.roles.y}, {"z", req.roles.z}, {"a", req.roles.a}, {"ignore", req.roles.ignore}};
  cfg["outcome_kind"] = data.binary ? "binary" : "continuous";
  cfg["phi_grid"] = req.phi_grid;
  cfg["prior"] = req.prior.label();
  cfg["draws"] = req.n_draws;
  cfg["rate"] = req.nonselection_rate ? json(*req.nonselection_rate) : json(nullptr);
  cfg["seed"] = req.seed;
  cfg["rescale_mode"] = mode_name(req.rescale_mode);
  cfg["aggregate_mode"] = mode_name(*req.aggregate_mode);
  r["config"] = cfg;

  r["data"] = {{"n_selected", s.size()},
               {"n_nonselected", nonsel.count ? json(*nonsel.count) : json(nullptr)},
               {"predictors", s.z_names},
               {"auxiliaries", s.a_names},
               {"encodings", data.encodings},
               {"ignored_columns", data.ignored_columns}};

  std::vector<std::string> coefs{"(Intercept)"};
  coefs.insert(coefs.end(), s.z_names.begin(), s.z_names.end());
  r["coefficients"] = coefs;

  std::vector<std::string> warnings;
  std::vector<std::string> notes;
  if (!req.nonselection_rate)
    notes.push_back("no non-selection rate given: MUB and adjusted coefficients need Pr(S=0), so only MUBNS is reported");
  if (!nonsel.count && *req.aggregate_mode == AggregateMode::resample)
    throw Error(ErrorCode::invalid_argument, "aggregate resampling needs a count in the summary file");

  json models = json::array();
  models.push_back(linear_block(s, nonsel, req, warnings));
  if (data.binary) {
    models.push_back(probit_block(s, nonsel, req, warnings));
    notes.push_back("probit indices are on the latent scale with unit residual variance");
  }
  r["models"] = models;
  r["warnings"] = warnings;
  r["notes"] = notes;
  return r;
}

json run_analysis(const AnalysisRequest& request) {
  const CsvTable table = read_csv_file(request.selected_data);
  const EncodedSample data = encode_sample(table, request.roles, request.outcome_kind);
  const SummaryStats nonsel = parse_summary_file(request.nonselected_summary);
  return analyze_sample(data, nonsel, request);
}

namespace {

std::string cell_text(const json& v) {
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
  return buf;
}

void pad(std::ostringstream& out, const std::string& s, std::size_t width) {
  out << s;
  for (std::size_t i = s.size(); i < width; ++i) out << ' ';
}

}  // namespace

std::string render_report(const json& report) {
  std::ostringstream out;
  const auto& coefs = report["coefficients"];
  out << "Selection bias indices (" << report["schema"].get<std::string>() << ")\n";
  out << "selected n = " << report["data"]["n_selected"].dump()
      << ", non-selected n = " << report["data"]["n_nonselected"].dump()
      << ", seed = " << report["config"]["seed"].dump() << "\n";

  std::size_t w0 = 14;
  for (const auto& c : coefs) w0 = std::max(w0, c.get<std::string>().size() + 4);
  constexpr std::size_t w = 12;

  for (const auto& m : report["models"]) {
    out << "\n[" << m["model"].get<std::string>() << "]  Cor(X,Y|Z) = " << cell_text(m["cor_xy_z"]) << "\n";
    pad(out, "coefficient", w0);
    pad(out, "estimate", w);
    pad(out, "se", w);
    if (m.contains("point"))
      for (const auto& p : m["point"]) pad(out, "MUBNS(" + format_number(p["phi"].get<double>()) + ")", w);
    pad(out, "post.median", w);
    out << "95% CI\n";
    const auto& post = m["posterior"];
    for (std::size_t j = 0; j < coefs.size(); ++j) {
      pad(out, coefs[j].get<std::string>(), w0);
      pad(out, cell_text(m["estimate"][j]), w);
      pad(out, cell_text(m["se"][j]), w);
      if (m.contains("point"))
        for (const auto& p : m["point"]) pad(out, p.contains("mubns") ? cell_text(p["mubns"][j]) : "-", w);
      pad(out, cell_text(post["median"][j]), w);
      out << "[" << cell_text(post["ci_lower"][j]) << ", " << cell_text(post["ci_upper"][j]) << "]\n";
    }
    if (post.contains("mub")) {
      out << "MUB (rate " << cell_text(report["config"]["rate"]) << "):\n";
      for (std::size_t j = 0; j < coefs.size(); ++j) {
        pad(out, "  " + coefs[j].get<std::string>(), w0);
        pad(out, cell_text(post["mub"]["median"][j]), w);
        out << "[" << cell_text(post["mub"]["ci_lower"][j]) << ", " << cell_text(post["mub"]["ci_upper"][j])
            << "]  adjusted " << cell_text(post["adjusted_median"][j]) << "\n";
      }
    }
  }
  for (const auto& n : report["notes"]) out << "note: " << n.get<std::string>() << "\n";
  for (const auto& wmsg : report["warnings"]) out << "warning: " << wmsg.get<std::string>() << "\n";
  return out.str();
}

// ---- simulate --------------------------------------------------------------

namespace {

const char* const kCoefNames[sim::kCoefficients] = {"intercept", "Z1", "Z2"};

std::vector<std::string> cell_prefix(const sim::SimResult& r) {
  return {std::to_string(r.cell_id),
          format_number(r.population.rho_y1),
          format_number(r.population.rho_y2),
          format_number(r.population.cond_cor_ya),
          format_number(r.population.rho_1a),
          format_number(r.selection.gamma_y),
          format_number(r.selection.gamma_z1),
          format_number(r.selection.gamma_z2),
          format_number(r.selection.gamma_a)};
}

const std::vector<std::string> kCellColumns{"cell_id", "rho_y1",   "rho_y2",   "cond_cor_ya", "rho_1a",
                                            "gamma_y", "gamma_z1", "gamma_z2", "gamma_a"};

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<sim::SimResult>& results,
                       const std::vector<double>& phi_grid) {
  auto header = kCellColumns;
  header.insert(header.end(), {"coefficient", "phi", "metric", "value"});
  write_csv_row(out, header);
  for (const auto& r : results) {
    const auto prefix = cell_prefix(r);
    auto row = [&](const std::string& coef, const std::string& phi, const std::string& metric, double value) {
      auto f = prefix;
      f.insert(f.end(), {coef, phi, metric, format_number(value)});
      write_csv_row(out, f);
    };
    row("", "", "failed_replicates", r.failed_replicates);
    row("", "", "cell_failed", r.cell_failed ? 1.0 : 0.0);
    row("", "", "mean_selected", r.mean_selected);
    for (std::size_t j = 0; j < r.coefficients.size(); ++j) {
      const auto& m = r.coefficients[j];
      const std::string coef = kCoefNames[j];
      for (std::size_t f = 0; f < phi_grid.size(); ++f) {
        const std::string phi = format_number(phi_grid[f]);
        row(coef, phi, "median_mubns", m.median_mubns[f]);
        row(coef, phi, "spearman_mubns_true_diff", m.spearman_diff[f]);
        row(coef, phi, "spearman_mubns_true_bias", m.spearman_bias[f]);
      }
      row(coef, "", "median_true_diff", m.median_true_diff);
      row(coef, "", "median_true_bias", m.median_true_bias);
      row(coef, "", "mle_coverage", m.mle_coverage);
      row(coef, "", "mle_median_width", m.mle_median_width);
      auto opt = [&](const char* name, const std::optional<double>& v) {
        if (v) row(coef, "", name, *v);
      };
      opt("bayes_uniform_coverage", m.bayes_uniform_coverage);
      opt("bayes_uniform_median_width", m.bayes_uniform_median_width);
      opt("bayes_uniform_median_posterior_median", m.bayes_uniform_median_posterior_median);
      opt("bayes_discrete_coverage", m.bayes_discrete_coverage);
      opt("bayes_discrete_median_width", m.bayes_discrete_median_width);
      opt("bayes_discrete_median_posterior_median", m.bayes_discrete_median_posterior_median);
    }
  }
}

void write_replicates_csv(std::ostream& out, const std::vector<sim::SimResult>& results,
                          const std::vector<double>& phi_grid) {
  std::vector<std::string> header{"cell_id", "replicate", "ok", "error", "n_selected", "gamma_0", "cor_xy_z",
                                  "coefficient", "true_diff", "true_bias"};
  for (double f : phi_grid) header.push_back("mubns_phi_" + format_number(f));
  header.insert(header.end(), {"mle_lower", "mle_upper", "mle_cover", "bayes_uniform_lower", "bayes_uniform_upper",
                               "bayes_uniform_cover", "bayes_discrete_lower", "bayes_discrete_upper",
                               "bayes_discrete_cover"});
  write_csv_row(out, header);
  for (const auto& r : results) {
    for (std::size_t rep = 0; rep < r.replicates.size(); ++rep) {
      const auto& x = r.replicates[rep];
      if (!x.ok) {
        std::vector<std::string> f{std::to_string(r.cell_id), std::to_string(rep), "0", x.error};
        f.resize(header.size(), "NA");
        write_csv_row(out, f);
        continue;
      }
      for (int j = 0; j < sim::kCoefficients; ++j) {
        std::vector<std::string> f{std::to_string(r.cell_id), std::to_string(rep), "1", "",
                                   std::to_string(x.n_selected), format_number(x.gamma_0),
                                   format_number(x.rho_xy_z), kCoefNames[j], format_number(x.true_diff[j]),
                                   format_number(x.true_bias[j])};
        for (Eigen::Index p = 0; p < x.mubns.rows(); ++p) f.push_back(format_number(x.mubns(p, j)));
        const auto& iv = x.mle[static_cast<std::size_t>(j)];
        f.insert(f.end(), {format_number(iv.lower), format_number(iv.upper), iv.contains(x.true_diff[j]) ? "1" : "0"});
        for (const auto* b : {&x.bayes_uniform, &x.bayes_discrete}) {
          if (*b) {
            const Interval bi{(*b)->lower[j], (*b)->upper[j]};
            f.insert(f.end(), {format_number(bi.lower), format_number(bi.upper), bi.contains(x.true_diff[j]) ? "1" : "0"});
          } else {
            f.insert(f.end(), {"NA", "NA", "NA"});
          }
        }
        write_csv_row(out, f);
      }
    }
  }
}

RunStatus run_status(const std::vector<sim::SimResult>& results) {
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.cell_failed; });
  if (results.empty() || failed == static_cast<std::ptrdiff_t>(results.size())) return RunStatus::failed;
  return failed > 0 ? RunStatus::partial : RunStatus::clean;
}

json simulation_manifest(const SimulationRequest& request, int replicates, const std::vector<sim::SimResult>& results) {
  json m;
  m["schema"] = kManifestSchema;
  m["version"] = kVersion;
  m["grid"] = request.full ? "full" : "desk";
  m["replicates"] = replicates;
  m["bayes_draws"] = request.bayes_draws;
  m["phi_grid"] = request.phi_grid;
  m["seed"] = request.seed;
  m["seed_rule"] = "replicate stream = splitmix64 mix of (seed, cell_id, replicate)";
  m["kernels"] = kernels::active().name;
#if defined(__VERSION__)
  m["compiler"] = __VERSION__;
#endif
  const RunStatus status = run_status(results);
  m["status"] = status == RunStatus::clean ? "clean" : status == RunStatus::partial ? "partial" : "failed";
  json cells = json::array();
  json failed = json::array();
  for (const auto& r : results) {
    json c;
    c["cell_id"] = r.cell_id;
    c["population"] = {{"N", r.population.N},
                       {"rho_y1", r.population.rho_y1},
                       {"rho_y2", r.population.rho_y2},
                       {"cond_cor_ya", r.population.cond_cor_ya},
                       {"rho_1a", r.population.rho_1a},
                       {"sigma_ya", r.population.sigma_ya()}};
    c["selection"] = {{"gamma_y", r.selection.gamma_y},
                      {"gamma_z1", r.selection.gamma_z1},
                      {"gamma_z2", r.selection.gamma_z2},
                      {"gamma_a", r.selection.gamma_a},
                      {"target_fraction", r.selection.target_fraction}};
    c["bayes"] = !r.coefficients.empty() && r.coefficients[0].bayes_uniform_coverage.has_value();
    c["failed_replicates"] = r.failed_replicates;
    c["cell_failed"] = r.cell_failed;
    if (r.failed_replicates > 0) {
      std::map<std::string, int> reasons;
      for (const auto& x : r.replicates)
        if (!x.ok) ++reasons[x.error];
      c["failure_reasons"] = reasons;
    }
    if (r.cell_failed) failed.push_back(r.cell_id);
    cells.push_back(c);
  }
  m["failed_cells"] = failed;
  m["cells"] = cells;
  return m;
}

RunStatus run_simulation(const SimulationRequest& request, std::ostream& log) {
  const int reps = request.replicates.value_or(request.full ? 1000 : 100);
  if (reps < 1) throw Error(ErrorCode::invalid_argument, "replicates must be positive");
  if (request.bayes_draws != 0 && request.bayes_draws < 100)
    throw Error(ErrorCode::invalid_argument, "Bayesian draws must be 0 (off) or at least 100");
  for (double f : request.phi_grid) static_cast<void>(PhiValue(f));

  std::error_code ec;
  std::filesystem::create_directories(request.out_dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + request.out_dir.string() + ": " + ec.message());

  const auto cells = request.full ? sim::full_grid() : sim::desk_grid();
  sim::EvaluationOptions options;
  options.phi_grid = request.phi_grid;
  options.bayes_draws = request.bayes_draws;

  log << "simulating " << cells.size() << " cells x " << reps << " replicates\n";
  const auto start = std::chrono::steady_clock::now();
  const auto results = sim::run_grid(cells, reps, options, request.seed, request.threads);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  {
    std::ostringstream csv;
    write_results_csv(csv, results, request.phi_grid);
    write_file(request.out_dir / "results.csv", csv.str());
  }
  if (request.write_replicates) {
    std::ostringstream csv;
    write_replicates_csv(csv, results, request.phi_grid);
    write_file(request.out_dir / "replicates.csv", csv.str());
  }
  write_file(request.out_dir / "manifest.json", simulation_manifest(request, reps, results).dump(2) + "\n");
  const json timing = {{"wall_seconds", seconds}, {"threads", request.threads}};
  write_file(request.out_dir / "timing.json", timing.dump(2) + "\n");

  const RunStatus status = run_status(results);
  log << "finished in " << format_number(std::round(seconds * 10.0) / 10.0) << " s, status "
      << (status == RunStatus::clean ? "clean" : status == RunStatus::partial ? "partial" : "failed") << "\n";
  return status;
}

}  // namespace nisb::io
