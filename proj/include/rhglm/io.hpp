#pragma once

// CSV ingestion into a Dataset and JSON/CSV serialization of fits, chains,
// posterior summaries and simulation reports.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rhglm/bayes.hpp"
#include "rhglm/dataset.hpp"
#include "rhglm/errors.hpp"
#include "rhglm/estimation.hpp"
#include "rhglm/simstudy.hpp"

namespace rhglm {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("column not found: " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

/// RFC 4180 records: comma separated, double-quoted fields may contain
/// commas, line breaks and doubled quotes; CRLF or LF line endings. The first
/// record is the header. Blank lines are skipped.
inline CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;       // inside a quoted field
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started) throw DataError("unexpected quote inside unquoted field (line " + std::to_string(line) + ")");
        quoted = true;
        field_started = true;
        break;
      case ',': end_field(); break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        end_record();
        ++line;
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();

  if (records.empty()) throw DataError("CSV has no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw DataError("CSV record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

/// Locale-independent decimal parse; surrounding spaces allowed.
inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

struct DesignOptions {
  std::string response;
  bool intercept = true;
  std::vector<std::string> exclude;  // columns to ignore
  bool validate = true;
};

/// Response column plus covariates: numeric columns are used as-is; any
/// column with a non-numeric entry is categorical and one-hot encoded with
/// its first level (in sorted order) dropped.
inline Dataset build_dataset(const CsvTable& table, const DesignOptions& opt) {
  const std::size_t resp = table.column(opt.response);
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError("CSV has no data rows");

  Dataset d;
  d.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = parse_number(table.rows[i][resp]);
    if (!v) throw DataError("response is not numeric at row " + std::to_string(i + 1));
    if (!(*v > 0.0) || !std::isfinite(*v)) {
      throw DataError("response must be strictly positive at row " + std::to_string(i + 1));
    }
    d.y[static_cast<Eigen::Index>(i)] = *v;
  }

  std::vector<std::vector<double>> columns;
  if (opt.intercept) {
    columns.emplace_back(n, 1.0);
    d.column_names.push_back("(intercept)");
  }
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j == resp) continue;
    if (std::find(opt.exclude.begin(), opt.exclude.end(), table.header[j]) != opt.exclude.end()) continue;
    std::vector<double> values(n);
    bool numeric = true;
    for (std::size_t i = 0; i < n && numeric; ++i) {
      const auto v = parse_number(table.rows[i][j]);
      if (v) {
        values[i] = *v;
      } else {
        numeric = false;
      }
    }
    if (numeric) {
      columns.push_back(std::move(values));
      d.column_names.push_back(table.header[j]);
      continue;
    }
    std::map<std::string, int> levels;
    for (const auto& row : table.rows) levels.emplace(row[j], 0);
    if (levels.size() < 2) continue;  // constant factor carries no information
    auto first = levels.begin();
    for (auto it = std::next(first); it != levels.end(); ++it) {
      std::vector<double> dummy(n);
      for (std::size_t i = 0; i < n; ++i) dummy[i] = table.rows[i][j] == it->first ? 1.0 : 0.0;
      columns.push_back(std::move(dummy));
      d.column_names.push_back(table.header[j] + "=" + it->first);
    }
  }
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j][i];
  if (opt.validate) d.validate();
  return d;
}

inline Dataset read_dataset(const std::string& path, const DesignOptions& opt) {
  return build_dataset(read_csv_file(path), opt);
}

// ---------------------------------------------------------------------------
// Number formatting

/// 17 significant digits; non-finite values as inf/-inf/nan.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline Json number_json(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

inline double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw DataError("expected a number in JSON");
}

inline Json vector_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_json(v[i]));
  return a;
}

inline Eigen::VectorXd vector_from_json(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_from_json(j[i]);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON

inline FitMethod fit_method_from_string(std::string_view s) {
  if (s == "gamma") return FitMethod::GammaMLE;
  if (s == "robust") return FitMethod::RobustMLE;
  if (s == "cantoni") return FitMethod::Cantoni;
  throw DomainError("unknown model '" + std::string(s) + "' (expected gamma, robust or cantoni)");
}

inline Json to_json(const FitResult& f) {
  Json j;
  j["method"] = std::string(to_string(f.method));
  j["beta"] = detail::vector_json(f.params.beta);
  j["nu"] = detail::number_json(f.params.nu);
  j["c"] = detail::number_json(f.params.c);
  j["loglik"] = detail::number_json(f.log_likelihood);
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["gradient_norm"] = detail::number_json(f.gradient_norm);
  j["tolerance"] = detail::number_json(f.tolerance);
  j["at_boundary"] = f.at_boundary;
  j["at_kink"] = f.at_kink;
  j["status"] = f.status;
  return j;
}

inline FitResult fit_result_from_json(const Json& j) {
  FitResult f;
  f.method = fit_method_from_string(j.at("method").get<std::string>());
  f.params.beta = detail::vector_from_json(j.at("beta"));
  f.params.nu = detail::number_from_json(j.at("nu"));
  f.params.c = detail::number_from_json(j.at("c"));
  f.log_likelihood = detail::number_from_json(j.at("loglik"));
  f.converged = j.at("converged").get<bool>();
  f.iterations = j.at("iterations").get<int>();
  f.gradient_norm = detail::number_from_json(j.at("gradient_norm"));
  f.tolerance = detail::number_from_json(j.at("tolerance"));
  f.at_boundary = j.at("at_boundary").get<bool>();
  f.at_kink = j.at("at_kink").get<bool>();
  f.status = j.at("status").get<std::string>();
  return f;
}

inline Json to_json(const ParameterSummary& s) {
  return Json{{"name", s.name},
              {"mean", detail::number_json(s.mean)},
              {"sd", detail::number_json(s.sd)},
              {"hpd_lower", detail::number_json(s.hpd_lower)},
              {"hpd_upper", detail::number_json(s.hpd_upper)}};
}

inline Json to_json(const ReportCell& c) {
  Json j{{"scenario", to_string(c.scenario)},
         {"n", c.n},
         {"estimator", c.estimator},
         {"c", detail::number_json(c.c)},
         {"target", to_string(c.target)},
         {"premium", detail::number_json(c.premium)}};
  if (c.protection) j["protection"] = detail::number_json(*c.protection);
  j["M_gamma"] = detail::number_json(c.m_gamma);
  j["M_R"] = detail::number_json(c.m_r);
  j["replicates"] = c.replicates;
  j["failures"] = c.failures;
  j["valid"] = c.valid;
  return j;
}

inline Json to_json(const ScenarioSpec& s) {
  Json grid = Json::array();
  for (double c : s.c_grid) grid.push_back(c);
  return Json{{"scenario", to_string(s.id)},
              {"n", s.n},
              {"contamination_fraction", s.contamination_fraction},
              {"shift", s.shift},
              {"leverage", s.leverage},
              {"replicates", s.replicates},
              {"seed", s.seed},
              {"c_grid", grid},
              {"cantoni_c", s.cantoni_c},
              {"shift_after_leverage", s.shift_after_leverage}};
}

inline Json to_json(const PremiumProtectionReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  return Json{{"spec", to_json(r.spec)}, {"cells", cells}};
}

/// Wraps a payload with version, seed and the configuration that produced it.
inline Json with_provenance(Json payload, std::uint64_t seed, const Json& config) {
  Json out;
  out["version"] = kVersion;
  out["seed"] = seed;
  out["config"] = config;
  for (auto& [k, v] : payload.items()) out[k] = v;
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_report_csv(std::ostream& os, const PremiumProtectionReport& r) {
  os << "scenario,n,estimator,c,target,premium,protection,M_gamma,M_R,replicates,failures\n";
  for (const auto& c : r.cells) {
    os << to_string(c.scenario) << ',' << c.n << ',' << c.estimator << ',' << format_number(c.c) << ','
       << to_string(c.target) << ',' << format_number(c.premium) << ','
       << (c.protection ? format_number(*c.protection) : "") << ',' << format_number(c.m_gamma) << ','
       << format_number(c.m_r) << ',' << c.replicates << ',' << c.failures << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "y_n,estimator,beta1,beta2,nu,converged\n";
  for (const auto& r : rows) {
    os << format_number(r.y_n) << ',' << r.estimator << ',' << format_number(r.beta1) << ','
       << format_number(r.beta2) << ',' << format_number(r.nu) << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

/// One row per kept draw: beta columns, nu, and the log posterior.
inline void write_chain_csv(std::ostream& os, const Chain& chain, const std::vector<std::string>& beta_names = {}) {
  const Eigen::Index p = chain.draws.cols() - 1;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto idx = static_cast<std::size_t>(j);
    os << (idx < beta_names.size() ? beta_names[idx] : "beta" + std::to_string(j + 1)) << ',';
  }
  os << "nu,log_posterior\n";
  for (Eigen::Index k = 0; k < chain.size(); ++k) {
    for (Eigen::Index j = 0; j < p; ++j) os << format_number(chain.draws(k, j)) << ',';
    os << format_number(std::exp(chain.draws(k, p))) << ',' << format_number(chain.log_post_trace[k]) << '\n';
  }
}

}  // namespace rhglm
