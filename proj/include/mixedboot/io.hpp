#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mixedboot/dataset.hpp"
#include "mixedboot/errors.hpp"

namespace mixedboot {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos
                                                                          : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

inline bool parse_real(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

// Shortest decimal text that reads back to the same double; "nan"/"inf" for
// non-finite values.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Clustered data parsed from CSV, with the original cluster labels in
// cluster index order.
struct IngestedData {
  ClusteredDataset data;
  std::vector<std::string> cluster_ids;
  std::vector<std::string> covariate_names;
};

// Header `cluster_id,y,x1,...,xk` (any column order). Clusters are indexed
// by first appearance; the intercept column is prepended.
inline IngestedData parse_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) have_header = true;
  }
  if (!have_header) throw ParseError("empty input, expected a header", lineno == 0 ? 1 : lineno);
  if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const std::size_t header_line = lineno;
  const auto header = detail::split_fields(line);
  const std::size_t ncols = header.size();
  std::ptrdiff_t id_col = -1, y_col = -1;
  std::map<int, std::size_t> x_cols;  // covariate number -> column
  std::map<std::string, bool> seen;
  for (std::size_t c = 0; c < ncols; ++c) {
    const std::string name(detail::unquote(header[c]));
    if (name.empty()) throw ParseError("empty column name in header", header_line);
    if (seen[name]) throw ParseError("duplicate column '" + name + "'", header_line);
    seen[name] = true;
    if (name == "cluster_id") {
      id_col = static_cast<std::ptrdiff_t>(c);
    } else if (name == "y") {
      y_col = static_cast<std::ptrdiff_t>(c);
    } else {
      int k = 0;
      const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
      if (name.size() < 2 || name[0] != 'x' || ec != std::errc() ||
          ptr != name.data() + name.size() || k < 1 || name[1] == '0')
        throw ParseError("unknown column '" + name + "'", header_line);
      x_cols[k] = c;
    }
  }
  if (id_col < 0) throw ParseError("missing column 'cluster_id'", header_line);
  if (y_col < 0) throw ParseError("missing column 'y'", header_line);
  int expect = 1;
  for (const auto& [k, c] : x_cols) {
    if (k != expect)
      throw ParseError("covariate columns must be x1..xk without gaps; missing x" +
                           std::to_string(expect),
                       header_line);
    ++expect;
  }
  const Eigen::Index p = static_cast<Eigen::Index>(x_cols.size()) + 1;

  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index_of;
  std::vector<std::vector<double>> rows_y;
  std::vector<std::vector<std::vector<double>>> rows_x;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != ncols)
      throw ParseError("expected " + std::to_string(ncols) + " fields, found " +
                           std::to_string(f.size()),
                       lineno);
    const std::string id(detail::unquote(f[static_cast<std::size_t>(id_col)]));
    if (id.empty()) throw ParseError("missing cluster_id", lineno);
    double yv = 0.0;
    if (!detail::parse_real(f[static_cast<std::size_t>(y_col)], yv))
      throw ParseError("y is missing or not a finite number: '" +
                           std::string(f[static_cast<std::size_t>(y_col)]) + "'",
                       lineno);
    std::vector<double> xv;
    for (const auto& [k, c] : x_cols) {
      double v = 0.0;
      if (!detail::parse_real(f[c], v))
        throw ParseError("x" + std::to_string(k) + " is missing or not a finite number: '" +
                             std::string(f[c]) + "'",
                         lineno);
      xv.push_back(v);
    }
    auto [it, fresh] = index_of.try_emplace(id, ids.size());
    if (fresh) {
      ids.push_back(id);
      rows_y.emplace_back();
      rows_x.emplace_back();
    }
    rows_y[it->second].push_back(yv);
    rows_x[it->second].push_back(std::move(xv));
  }

  const std::size_t D = ids.size();
  std::vector<int> sizes(D);
  std::size_t N = 0;
  for (std::size_t i = 0; i < D; ++i) {
    sizes[i] = static_cast<int>(rows_y[i].size());
    N += rows_y[i].size();
  }
  VectorXd y(static_cast<Eigen::Index>(N));
  MatrixXd X(static_cast<Eigen::Index>(N), p);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < rows_y[i].size(); ++j, ++r) {
      y(r) = rows_y[i][j];
      X(r, 0) = 1.0;
      for (Eigen::Index c = 1; c < p; ++c) X(r, c) = rows_x[i][j][static_cast<std::size_t>(c - 1)];
    }
  }
  std::vector<std::string> names;
  for (const auto& [k, c] : x_cols) names.push_back("x" + std::to_string(k));
  try {
    return {ClusteredDataset(std::move(sizes), std::move(y), std::move(X)), std::move(ids),
            std::move(names)};
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
}

inline IngestedData ingest_csv_with_ids(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse_csv(in);
}

inline ClusteredDataset ingest_csv(const std::string& path) {
  return ingest_csv_with_ids(path).data;
}

// Writes `cluster_id,y,x1,...` with clusters labelled 1..D unless ids are
// given. Values are written in shortest round-trip form.
inline void write_dataset_csv(std::ostream& out, const ClusteredDataset& data,
                              const std::vector<std::string>& ids = {}) {
  const Eigen::Index p = data.num_covariates();
  out << "cluster_id,y";
  for (Eigen::Index c = 1; c < p; ++c) out << ",x" << c;
  out << '\n';
  for (std::size_t i = 0; i < data.num_clusters(); ++i) {
    const std::string id = ids.empty() ? std::to_string(i + 1) : ids.at(i);
    const auto off = static_cast<Eigen::Index>(data.offset(i));
    for (int j = 0; j < data.size(i); ++j) {
      out << id << ',' << format_real(data.y()(off + j));
      for (Eigen::Index c = 1; c < p; ++c) out << ',' << format_real(data.X()(off + j, c));
      out << '\n';
    }
  }
}

// Provenance carried by every output file.
struct OutputMeta {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> extra;  // written in order
};

// A rectangular result. Cells are empty, text, integers or reals; JSON keeps
// the type (empty and non-finite become null), CSV writes reals in shortest
// round-trip form and empty cells as nothing.
struct Table {
  using Cell = std::variant<std::monostate, std::string, long long, double>;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw InvalidArgument("row width differs from header");
    rows.push_back(std::move(row));
  }
};

namespace detail {
inline std::string csv_cell(const Table::Cell& c) {
  if (std::holds_alternative<std::monostate>(c)) return {};
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return format_real(std::get<double>(c));
}

inline nlohmann::ordered_json json_cell(const Table::Cell& c) {
  if (std::holds_alternative<std::monostate>(c)) return nullptr;
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<long long>(&c)) return *i;
  const double v = std::get<double>(c);
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline nlohmann::ordered_json json_meta(const OutputMeta& m) {
  nlohmann::ordered_json j;
  j["tool"] = "mixedboot";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  for (const auto& [k, v] : m.extra) j[k] = v;
  return j;
}
}  // namespace detail

// CSV with a `#` comment header carrying the provenance fields.
inline void write_csv(std::ostream& out, const OutputMeta& meta, const Table& t) {
  out << "# mixedboot " << kVersion << " command=" << meta.command << " seed=" << meta.seed
      << " config_hash=" << meta.config_hash << '\n';
  for (const auto& [k, v] : meta.extra) out << "# " << k << '=' << v << '\n';
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << detail::csv_cell(row[c]);
    out << '\n';
  }
}

inline nlohmann::ordered_json table_json(const Table& t) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json o;
    for (std::size_t c = 0; c < row.size(); ++c) o[t.columns[c]] = detail::json_cell(row[c]);
    arr.push_back(std::move(o));
  }
  return arr;
}

// {"meta": {...}, "rows": [{column: value, ...}, ...]}
inline void write_json(std::ostream& out, const OutputMeta& meta, const Table& t) {
  nlohmann::ordered_json j;
  j["meta"] = detail::json_meta(meta);
  j["rows"] = table_json(t);
  out << j.dump(2) << '\n';
}

}  // namespace mixedboot
