#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mgpd/core.hpp"

namespace mgpd {

// A table read from CSV: optional ISO dates in the first column plus numeric columns.
struct Table {
  std::vector<std::string> columns;  // numeric column names
  std::vector<std::chrono::sys_days> dates;
  Matrix values;

  bool has_dates() const { return !dates.empty(); }
  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e && std::isfinite(v);
}

inline std::optional<std::chrono::sys_days> parse_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  y = std::stoi(s.substr(0, 4));
  m = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
  d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd};
}

}  // namespace detail

inline std::string format_date(std::chrono::sys_days d) {
  const std::chrono::year_month_day ymd{d};
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
  return os.str();
}

// Parses CSV text. A first column named "date" holds ISO-8601 dates that must be strictly increasing.
inline Table parse_csv(std::istream& in, const std::string& source = "input") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file (header row required)");
  std::vector<std::string> header = detail::split_csv(line);
  if (header.empty() || (header.size() == 1 && header[0].empty())) throw DataError(source + ": empty header row");
  bool dated = false;
  {
    std::string h0 = header[0];
    std::transform(h0.begin(), h0.end(), h0.begin(), [](unsigned char c) { return std::tolower(c); });
    dated = h0 == "date";
  }
  Table t;
  t.columns.assign(header.begin() + (dated ? 1 : 0), header.end());
  if (t.columns.empty()) throw DataError(source + ": no value columns");
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != header.size()) {
      throw DataError(source + ": row " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(f.size()));
    }
    std::size_t k = 0;
    if (dated) {
      const auto d = detail::parse_iso_date(f[0]);
      if (!d) throw DataError(source + ": row " + std::to_string(lineno) + ": invalid ISO-8601 date '" + f[0] + "'");
      if (!t.dates.empty() && !(*d > t.dates.back())) {
        throw DataError(source + ": row " + std::to_string(lineno) + ": dates must be strictly increasing");
      }
      t.dates.push_back(*d);
      k = 1;
    }
    std::vector<double> r;
    for (; k < f.size(); ++k) {
      double v;
      if (!detail::parse_double(f[k], v)) {
        throw DataError(source + ": row " + std::to_string(lineno) + ", column '" + header[k] + "': missing or invalid value '" +
                        f[k] + "'");
      }
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(i, j) = rows[i][j];
  return t;
}

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, path);
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_csv(std::ostream& os, const Table& t) {
  if (t.has_dates()) os << "date,";
  for (std::size_t j = 0; j < t.columns.size(); ++j) os << (j ? "," : "") << t.columns[j];
  os << '\n';
  for (int i = 0; i < t.rows(); ++i) {
    if (t.has_dates()) os << format_date(t.dates[i]) << ',';
    for (int j = 0; j < t.cols(); ++j) os << (j ? "," : "") << format_number(t.values(i, j));
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const Table& t) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  write_csv(os, t);
}

inline Table matrix_table(const Matrix& m, const std::string& prefix = "x") {
  Table t;
  t.values = m;
  for (Eigen::Index j = 0; j < m.cols(); ++j) t.columns.push_back(prefix + std::to_string(j + 1));
  return t;
}

// Inner join of several dated tables on their dates.
inline Table align_by_date(const std::vector<Table>& tables) {
  if (tables.empty()) throw std::invalid_argument("align_by_date: no tables");
  std::map<std::chrono::sys_days, int> count;
  for (const auto& t : tables) {
    if (!t.has_dates()) throw DataError("align_by_date: every table needs a date column");
    for (const auto& d : t.dates) ++count[d];
  }
  Table out;
  for (const auto& t : tables) out.columns.insert(out.columns.end(), t.columns.begin(), t.columns.end());
  for (const auto& [d, c] : count)
    if (c == static_cast<int>(tables.size())) out.dates.push_back(d);
  out.values.resize(static_cast<Eigen::Index>(out.dates.size()), static_cast<Eigen::Index>(out.columns.size()));
  int col = 0;
  for (const auto& t : tables) {
    std::size_t p = 0;
    for (std::size_t i = 0; i < out.dates.size(); ++i) {
      while (t.dates[p] != out.dates[i]) ++p;
      out.values.block(static_cast<Eigen::Index>(i), col, 1, t.cols()) = t.values.row(static_cast<Eigen::Index>(p));
    }
    col += t.cols();
  }
  return out;
}

// Y_t = 1 - Z_t / Z_{t-1} per column.
inline Table negative_returns(const Table& prices) {
  if (prices.rows() < 2) throw DataError("negative_returns: need at least two price rows");
  for (int i = 0; i < prices.rows(); ++i) {
    for (int j = 0; j < prices.cols(); ++j) {
      if (!(prices.values(i, j) > 0.0)) {
        throw DataError("negative_returns: non-positive price at data row " + std::to_string(i + 1) + ", column '" +
                        prices.columns[j] + "'");
      }
    }
  }
  Table out;
  out.columns = prices.columns;
  if (prices.has_dates()) out.dates.assign(prices.dates.begin() + 1, prices.dates.end());
  out.values.resize(prices.rows() - 1, prices.cols());
  for (int i = 1; i < prices.rows(); ++i)
    for (int j = 0; j < prices.cols(); ++j) out.values(i - 1, j) = 1.0 - prices.values(i, j) / prices.values(i - 1, j);
  return out;
}

struct Cluster {
  int start = 0;  // first index in the cluster window
  int peak = 0;
  int end = 0;  // last index (inclusive)
  double y1 = 0.0, y2 = 0.0, y3 = 0.0;
};

namespace detail {

// Largest sum over windows of at most L consecutive non-zero values.
inline double max_run_sum(const std::vector<double>& p, int lo, int hi, int L) {
  double best = 0.0;
  for (int i = lo; i <= hi; ++i) {
    double s = 0.0;
    for (int k = 0; k < L && i + k <= hi; ++k) {
      if (p[i + k] == 0.0) break;
      s += p[i + k];
      best = std::max(best, s);
    }
  }
  return best;
}

}  // namespace detail

inline std::vector<Cluster> rainfall_cluster_list(const std::vector<double>& p, double u, int halfwidth = 5) {
  if (!(u > 0.0)) throw std::invalid_argument("rainfall_clusters: u must be positive");
  if (halfwidth < 0) throw std::invalid_argument("rainfall_clusters: halfwidth must be non-negative");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0)) throw DataError("rainfall_clusters: negative or missing precipitation at index " + std::to_string(i + 1));
  }
  const int n = static_cast<int>(p.size());
  std::vector<Cluster> out;
  int i = 0, prev_end = -1;
  while (i + 2 < n) {
    if (p[i] + p[i + 1] + p[i + 2] > u) {
      int peak = i;
      for (int k = i + 1; k <= i + 2; ++k)
        if (p[k] > p[peak]) peak = k;
      Cluster c;
      c.peak = peak;
      c.start = std::max({0, peak - halfwidth, prev_end + 1});
      c.end = std::min(n - 1, peak + halfwidth);
      c.y1 = detail::max_run_sum(p, c.start, c.end, 1);
      c.y2 = detail::max_run_sum(p, c.start, c.end, 2);
      c.y3 = detail::max_run_sum(p, c.start, c.end, 3);
      out.push_back(c);
      prev_end = c.end;
      i = c.end + 1;
    } else {
      ++i;
    }
  }
  return out;
}

// (Y1, Y2, Y3) per cluster.
inline Matrix rainfall_clusters(const std::vector<double>& p, double u, int halfwidth = 5) {
  const auto cl = rainfall_cluster_list(p, u, halfwidth);
  Matrix m(static_cast<Eigen::Index>(cl.size()), 3);
  for (std::size_t i = 0; i < cl.size(); ++i) m.row(static_cast<Eigen::Index>(i)) << cl[i].y1, cl[i].y2, cl[i].y3;
  return m;
}

// Rows with y not below u (restricted to the components in `on`, all by default), shifted by u.
inline ExceedanceSet exceedances(const Matrix& data, const Vector& u, const Vector& v, const IndexList& on = {}) {
  if (data.cols() != u.size() || u.size() != v.size()) throw std::invalid_argument("exceedances: dimension mismatch");
  const IndexList J = on.empty() ? all_indices(static_cast<int>(u.size())) : on;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    bool ex = false;
    for (int j : J) ex = ex || data(i, j) > u(j);
    if (ex) keep.push_back(i);
  }
  Matrix rows(static_cast<Eigen::Index>(keep.size()), data.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) rows.row(static_cast<Eigen::Index>(k)) = data.row(keep[k]) - u.transpose();
  return ExceedanceSet(rows, v, u);
}

// Average ranks (1-based) of a column.
inline Vector average_ranks(const Vector& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
  Vector r(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x(idx[j + 1]) == x(idx[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) r(idx[k]) = avg;
    i = j + 1;
  }
  return r;
}

// Per column: -log(1 - rank / (n + 1)).
inline Matrix rank_standardize(const Matrix& data) {
  const Eigen::Index n = data.rows();
  if (n < 2) throw std::invalid_argument("rank_standardize: need at least two rows");
  Matrix out(n, data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const Vector r = average_ranks(data.col(j));
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = -std::log1p(-r(i) / (n + 1.0));
  }
  return out;
}

// Inverse of the empirical CDF: the ceil(n q)-th order statistic.
inline double empirical_quantile(const Vector& x, double q) {
  if (x.size() == 0) throw std::invalid_argument("empirical_quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("empirical_quantile: q outside [0, 1]");
  std::vector<double> s(x.data(), x.data() + x.size());
  std::sort(s.begin(), s.end());
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(q * static_cast<double>(s.size()) - 1e-12)));
  return s[std::min(k, s.size()) - 1];
}

inline Vector marginal_quantiles(const Matrix& data, double q) {
  Vector u(data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) u(j) = empirical_quantile(data.col(j), q);
  return u;
}

}  // namespace mgpd
