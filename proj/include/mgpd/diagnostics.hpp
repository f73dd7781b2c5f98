#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgpd/core.hpp"
#include "mgpd/density.hpp"
#include "mgpd/fit.hpp"
#include "mgpd/generators.hpp"
#include "mgpd/ingest.hpp"
#include "mgpd/model.hpp"
#include "mgpd/parallel.hpp"
#include "mgpd/simulate.hpp"

namespace mgpd {

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
};

inline nlohmann::json to_json(const McEstimate& e) { return {{"value", e.value}, {"se", e.se}}; }

// Linear-interpolation sample quantile.
inline double sample_quantile(std::vector<double> x, double p) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(x.begin(), x.end());
  const double h = p * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

namespace detail {

inline void check_subset(const IndexList& J, int d) {
  if (J.empty()) throw std::invalid_argument("component subset must be non-empty");
  for (int j : J)
    if (j < 0 || j >= d) throw std::invalid_argument("component index " + std::to_string(j + 1) + " out of range");
}

// Empirical CDF values avg_rank / n per column.
inline Matrix ecdf_values(const Matrix& data) {
  Matrix F(data.rows(), data.cols());
  const double n = static_cast<double>(data.rows());
  for (Eigen::Index j = 0; j < data.cols(); ++j) F.col(j) = average_ranks(data.col(j)) / n;
  return F;
}

inline double chi_from_ecdf(const Matrix& F, const IndexList& J, double q) {
  const Eigen::Index n = F.rows();
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool all = true;
    for (int j : J) all = all && F(i, j) > q;
    if (all) ++c;
  }
  return static_cast<double>(c) / (static_cast<double>(n) * (1.0 - q));
}

inline Matrix resample_rows(const Matrix& data, Rng& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  Matrix out(data.rows(), data.cols());
  for (Eigen::Index i = 0; i < data.rows(); ++i) out.row(i) = data.row(pick(rng));
  return out;
}

}  // namespace detail

struct ChiValue {
  double value = 0.0;
  bool flagged = false;  // n (1 - q) < 1
};

inline ChiValue empirical_chi(const Matrix& data, const IndexList& J, double q) {
  if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("empirical_chi: q must lie in [0, 1)");
  if (data.rows() < 1) throw std::invalid_argument("empirical_chi: empty data");
  detail::check_subset(J, static_cast<int>(data.cols()));
  const double n = static_cast<double>(data.rows());
  return {detail::chi_from_ecdf(detail::ecdf_values(data), J, q), n * (1.0 - q) < 1.0};
}

struct ChiCurve {
  IndexList subset;
  std::vector<double> q;
  std::vector<double> chi;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<char> flagged;
  int bootstrap = 0;
};

inline nlohmann::json to_json(const ChiCurve& c) {
  nlohmann::json J = nlohmann::json::array();
  for (int j : c.subset) J.push_back(j + 1);
  std::vector<bool> fl(c.flagged.begin(), c.flagged.end());
  return {{"subset", J}, {"q", c.q}, {"chi", c.chi}, {"lower", c.lower}, {"upper", c.upper}, {"flagged", fl}, {"bootstrap", c.bootstrap}};
}

inline void write_csv(std::ostream& os, const ChiCurve& c) {
  os << "q,chi,lower,upper,flagged\n";
  for (std::size_t k = 0; k < c.q.size(); ++k) {
    os << format_number(c.q[k]) << ',' << format_number(c.chi[k]) << ',' << format_number(c.lower[k]) << ','
       << format_number(c.upper[k]) << ',' << (c.flagged[k] ? 1 : 0) << '\n';
  }
}

struct BootstrapOptions {
  int replicates = 1000;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
};

inline void check_grid(const std::vector<double>& grid, double lo, double hi, const char* what) {
  if (grid.empty()) throw std::invalid_argument(std::string(what) + ": empty grid");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > lo && grid[k] < hi)) throw std::invalid_argument(std::string(what) + ": grid value out of range");
    if (k > 0 && !(grid[k] > grid[k - 1])) throw std::invalid_argument(std::string(what) + ": grid must be strictly increasing");
  }
}

// Empirical chi over a q grid with pointwise percentile bootstrap intervals.
inline ChiCurve chi_curve(const Matrix& data, const IndexList& J, const std::vector<double>& q_grid, const BootstrapOptions& bo = {}) {
  check_grid(q_grid, -1e-300, 1.0, "chi_curve");
  detail::check_subset(J, static_cast<int>(data.cols()));
  if (data.rows() < 2) throw std::invalid_argument("chi_curve: need at least two rows");
  const int K = static_cast<int>(q_grid.size());
  ChiCurve c;
  c.subset = J;
  c.q = q_grid;
  c.bootstrap = bo.replicates;
  const Matrix F = detail::ecdf_values(data);
  const double n = static_cast<double>(data.rows());
  for (double q : q_grid) {
    c.chi.push_back(detail::chi_from_ecdf(F, J, q));
    c.flagged.push_back(n * (1.0 - q) < 1.0);
  }
  std::vector<std::vector<double>> reps(bo.replicates, std::vector<double>(K));
  parallel_for(bo.replicates, bo.threads, [&](int b) {
    Rng rng = substream(bo.seed, static_cast<std::uint64_t>(b));
    const Matrix Fb = detail::ecdf_values(detail::resample_rows(data, rng));
    for (int k = 0; k < K; ++k) reps[b][k] = detail::chi_from_ecdf(Fb, J, q_grid[k]);
  });
  const double a = 0.5 * (1.0 - bo.level);
  for (int k = 0; k < K; ++k) {
    std::vector<double> col(bo.replicates);
    for (int b = 0; b < bo.replicates; ++b) col[b] = reps[b][k];
    c.lower.push_back(bo.replicates > 0 ? sample_quantile(col, a) : c.chi[k]);
    c.upper.push_back(bo.replicates > 0 ? sample_quantile(col, 1.0 - a) : c.chi[k]);
  }
  return c;
}

struct ThresholdSelection {
  std::optional<double> q_star;
  std::optional<int> index;
  ChiCurve curve;
};

inline nlohmann::json to_json(const ThresholdSelection& s) {
  return {{"q_star", s.q_star ? nlohmann::json(*s.q_star) : nlohmann::json()}, {"curve", to_json(s.curve)}};
}

// Smallest grid q such that every later interval contains chi(q); needs at least one later grid point.
inline std::optional<int> stable_index(const ChiCurve& c) {
  const int K = static_cast<int>(c.q.size());
  for (int k = 0; k + 1 < K; ++k) {
    bool ok = true;
    const double tol = 1e-12 * std::max(1.0, std::abs(c.chi[k]));
    for (int i = k + 1; i < K && ok; ++i) ok = c.lower[i] - tol <= c.chi[k] && c.chi[k] <= c.upper[i] + tol;
    if (ok) return k;
  }
  return std::nullopt;
}

inline ThresholdSelection threshold_select(const Matrix& data, const std::vector<double>& q_grid, const BootstrapOptions& bo = {},
                                           const IndexList& J = {}) {
  ThresholdSelection s;
  s.curve = chi_curve(data, J.empty() ? all_indices(static_cast<int>(data.cols())) : J, q_grid, bo);
  s.index = stable_index(s.curve);
  if (s.index) s.q_star = q_grid[*s.index];
  return s;
}

struct McOptions {
  int nsim = 100000;
  std::uint64_t seed = 1;
  int threads = 1;
  int batches = 20;
};

namespace detail {

// Generator draws on the U scale (T draws for the T form), in independent batches.
inline std::vector<Matrix> generator_batches(const GpModel& m, const McOptions& mc) {
  const int nb = std::max(2, mc.batches);
  std::vector<Matrix> out(nb);
  parallel_for(nb, mc.threads, [&](int b) {
    Rng rng = substream(mc.seed, static_cast<std::uint64_t>(b));
    const int lo = static_cast<int>(static_cast<long long>(mc.nsim) * b / nb);
    const int hi = static_cast<int>(static_cast<long long>(mc.nsim) * (b + 1) / nb);
    Matrix G(hi - lo, m.dim());
    for (int i = 0; i < hi - lo; ++i) G.row(i) = model_generator_draw(m, rng).transpose();
    out[b] = std::move(G);
  });
  return out;
}

// Per-draw weights w_j: e^{T_j - max T} for T, e^{U_j - c} for U and R.
inline Matrix draw_weights(const Matrix& G, Form form) {
  Matrix W(G.rows(), G.cols());
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    const double c = form == Form::T ? G.row(i).maxCoeff() : 0.0;
    W.row(i) = (G.row(i).array() - c).exp();
  }
  return W;
}

inline McEstimate batch_estimate(const std::vector<double>& vals, const std::vector<double>& weights, double total) {
  McEstimate e;
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  e.value = total;
  double v = 0.0;
  for (std::size_t b = 0; b < vals.size(); ++b) v += weights[b] * (vals[b] - e.value) * (vals[b] - e.value);
  const double k = static_cast<double>(vals.size());
  e.se = std::sqrt(v / wsum * k / (k - 1.0) / k);
  return e;
}

}  // namespace detail

// Model chi for the subset J: E[min_j w_j / E w_j] with w from the generator.
inline McEstimate model_chi(const GpModel& m, const IndexList& J, const McOptions& mc = {}) {
  detail::check_subset(J, m.dim());
  if (m.form() == Form::U && !admissible_u(m.generator())) throw std::invalid_argument("model_chi: inadmissible U-form generator");
  if (J.size() == 1) return {1.0, 0.0};
  if (mc.nsim < 2) throw std::invalid_argument("model_chi: nsim too small");
  const auto batches = detail::generator_batches(m, mc);
  auto estimate = [&](const std::vector<const Matrix*>& parts) {
    Vector mean = Vector::Zero(m.dim());
    Eigen::Index n = 0;
    std::vector<Matrix> W;
    for (const Matrix* G : parts) {
      W.push_back(detail::draw_weights(*G, m.form()));
      mean += W.back().colwise().sum().transpose();
      n += G->rows();
    }
    mean /= static_cast<double>(n);
    CompensatedSum acc;
    for (const Matrix& w : W) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double mn = kInf;
        for (int j : J) mn = std::min(mn, w(i, j) / mean(j));
        acc.add(mn);
      }
    }
    return acc.value() / static_cast<double>(n);
  };
  std::vector<const Matrix*> all;
  std::vector<double> vals, weights;
  for (const Matrix& G : batches) {
    all.push_back(&G);
    vals.push_back(estimate({&G}));
    weights.push_back(static_cast<double>(G.rows()));
  }
  return detail::batch_estimate(vals, weights, estimate(all));
}

// P(X_j > 0) per component. Exact for U and R forms, Monte Carlo for T.
inline std::vector<McEstimate> model_exceedance_probabilities(const GpModel& m, const McOptions& mc = {}) {
  const int d = m.dim();
  std::vector<McEstimate> out(d);
  if (m.form() == Form::R) {
    const StructuredForm s(m.generator().lambda(), m.margins().sigma(0), m.margins().gamma(0));
    for (int j = 0; j < d; ++j) out[j] = {s.exceedance_probability(j), 0.0};
    return out;
  }
  if (m.form() == Form::U) {
    if (!admissible_u(m.generator())) throw std::invalid_argument("inadmissible U-form generator");
    const double ln = model_log_norm_const(m);
    for (int j = 0; j < d; ++j) out[j] = {std::exp(log_exp_moment(m.generator(), j) - ln), 0.0};
    return out;
  }
  const auto batches = detail::generator_batches(m, mc);
  for (int j = 0; j < d; ++j) {
    std::vector<double> vals, weights;
    CompensatedSum tot;
    Eigen::Index n = 0;
    for (const Matrix& G : batches) {
      const Matrix W = detail::draw_weights(G, Form::T);
      vals.push_back(W.col(j).mean());
      weights.push_back(static_cast<double>(G.rows()));
      tot.add(W.col(j).sum());
      n += G.rows();
    }
    out[j] = detail::batch_estimate(vals, weights, tot.value() / static_cast<double>(n));
  }
  return out;
}

struct ExceedanceProbRow {
  int component = 0;
  double empirical = 0.0;
  double empirical_se = 0.0;
  double model = 0.0;
  double model_se = 0.0;
};

inline std::vector<ExceedanceProbRow> exceedance_prob_check(const GpModel& m, const ExceedanceSet& data, const McOptions& mc = {}) {
  if (data.dim() != m.dim()) throw std::invalid_argument("exceedance_prob_check: dimension mismatch");
  if (data.size() < 1) throw DataError("exceedance_prob_check: no exceedances");
  const auto mp = model_exceedance_probabilities(m, mc);
  const double n = data.size();
  std::vector<ExceedanceProbRow> out;
  for (int j = 0; j < m.dim(); ++j) {
    const double p = (data.rows().col(j).array() > 0.0).count() / n;
    out.push_back({j + 1, p, std::sqrt(p * (1.0 - p) / n), mp[j].value, mp[j].se});
  }
  return out;
}

inline nlohmann::json to_json(const ExceedanceProbRow& r) {
  return {{"component", r.component}, {"empirical", r.empirical}, {"empirical_se", r.empirical_se}, {"model", r.model}, {"model_se", r.model_se}};
}

struct StabilityCurve {
  IndexList subset;
  std::vector<double> t;
  std::vector<double> ratio;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<char> omitted;  // empty denominator
  int bootstrap = 0;
};

inline nlohmann::json to_json(const StabilityCurve& c) {
  nlohmann::json J = nlohmann::json::array();
  for (int j : c.subset) J.push_back(j + 1);
  std::vector<bool> om(c.omitted.begin(), c.omitted.end());
  return {{"subset", J}, {"t", c.t}, {"ratio", c.ratio}, {"lower", c.lower}, {"upper", c.upper}, {"omitted", om}};
}

inline void write_csv(std::ostream& os, const StabilityCurve& c) {
  os << "t,ratio,lower,upper,omitted\n";
  for (std::size_t k = 0; k < c.t.size(); ++k) {
    os << format_number(c.t[k]) << ',' << format_number(c.ratio[k]) << ',' << format_number(c.lower[k]) << ','
       << format_number(c.upper[k]) << ',' << (c.omitted[k] ? 1 : 0) << '\n';
  }
}

inline double stability_shift(double t, double sigma, double gamma) {
  return gamma == 0.0 ? sigma * std::log(t) : sigma * (std::pow(t, gamma) - 1.0) / gamma;
}

namespace detail {

inline std::optional<double> stability_point(const Matrix& x, const IndexList& J, const Vector& w, double t) {
  Eigen::Index num = 0, den = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    bool a = true, b = true;
    for (int j : J) {
      a = a && x(i, j) > 0.0;
      b = b && x(i, j) > w(j);
    }
    num += a;
    den += b;
  }
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / (t * static_cast<double>(den));
}

}  // namespace detail

// Ratio of the fraction of excesses in A = {x_j > 0, j in J} to t times the fraction of (x - w_t)/t^gamma in A.
inline StabilityCurve stability_ratio(const ExceedanceSet& data, const Vector& sigma, const Vector& gamma, const IndexList& J,
                                      const std::vector<double>& t_grid, const BootstrapOptions& bo = {}) {
  const int d = data.dim();
  if (sigma.size() != d || gamma.size() != d) throw std::invalid_argument("stability_ratio: dimension mismatch");
  detail::check_subset(J, d);
  for (double t : t_grid)
    if (!(t >= 1.0) || !std::isfinite(t)) throw std::invalid_argument("stability_ratio: t must be >= 1");
  if (data.size() < 1) throw DataError("stability_ratio: no exceedances");
  const Matrix& x = data.rows();
  StabilityCurve c;
  c.subset = J;
  c.t = t_grid;
  c.bootstrap = bo.replicates;
  const int K = static_cast<int>(t_grid.size());
  std::vector<Vector> shifts(K, Vector(d));
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d; ++j) shifts[k](j) = stability_shift(t_grid[k], sigma(j), gamma(j));
  std::vector<std::vector<double>> reps(K);
  for (int k = 0; k < K; ++k) {
    const auto r = detail::stability_point(x, J, shifts[k], t_grid[k]);
    c.ratio.push_back(r ? *r : std::numeric_limits<double>::quiet_NaN());
    c.omitted.push_back(!r);
  }
  std::vector<std::vector<double>> rb(bo.replicates, std::vector<double>(K, std::numeric_limits<double>::quiet_NaN()));
  parallel_for(bo.replicates, bo.threads, [&](int b) {
    Rng rng = substream(bo.seed, static_cast<std::uint64_t>(b));
    const Matrix xb = detail::resample_rows(x, rng);
    for (int k = 0; k < K; ++k) {
      const auto r = detail::stability_point(xb, J, shifts[k], t_grid[k]);
      if (r) rb[b][k] = *r;
    }
  });
  const double a = 0.5 * (1.0 - bo.level);
  for (int k = 0; k < K; ++k) {
    std::vector<double> col;
    for (int b = 0; b < bo.replicates; ++b)
      if (!std::isnan(rb[b][k])) col.push_back(rb[b][k]);
    c.lower.push_back(col.empty() ? c.ratio[k] : sample_quantile(col, a));
    c.upper.push_back(col.empty() ? c.ratio[k] : sample_quantile(col, 1.0 - a));
  }
  return c;
}

struct SumStabilityReport {
  Vector weights;
  int n_positive = 0;
  GpFit univariate;
  double implied_sigma = 0.0;
  std::optional<double> implied_sigma_se;
  double gamma = 0.0;
  std::optional<double> gamma_se;
  double implied_loglik = kNegInf;
  std::vector<double> sums;
};

inline nlohmann::json to_json(const SumStabilityReport& r) {
  nlohmann::json j = {{"weights", vector_to_json(r.weights)},
                      {"n_positive", r.n_positive},
                      {"univariate", to_json(r.univariate)},
                      {"implied", {{"sigma", r.implied_sigma}, {"gamma", r.gamma}, {"loglik", r.implied_loglik}}}};
  j["implied"]["sigma_se"] = r.implied_sigma_se ? nlohmann::json(*r.implied_sigma_se) : nlohmann::json();
  j["implied"]["gamma_se"] = r.gamma_se ? nlohmann::json(*r.gamma_se) : nlohmann::json();
  return j;
}

inline std::vector<double> positive_weighted_sums(const ExceedanceSet& data, const Vector& a) {
  if (a.size() != data.dim()) throw std::invalid_argument("weights and data dimensions differ");
  for (Eigen::Index j = 0; j < a.size(); ++j)
    if (!(a(j) > 0.0)) throw std::invalid_argument("weights must be positive");
  std::vector<double> s;
  for (int i = 0; i < data.size(); ++i) {
    const double v = data.rows().row(i).dot(a);
    if (v > 0.0) s.push_back(v);
  }
  return s;
}

inline SumStabilityReport sum_stability_check(const ExceedanceSet& data, const Vector& a, const MarginalParams& mg) {
  if (!mg.common_gamma()) throw std::invalid_argument("sum_stability_check: the model must have a shared gamma");
  SumStabilityReport r;
  r.weights = a;
  r.sums = positive_weighted_sums(data, a);
  r.n_positive = static_cast<int>(r.sums.size());
  if (r.n_positive < 10) throw DataError("sum_stability_check: too few positive weighted sums (" + std::to_string(r.n_positive) + ")");
  r.univariate = fit_gp(r.sums);
  r.implied_sigma = a.dot(mg.sigma());
  r.gamma = mg.gamma(0);
  r.implied_loglik = gp_log_likelihood(r.sums, r.implied_sigma, r.gamma);
  return r;
}

// With a FitResult the implied scale also carries a delta-method SE.
inline SumStabilityReport sum_stability_check(const ExceedanceSet& data, const Vector& a, const FitResult& fit) {
  SumStabilityReport r = sum_stability_check(data, a, fit.model.margins());
  if (fit.cov) {
    Vector g = Vector::Zero(static_cast<Eigen::Index>(fit.names.size()));
    std::optional<int> gi;
    for (std::size_t k = 0; k < fit.names.size(); ++k) {
      const std::string& nm = fit.names[k];
      if (nm == "sigma") g(k) = a.sum();
      if (nm.rfind("sigma", 0) == 0 && nm.size() > 5) g(k) = a(std::stoi(nm.substr(5)) - 1);
      if (nm == "gamma") gi = static_cast<int>(k);
    }
    r.implied_sigma_se = std::sqrt(std::max(0.0, g.dot(*fit.cov * g)));
    if (gi) r.gamma_se = std::sqrt(std::max(0.0, (*fit.cov)(*gi, *gi)));
  }
  return r;
}

struct QqPoint {
  double sample = 0.0;
  double model = 0.0;
};

inline double gp_quantile(double p, double sigma, double gamma) {
  return gamma == 0.0 ? -sigma * std::log1p(-p) : sigma * (std::pow(1.0 - p, -gamma) - 1.0) / gamma;
}

// Ordered sample against GP quantiles at i/(n+1).
inline std::vector<QqPoint> qq_points(std::vector<double> sample, double sigma, double gamma) {
  if (sample.empty()) throw std::invalid_argument("qq_points: empty sample");
  if (!(sigma > 0.0)) throw std::invalid_argument("qq_points: sigma must be positive");
  std::sort(sample.begin(), sample.end());
  if (sample.front() < 0.0) throw DataError("qq_points: sample has negative excesses");
  if (gamma < 0.0 && sample.back() > -sigma / gamma) throw DataError("qq_points: sample exceeds the upper endpoint -sigma/gamma");
  const double n = static_cast<double>(sample.size());
  std::vector<QqPoint> out;
  for (std::size_t i = 0; i < sample.size(); ++i) out.push_back({sample[i], gp_quantile((i + 1.0) / (n + 1.0), sigma, gamma)});
  return out;
}

}  // namespace mgpd
