#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include "mgpd/core.hpp"
#include "mgpd/diagnostics.hpp"
#include "mgpd/fit.hpp"
#include "mgpd/ingest.hpp"
#include "mgpd/model.hpp"
#include "mgpd/optimize.hpp"
#include "mgpd/parallel.hpp"
#include "mgpd/simulate.hpp"

namespace mgpd {

// Portfolio of weights a on components with thresholds u and GP margins (sigma, shared gamma).
struct Portfolio {
  Vector weights;
  Vector u;
  Vector sigma;
  double gamma = 0.0;

  void validate() const {
    const auto d = weights.size();
    if (d == 0 || u.size() != d || sigma.size() != d) throw std::invalid_argument("Portfolio: dimension mismatch");
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!(weights(j) > 0.0)) throw std::invalid_argument("Portfolio: weights must be positive");
      if (!(sigma(j) > 0.0)) throw std::invalid_argument("Portfolio: sigma must be positive");
    }
  }
  double base() const { return weights.dot(u); }
  double scale() const { return weights.dot(sigma); }
};

inline Portfolio make_portfolio(const Vector& a, const Vector& u, const MarginalParams& mg) {
  if (!mg.common_gamma()) throw std::invalid_argument("portfolio risk needs a shared gamma");
  Portfolio p{a, u, mg.sigma(), mg.gamma(0)};
  p.validate();
  return p;
}

inline double value_at_risk(const Portfolio& pf, double phi, double p) {
  pf.validate();
  if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("value_at_risk: phi must lie in (0, 1]");
  if (!(p > 0.0)) throw std::invalid_argument("value_at_risk: p must be positive");
  if (p > phi) throw std::invalid_argument("value_at_risk: p must not exceed phi");
  const double r = phi / p;
  if (pf.gamma == 0.0) return pf.base() + pf.scale() * std::log(r);
  return pf.base() + pf.scale() / pf.gamma * std::expm1(pf.gamma * std::log(r));
}

inline double expected_shortfall(const Portfolio& pf, double phi, double p) {
  if (!(pf.gamma < 1.0)) throw std::invalid_argument("expected_shortfall: undefined for gamma >= 1");
  const double v = value_at_risk(pf, phi, p);
  return v + (pf.scale() + pf.gamma * (v - pf.base())) / (1.0 - pf.gamma);
}

struct Proportion {
  double value = 0.0;
  double se = 0.0;
  long long count = 0;
  long long n = 0;
};

inline nlohmann::json to_json(const Proportion& p) { return {{"value", p.value}, {"se", p.se}, {"count", p.count}, {"n", p.n}}; }

inline Proportion make_proportion(long long k, long long n) {
  Proportion p;
  p.count = k;
  p.n = n;
  p.value = n > 0 ? static_cast<double>(k) / static_cast<double>(n) : 0.0;
  p.se = n > 0 ? std::sqrt(p.value * (1.0 - p.value) / static_cast<double>(n)) : 0.0;
  return p;
}

// Fraction of rows with sum_j a_j (y_j - u_j) > 0.
inline Proportion phi_binomial(const Matrix& data, const Vector& a, const Vector& u) {
  if (data.rows() < 1) throw std::invalid_argument("phi_binomial: empty data");
  if (data.cols() != a.size() || a.size() != u.size()) throw std::invalid_argument("phi_binomial: dimension mismatch");
  long long k = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) k += (data.row(i).transpose() - u).dot(a) > 0.0;
  return make_proportion(k, data.rows());
}

// Fraction of rows not below u.
inline Proportion exceedance_fraction(const Matrix& data, const Vector& u) {
  if (data.rows() < 1) throw std::invalid_argument("exceedance_fraction: empty data");
  long long k = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) k += (data.row(i).transpose() - u).maxCoeff() > 0.0;
  return make_proportion(k, data.rows());
}

inline Proportion p_theta_from_sample(const Matrix& x, const Vector& a) {
  if (x.cols() != a.size()) throw std::invalid_argument("p_theta: dimension mismatch");
  long long k = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) k += x.row(i).dot(a) > 0.0;
  return make_proportion(k, x.rows());
}

// Monte Carlo P(sum_j a_j X_j > 0) over GP draws.
inline Proportion p_theta(const GpModel& m, const Vector& a, int nsim, std::uint64_t seed, int threads = 1) {
  if (nsim < 1) throw std::invalid_argument("p_theta: nsim must be positive");
  const SampleBatch s = simulate(m, nsim, seed, threads);
  if (!s.x.allFinite()) throw NumericalError("p_theta: sampler produced non-finite draws");
  return p_theta_from_sample(s.x, a);
}

struct PhiEstimate {
  double value = 0.0;
  double se = 0.0;
  Proportion p_theta;
  Proportion exceed;
};

// phi = p(theta) * (fraction of rows not below u), with independent-factor SE.
inline PhiEstimate combine_phi(const Proportion& pt, const Proportion& ex) {
  PhiEstimate e;
  e.p_theta = pt;
  e.exceed = ex;
  e.value = pt.value * ex.value;
  e.se = std::sqrt(std::pow(pt.value * ex.se, 2) + std::pow(ex.value * pt.se, 2));
  return e;
}

struct RiskEstimate {
  double value = 0.0;
  std::optional<double> se;
  std::optional<double> lower, upper;
};

inline nlohmann::json to_json(const RiskEstimate& r) {
  nlohmann::json j = {{"value", r.value}};
  j["se"] = r.se ? nlohmann::json(*r.se) : nlohmann::json();
  j["lower"] = r.lower ? nlohmann::json(*r.lower) : nlohmann::json();
  j["upper"] = r.upper ? nlohmann::json(*r.upper) : nlohmann::json();
  return j;
}

struct RiskRow {
  double p = 0.0;
  RiskEstimate var;
  RiskEstimate es;
};

inline nlohmann::json to_json(const RiskRow& r) { return {{"p", r.p}, {"var", to_json(r.var)}, {"es", to_json(r.es)}}; }

namespace detail {

// Margins of a fit as a function of its natural estimates.
inline MarginalParams margins_from_estimates(const FitResult& fit, const Vector& est) {
  Vector sigma = fit.model.margins().sigma();
  Vector gamma = fit.model.margins().gamma();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const std::string& nm = fit.names[k];
    if (nm == "sigma") sigma.setConstant(est(k));
    else if (nm == "gamma") gamma.setConstant(est(k));
    else if (nm.rfind("sigma", 0) == 0) sigma(std::stoi(nm.substr(5)) - 1) = est(k);
    else if (nm.rfind("gamma", 0) == 0) gamma(std::stoi(nm.substr(5)) - 1) = est(k);
  }
  return {sigma, gamma};
}

}  // namespace detail

// VaR and ES with delta-method intervals from the fit covariance, phi treated as independent.
inline std::vector<RiskRow> risk_table(const FitResult& fit, const Vector& a, const Vector& u, double phi, std::optional<double> phi_se,
                                       const std::vector<double>& p_grid, double level = 0.95) {
  const Portfolio pf = make_portfolio(a, u, fit.model.margins());
  const double z = std::sqrt(2.0) * boost::math::erfc_inv(1.0 - level);
  const int K = static_cast<int>(fit.names.size());
  std::vector<RiskRow> rows;
  for (double p : p_grid) {
    RiskRow r;
    r.p = p;
    r.var.value = value_at_risk(pf, phi, p);
    const bool es_ok = pf.gamma < 1.0;
    if (es_ok) r.es.value = expected_shortfall(pf, phi, p);
    else r.es.value = kInf;
    if (fit.cov && phi_se) {
      Vector x(K + 1);
      x.head(K) = fit.estimates;
      x(K) = phi;
      auto f = [&](const Vector& th) {
        const MarginalParams mg = detail::margins_from_estimates(fit, th.head(K));
        const Portfolio q = make_portfolio(a, u, mg);
        Vector out(2);
        out(0) = value_at_risk(q, th(K), p);
        out(1) = q.gamma < 1.0 ? expected_shortfall(q, th(K), p) : kInf;
        return out;
      };
      const Matrix J = numerical_jacobian(f, x, 1e-6);
      Matrix C = Matrix::Zero(K + 1, K + 1);
      C.topLeftCorner(K, K) = *fit.cov;
      C(K, K) = (*phi_se) * (*phi_se);
      const Matrix V = J * C * J.transpose();
      r.var.se = std::sqrt(std::max(0.0, V(0, 0)));
      r.var.lower = r.var.value - z * *r.var.se;
      r.var.upper = r.var.value + z * *r.var.se;
      if (es_ok && std::isfinite(V(1, 1))) {
        r.es.se = std::sqrt(std::max(0.0, V(1, 1)));
        r.es.lower = r.es.value - z * *r.es.se;
        r.es.upper = r.es.value + z * *r.es.se;
      }
    }
    rows.push_back(r);
  }
  return rows;
}

inline void write_csv(std::ostream& os, const std::vector<RiskRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  os << "p,var,var_se,var_lower,var_upper,es,es_se,es_lower,es_upper\n";
  for (const auto& r : rows) {
    os << format_number(r.p) << ',' << format_number(r.var.value) << ',' << opt(r.var.se) << ',' << opt(r.var.lower) << ','
       << opt(r.var.upper) << ',' << format_number(r.es.value) << ',' << opt(r.es.se) << ',' << opt(r.es.lower) << ','
       << opt(r.es.upper) << '\n';
  }
}

struct WeightGridSpec {
  int fixed = 0;          // component with a fixed weight
  double fixed_weight = 10.0;
  int remainder = 3;      // component taking the rest of the budget
  double budget = 100.0;
  double step = 1.0;
  double min_weight = 1.0;
  double p = 0.001;
};

struct WeightGridCell {
  Vector weights;
  double p_theta = 0.0;
  double phi = 0.0;
  double var = 0.0;
  double es = 0.0;
};

// VaR and ES over a grid of two free weights; every cell reuses the same GP draws.
inline std::vector<WeightGridCell> weight_grid(const GpModel& m, const Vector& u, const Proportion& exceed, const Matrix& draws,
                                               const WeightGridSpec& g) {
  const int d = m.dim();
  if (d < 3) throw std::invalid_argument("weight_grid: needs at least three components");
  if (g.fixed == g.remainder || g.fixed < 0 || g.fixed >= d || g.remainder < 0 || g.remainder >= d)
    throw std::invalid_argument("weight_grid: invalid fixed/remainder components");
  if (draws.cols() != d) throw std::invalid_argument("weight_grid: draws have the wrong dimension");
  IndexList free;
  for (int j = 0; j < d; ++j)
    if (j != g.fixed && j != g.remainder) free.push_back(j);
  if (free.size() != 2) throw std::invalid_argument("weight_grid: exactly two free components are supported");
  const double avail = g.budget - g.fixed_weight;
  std::vector<WeightGridCell> out;
  for (double a1 = g.min_weight; a1 <= avail - 2.0 * g.min_weight + 1e-9; a1 += g.step) {
    for (double a2 = g.min_weight; a1 + a2 <= avail - g.min_weight + 1e-9; a2 += g.step) {
      WeightGridCell c;
      c.weights = Vector::Zero(d);
      c.weights(g.fixed) = g.fixed_weight;
      c.weights(free[0]) = a1;
      c.weights(free[1]) = a2;
      c.weights(g.remainder) = avail - a1 - a2;
      c.p_theta = p_theta_from_sample(draws, c.weights).value;
      c.phi = c.p_theta * exceed.value;
      const Portfolio pf = make_portfolio(c.weights, u, m.margins());
      if (c.phi >= g.p) {
        c.var = value_at_risk(pf, c.phi, g.p);
        c.es = pf.gamma < 1.0 ? expected_shortfall(pf, c.phi, g.p) : kInf;
      } else {
        c.var = c.es = std::numeric_limits<double>::quiet_NaN();
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

inline void write_csv(std::ostream& os, const std::vector<WeightGridCell>& cells) {
  if (cells.empty()) return;
  const auto d = cells.front().weights.size();
  for (Eigen::Index j = 0; j < d; ++j) os << 'a' << j + 1 << ',';
  os << "p_theta,phi,var,es\n";
  for (const auto& c : cells) {
    for (Eigen::Index j = 0; j < d; ++j) os << format_number(c.weights(j)) << ',';
    os << format_number(c.p_theta) << ',' << format_number(c.phi) << ',' << format_number(c.var) << ',' << format_number(c.es) << '\n';
  }
}

struct EventRate {
  double mu = 0.0;
  double mu_se = 0.0;
  double exceed_prob = 0.0;  // P(X not below y - u)
  double p_exactly_one = 0.0;
  double p_at_least_one = 0.0;
  int nsim = 0;
};

inline nlohmann::json to_json(const EventRate& e) {
  return {{"mu", e.mu}, {"mu_se", e.mu_se}, {"exceed_prob", e.exceed_prob}, {"p_exactly_one", e.p_exactly_one},
          {"p_at_least_one", e.p_at_least_one}, {"nsim", e.nsim}};
}

// Poisson rate zeta * P(X not below y - u), with P by Monte Carlo over generator draws.
inline EventRate event_rate(const GpModel& m, const Vector& u, const Vector& y, double zeta, const McOptions& mc = {}) {
  const int d = m.dim();
  if (u.size() != d || y.size() != d) throw std::invalid_argument("event_rate: dimension mismatch");
  if (!(zeta > 0.0)) throw std::invalid_argument("event_rate: zeta must be positive");
  if (m.form() == Form::U && !admissible_u(m.generator())) throw std::invalid_argument("event_rate: inadmissible U-form generator");
  Vector z(d);
  for (int j = 0; j < d; ++j) z(j) = standard_from_observed(y(j) - u(j), m.margins().sigma(j), m.margins().gamma(j));
  const auto batches = detail::generator_batches(m, mc);
  // T: min(1, max_j e^{T_j - max T - z_j}).
  // U and R: E[min(e^{max U}, e^{max(U - z)})] / E[e^{max U}], both means from the same draws.
  const bool ratio = m.form() != Form::T;
  std::vector<double> vals, weights;
  CompensatedSum tot_num, tot_den;
  Eigen::Index n = 0;
  for (const Matrix& G : batches) {
    CompensatedSum num, den;
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
      const double mx = G.row(i).maxCoeff();
      const double e = (G.row(i).transpose() - z).maxCoeff();
      if (ratio) {
        num.add(std::exp(std::min(mx, e)));
        den.add(std::exp(mx));
      } else {
        num.add(std::exp(std::min(0.0, e - mx)));
        den.add(1.0);
      }
    }
    vals.push_back(num.value() / den.value());
    weights.push_back(static_cast<double>(G.rows()));
    tot_num.add(num.value());
    tot_den.add(den.value());
    n += G.rows();
  }
  const McEstimate pr = detail::batch_estimate(vals, weights, tot_num.value() / tot_den.value());
  EventRate r;
  r.exceed_prob = pr.value;
  r.mu = zeta * pr.value;
  r.mu_se = zeta * pr.se;
  r.p_exactly_one = r.mu * std::exp(-r.mu);
  r.p_at_least_one = -std::expm1(-r.mu);
  r.nsim = static_cast<int>(n);
  return r;
}

}  // namespace mgpd
