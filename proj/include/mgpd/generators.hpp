#pragma once

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "mgpd/core.hpp"
#include "mgpd/special.hpp"

namespace mgpd {

using Rng = std::mt19937_64;

enum class Family { IndepGumbel, IndepReverseGumbel, IndepReverseExp, IndepLogGamma, Gaussian, StructuredExp };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::IndepGumbel: return "gumbel";
    case Family::IndepReverseGumbel: return "reverse_gumbel";
    case Family::IndepReverseExp: return "reverse_exp";
    case Family::IndepLogGamma: return "log_gamma";
    case Family::Gaussian: return "gaussian";
    case Family::StructuredExp: return "structured";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "gumbel") return Family::IndepGumbel;
  if (s == "reverse_gumbel") return Family::IndepReverseGumbel;
  if (s == "reverse_exp") return Family::IndepReverseExp;
  if (s == "log_gamma") return Family::IndepLogGamma;
  if (s == "gaussian") return Family::Gaussian;
  if (s == "structured") return Family::StructuredExp;
  throw std::invalid_argument("unknown generator family '" + s + "'");
}

class GeneratorSpec {
 public:
  GeneratorSpec() = default;

  static GeneratorSpec indep_gumbel(Vector alpha, Vector beta) {
    return location_family(Family::IndepGumbel, std::move(alpha), std::move(beta));
  }
  static GeneratorSpec indep_reverse_gumbel(Vector alpha, Vector beta) {
    return location_family(Family::IndepReverseGumbel, std::move(alpha), std::move(beta));
  }
  static GeneratorSpec indep_reverse_exp(Vector alpha, Vector beta) {
    return location_family(Family::IndepReverseExp, std::move(alpha), std::move(beta));
  }
  static GeneratorSpec indep_log_gamma(Vector alpha) {
    GeneratorSpec g;
    g.family_ = Family::IndepLogGamma;
    require_positive(alpha, "alpha");
    g.beta_ = Vector::Zero(alpha.size());
    g.alpha_ = std::move(alpha);
    return g;
  }
  static GeneratorSpec gaussian(Vector beta, Matrix cov) {
    GeneratorSpec g;
    g.family_ = Family::Gaussian;
    require_finite(beta, "beta");
    if (cov.rows() != beta.size() || cov.cols() != beta.size() || beta.size() < 1) {
      throw std::invalid_argument("gaussian generator: covariance dimension mismatch");
    }
    if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("gaussian generator: covariance must be finite and symmetric");
    }
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian generator: covariance not positive definite");
    g.chol_ = llt.matrixL();
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      if (!(g.chol_(i, i) > 0.0)) throw std::invalid_argument("gaussian generator: covariance not positive definite");
    }
    g.log_det_ = 2.0 * g.chol_.diagonal().array().log().sum();
    g.beta_ = std::move(beta);
    g.cov_ = std::move(cov);
    return g;
  }
  static GeneratorSpec structured(Vector lambda) {
    GeneratorSpec g;
    g.family_ = Family::StructuredExp;
    require_positive(lambda, "lambda");
    g.lambda_ = std::move(lambda);
    return g;
  }

  Family family() const { return family_; }
  int dim() const {
    switch (family_) {
      case Family::Gaussian: return static_cast<int>(beta_.size());
      case Family::StructuredExp: return static_cast<int>(lambda_.size());
      default: return static_cast<int>(alpha_.size());
    }
  }
  const Vector& alpha() const { return alpha_; }
  const Vector& beta() const { return beta_; }
  const Vector& lambda() const { return lambda_; }
  const Matrix& covariance() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  double log_det() const { return log_det_; }

  bool independent() const {
    return family_ == Family::IndepGumbel || family_ == Family::IndepReverseGumbel ||
           family_ == Family::IndepReverseExp || family_ == Family::IndepLogGamma;
  }
  bool has_location() const {
    return family_ == Family::IndepGumbel || family_ == Family::IndepReverseGumbel ||
           family_ == Family::IndepReverseExp || family_ == Family::Gaussian;
  }
  bool equal_alpha() const { return alpha_.size() > 0 && (alpha_.array() == alpha_(0)).all(); }
  bool common_beta() const { return beta_.size() > 0 && (beta_.array() == beta_(0)).all(); }

  // Generator of the sub-vector V_J (not defined for the structured family).
  GeneratorSpec marginal(const IndexList& J) const {
    switch (family_) {
      case Family::IndepGumbel: return indep_gumbel(take(alpha_, J), take(beta_, J));
      case Family::IndepReverseGumbel: return indep_reverse_gumbel(take(alpha_, J), take(beta_, J));
      case Family::IndepReverseExp: return indep_reverse_exp(take(alpha_, J), take(beta_, J));
      case Family::IndepLogGamma: return indep_log_gamma(take(alpha_, J));
      case Family::Gaussian: return gaussian(take(beta_, J), take(cov_, J, J));
      case Family::StructuredExp: break;
    }
    throw std::invalid_argument("marginal: not available for the structured family");
  }

 private:
  static void require_positive(const Vector& v, const char* what) {
    if (v.size() < 1) throw std::invalid_argument(std::string(what) + " must be non-empty");
    require_finite(v, what);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!(v(i) > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
  }
  static GeneratorSpec location_family(Family f, Vector alpha, Vector beta) {
    GeneratorSpec g;
    g.family_ = f;
    require_positive(alpha, "alpha");
    require_finite(beta, "beta");
    if (alpha.size() != beta.size()) throw std::invalid_argument("alpha and beta must have the same length");
    g.alpha_ = std::move(alpha);
    g.beta_ = std::move(beta);
    return g;
  }

  Family family_ = Family::IndepGumbel;
  Vector alpha_;
  Vector beta_;
  Vector lambda_;
  Matrix cov_;
  Matrix chol_;
  double log_det_ = 0.0;
};

inline void require_independent(const GeneratorSpec& g) {
  if (!g.independent()) {
    throw std::invalid_argument("component distribution functions are only defined for independent-component families");
  }
}

inline double gen_component_log_pdf(const GeneratorSpec& g, int j, double v) {
  require_independent(g);
  const double a = g.alpha()(j);
  switch (g.family()) {
    case Family::IndepGumbel: {
      const double z = a * (v - g.beta()(j));
      return std::log(a) - z - std::exp(-z);
    }
    case Family::IndepReverseGumbel: {
      const double z = a * (v - g.beta()(j));
      return std::log(a) + z - std::exp(z);
    }
    case Family::IndepReverseExp: {
      const double z = v + g.beta()(j);
      if (z >= 0.0) return kNegInf;
      return std::log(a) + a * z;
    }
    case Family::IndepLogGamma:
      return a * v - std::exp(v) - lgamma_fn(a);
    default: break;
  }
  return kNegInf;
}

inline double gen_component_log_cdf(const GeneratorSpec& g, int j, double v) {
  require_independent(g);
  const double a = g.alpha()(j);
  if (v == kNegInf) return kNegInf;
  if (v == kInf) return 0.0;
  switch (g.family()) {
    case Family::IndepGumbel:
      return -std::exp(-a * (v - g.beta()(j)));
    case Family::IndepReverseGumbel: {
      const double z = a * (v - g.beta()(j));
      if (z > 40.0) return 0.0;
      return log1mexp(-std::exp(z));
    }
    case Family::IndepReverseExp:
      return a * std::min(0.0, v + g.beta()(j));
    case Family::IndepLogGamma: {
      const double x = std::exp(v);
      if (x < 1e-12 * (a + 1.0)) return a * v - lgamma_fn(a + 1.0) + std::log1p(-a * x / (a + 1.0));
      if (x > a) return std::log1p(-boost::math::gamma_q(a, x));
      return std::log(boost::math::gamma_p(a, x));
    }
    default: break;
  }
  return kNegInf;
}

inline double gen_component_cdf(const GeneratorSpec& g, int j, double v) { return std::exp(gen_component_log_cdf(g, j, v)); }

inline double gen_log_density(const GeneratorSpec& g, const Vector& v) {
  if (v.size() != g.dim()) throw std::invalid_argument("gen_log_density: dimension mismatch");
  const int d = g.dim();
  if (g.independent()) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double lp = gen_component_log_pdf(g, j, v(j));
      if (lp == kNegInf) return kNegInf;
      s += lp;
    }
    return s;
  }
  if (g.family() == Family::Gaussian) {
    const Vector z = g.chol().triangularView<Eigen::Lower>().solve(v - g.beta());
    return -0.5 * d * kLogTwoPi - 0.5 * g.log_det() - 0.5 * z.squaredNorm();
  }
  // structured: r_j = log of cumulative sums
  double s = 0.0, prev = 0.0, prev_r = kNegInf;
  for (int j = 0; j < d; ++j) {
    if (!(v(j) > prev_r)) return kNegInf;
    const double e = std::exp(v(j));
    const double inc = e - prev;
    if (!(inc > 0.0)) return kNegInf;
    const double lam = g.lambda()(j);
    s += std::log(lam) - lam * inc + v(j);
    prev = e;
    prev_r = v(j);
  }
  return s;
}

// E[e^{V_j}]; +inf when the moment does not exist.
inline double exp_moment(const GeneratorSpec& g, int j) {
  switch (g.family()) {
    case Family::IndepGumbel: {
      const double a = g.alpha()(j);
      if (a <= 1.0) return kInf;
      return std::exp(g.beta()(j)) * boost::math::tgamma(1.0 - 1.0 / a);
    }
    case Family::IndepReverseGumbel:
      return std::exp(g.beta()(j)) * boost::math::tgamma(1.0 + 1.0 / g.alpha()(j));
    case Family::IndepReverseExp: {
      const double a = g.alpha()(j);
      return std::exp(-g.beta()(j)) * a / (a + 1.0);
    }
    case Family::IndepLogGamma:
      return g.alpha()(j);
    case Family::Gaussian:
      return std::exp(g.beta()(j) + 0.5 * g.covariance()(j, j));
    case Family::StructuredExp: {
      double s = 0.0;
      for (int i = 0; i <= j; ++i) s += 1.0 / g.lambda()(i);
      return s;
    }
  }
  return kInf;
}

inline double log_exp_moment(const GeneratorSpec& g, int j) {
  switch (g.family()) {
    case Family::IndepGumbel: {
      const double a = g.alpha()(j);
      if (a <= 1.0) return kInf;
      return g.beta()(j) + lgamma_fn(1.0 - 1.0 / a);
    }
    case Family::IndepReverseGumbel:
      return g.beta()(j) + lgamma_fn(1.0 + 1.0 / g.alpha()(j));
    case Family::Gaussian:
      return g.beta()(j) + 0.5 * g.covariance()(j, j);
    default:
      return std::log(exp_moment(g, j));
  }
}

inline bool admissible_u(const GeneratorSpec& g) {
  for (int j = 0; j < g.dim(); ++j)
    if (!std::isfinite(exp_moment(g, j))) return false;
  return true;
}

namespace detail {

inline double std_exponential(Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double u;
  do {
    u = U(rng);
  } while (u <= 0.0);
  return -std::log(u);
}

inline double log_gamma_variate(double a, Rng& rng) {
  if (a >= 1.0) {
    std::gamma_distribution<double> G(a, 1.0);
    return std::log(G(rng));
  }
  std::gamma_distribution<double> G(a + 1.0, 1.0);
  return std::log(G(rng)) - std_exponential(rng) / a;
}

}  // namespace detail

inline Vector gen_sample(const GeneratorSpec& g, Rng& rng) {
  const int d = g.dim();
  Vector v(d);
  switch (g.family()) {
    case Family::IndepGumbel:
      for (int j = 0; j < d; ++j) v(j) = g.beta()(j) - std::log(detail::std_exponential(rng)) / g.alpha()(j);
      break;
    case Family::IndepReverseGumbel:
      for (int j = 0; j < d; ++j) v(j) = g.beta()(j) + std::log(detail::std_exponential(rng)) / g.alpha()(j);
      break;
    case Family::IndepReverseExp:
      for (int j = 0; j < d; ++j) v(j) = -g.beta()(j) - detail::std_exponential(rng) / g.alpha()(j);
      break;
    case Family::IndepLogGamma:
      for (int j = 0; j < d; ++j) v(j) = detail::log_gamma_variate(g.alpha()(j), rng);
      break;
    case Family::Gaussian: {
      std::normal_distribution<double> N(0.0, 1.0);
      Vector z(d);
      for (int j = 0; j < d; ++j) z(j) = N(rng);
      v = g.beta() + g.chol() * z;
      break;
    }
    case Family::StructuredExp: {
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        s += detail::std_exponential(rng) / g.lambda()(j);
        v(j) = std::log(s);
      }
      break;
    }
  }
  return v;
}

// Cumulative sums S_j (not log-transformed) for the structured family.
inline Vector structured_cumsum_sample(const Vector& lambda, Rng& rng) {
  Vector s(lambda.size());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    acc += detail::std_exponential(rng) / lambda(j);
    s(j) = acc;
  }
  return s;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("expected a JSON array of numbers");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_to_json(m.row(i).transpose()));
  return a;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("expected a non-empty JSON array of rows");
  Matrix m(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != static_cast<std::size_t>(m.cols())) throw std::invalid_argument("ragged matrix in JSON");
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const GeneratorSpec& g) {
  nlohmann::json params;
  switch (g.family()) {
    case Family::IndepGumbel:
    case Family::IndepReverseGumbel:
    case Family::IndepReverseExp:
      params["alpha"] = vector_to_json(g.alpha());
      params["beta"] = vector_to_json(g.beta());
      break;
    case Family::IndepLogGamma:
      params["alpha"] = vector_to_json(g.alpha());
      break;
    case Family::Gaussian:
      params["beta"] = vector_to_json(g.beta());
      params["sigma"] = matrix_to_json(g.covariance());
      break;
    case Family::StructuredExp:
      params["lambda"] = vector_to_json(g.lambda());
      break;
  }
  return {{"family", to_string(g.family())}, {"params", params}};
}

inline GeneratorSpec generator_from_json(const nlohmann::json& j) {
  const Family f = family_from_string(j.at("family").get<std::string>());
  const auto& p = j.at("params");
  switch (f) {
    case Family::IndepGumbel: return GeneratorSpec::indep_gumbel(vector_from_json(p.at("alpha")), vector_from_json(p.at("beta")));
    case Family::IndepReverseGumbel:
      return GeneratorSpec::indep_reverse_gumbel(vector_from_json(p.at("alpha")), vector_from_json(p.at("beta")));
    case Family::IndepReverseExp:
      return GeneratorSpec::indep_reverse_exp(vector_from_json(p.at("alpha")), vector_from_json(p.at("beta")));
    case Family::IndepLogGamma: return GeneratorSpec::indep_log_gamma(vector_from_json(p.at("alpha")));
    case Family::Gaussian: return GeneratorSpec::gaussian(vector_from_json(p.at("beta")), matrix_from_json(p.at("sigma")));
    case Family::StructuredExp: return GeneratorSpec::structured(vector_from_json(p.at("lambda")));
  }
  throw std::invalid_argument("generator_from_json: unknown family");
}

}  // namespace mgpd
