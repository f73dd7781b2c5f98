#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgpd/censoring.hpp"
#include "mgpd/core.hpp"
#include "mgpd/density.hpp"
#include "mgpd/generators.hpp"
#include "mgpd/model.hpp"
#include "mgpd/optimize.hpp"

namespace mgpd {

enum class GammaMode { Free, Zero, Positive };

inline std::string to_string(GammaMode g) {
  switch (g) {
    case GammaMode::Free: return "free";
    case GammaMode::Zero: return "zero";
    case GammaMode::Positive: return "positive";
  }
  return "free";
}

inline GammaMode gamma_mode_from_string(const std::string& s) {
  if (s == "free") return GammaMode::Free;
  if (s == "zero") return GammaMode::Zero;
  if (s == "positive") return GammaMode::Positive;
  throw std::invalid_argument("unknown gamma mode '" + s + "'");
}

// Which parameters of a model are free, tied or fixed.
struct ModelTemplate {
  Form form = Form::T;
  Family family = Family::IndepGumbel;
  int dim = 2;
  bool shape_tie = false;      // equal alpha, or exchangeable correlation for the Gaussian family
  bool zero_location = false;  // beta = 0
  bool fit_margins = false;    // otherwise sigma = 1, gamma = 0
  bool shared_sigma = false;
  bool shared_gamma = false;
  GammaMode gamma = GammaMode::Free;

  bool has_location_axis() const {
    return family == Family::IndepGumbel || family == Family::IndepReverseGumbel || family == Family::IndepReverseExp ||
           family == Family::Gaussian;
  }
  bool has_shape_axis() const { return family != Family::StructuredExp; }

  std::string label() const {
    std::string s = to_string(family) + ":" + to_string(form);
    if (shape_tie) s += family == Family::Gaussian ? "+exchangeable" : "+equal_alpha";
    if (zero_location && has_location_axis()) s += "+zero_beta";
    if (fit_margins) {
      s += "+margins";
      if (shared_sigma) s += "+shared_sigma";
      if (shared_gamma) s += "+shared_gamma";
      if (gamma != GammaMode::Free) s += "+gamma_" + to_string(gamma);
    }
    return s;
  }

  void validate() const {
    if (dim < 1) throw std::invalid_argument("model template: dimension must be positive");
    if ((family == Family::StructuredExp) != (form == Form::R)) {
      throw std::invalid_argument("model template: the structured family is paired with the R form");
    }
  }
};

inline nlohmann::json to_json(const ModelTemplate& t) {
  return {{"form", to_string(t.form)},         {"family", to_string(t.family)},   {"dim", t.dim},
          {"shape_tie", t.shape_tie},          {"zero_location", t.zero_location}, {"fit_margins", t.fit_margins},
          {"shared_sigma", t.shared_sigma},    {"shared_gamma", t.shared_gamma},   {"gamma", to_string(t.gamma)},
          {"label", t.label()}};
}

inline ModelTemplate template_from_json(const nlohmann::json& j) {
  ModelTemplate t;
  t.form = form_from_string(j.at("form").get<std::string>());
  t.family = family_from_string(j.at("family").get<std::string>());
  t.dim = j.at("dim").get<int>();
  t.shape_tie = j.value("shape_tie", false);
  t.zero_location = j.value("zero_location", false);
  t.fit_margins = j.value("fit_margins", false);
  t.shared_sigma = j.value("shared_sigma", false);
  t.shared_gamma = j.value("shared_gamma", false);
  t.gamma = gamma_mode_from_string(j.value("gamma", std::string("free")));
  t.validate();
  return t;
}

namespace detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Correlation matrix from canonical partial correlations z (row-major upper triangle).
inline Matrix corr_from_cpc(const Vector& z, int d) {
  Matrix W = Matrix::Zero(d, d);
  int k = 0;
  Matrix Z = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) Z(i, j) = z(k++);
  W(0, 0) = 1.0;
  for (int j = 1; j < d; ++j) {
    double rem = 1.0;
    for (int i = 0; i < j; ++i) {
      W(i, j) = Z(i, j) * std::sqrt(rem);
      rem -= W(i, j) * W(i, j);
    }
    W(j, j) = std::sqrt(std::max(rem, 0.0));
  }
  return W.transpose() * W;
}

inline Vector cpc_from_corr(const Matrix& R) {
  const int d = static_cast<int>(R.rows());
  const Matrix W = Eigen::LLT<Matrix>(R).matrixU();
  Vector z(d * (d - 1) / 2);
  int k = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      double rem = 1.0;
      for (int m = 0; m < i; ++m) rem -= W(m, j) * W(m, j);
      z(k++) = W(i, j) / std::sqrt(std::max(rem, 1e-300));
    }
  }
  return z;
}

}  // namespace detail

// Maps an unconstrained vector theta to a GpModel and to reported (natural) parameters.
class Parameterization {
 public:
  explicit Parameterization(ModelTemplate t) : t_(t) {
    t_.validate();
    const int d = t_.dim;
    const Family f = t_.family;
    if (f == Family::StructuredExp) {
      t_.shared_sigma = true;
      t_.shared_gamma = true;
      n_gen_ = d - 1;
    } else if (f == Family::Gaussian) {
      n_beta_ = t_.zero_location ? 0 : d - 1;
      n_shape_ = d < 2 ? 0 : (t_.shape_tie ? 1 : d * (d - 1) / 2);
      n_gen_ = n_beta_ + n_shape_;
    } else {
      n_shape_ = t_.shape_tie ? 1 : d;
      n_beta_ = (f == Family::IndepLogGamma || t_.zero_location) ? 0 : d - 1;
      n_gen_ = n_shape_ + n_beta_;
    }
    if (t_.fit_margins) {
      n_sigma_ = t_.shared_sigma ? 1 : d;
      n_gamma_ = t_.gamma == GammaMode::Zero ? 0 : (t_.shared_gamma ? 1 : d);
    }
  }

  const ModelTemplate& model_template() const { return t_; }
  int size() const { return n_gen_ + n_sigma_ + n_gamma_; }
  int generator_size() const { return n_gen_; }

  GpModel model(const Vector& th) const {
    if (th.size() != size()) throw std::invalid_argument("parameter vector has the wrong length");
    const int d = t_.dim;
    GeneratorSpec g = generator(th);
    Vector sigma = Vector::Ones(d), gamma = Vector::Zero(d);
    if (t_.fit_margins) {
      int k = n_gen_;
      for (int j = 0; j < d; ++j) sigma(j) = std::exp(th(k + (t_.shared_sigma ? 0 : j)));
      k += n_sigma_;
      if (t_.gamma != GammaMode::Zero) {
        for (int j = 0; j < d; ++j) {
          const double v = th(k + (t_.shared_gamma ? 0 : j));
          gamma(j) = t_.gamma == GammaMode::Positive ? std::exp(v) : v;
        }
      }
    }
    return GpModel(t_.form, std::move(g), MarginalParams(sigma, gamma));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    const int d = t_.dim;
    auto idx = [](const char* p, int j) { return std::string(p) + std::to_string(j + 1); };
    switch (t_.family) {
      case Family::StructuredExp:
        for (int j = 1; j < d; ++j) n.push_back(idx("lambda", j));
        break;
      case Family::Gaussian:
        for (int j = 1; j <= n_beta_; ++j) n.push_back(idx("beta", j));
        if (t_.shape_tie && d >= 2) {
          n.push_back("rho");
        } else {
          for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) n.push_back("rho" + std::to_string(i + 1) + std::to_string(j + 1));
        }
        break;
      default:
        if (t_.shape_tie)
          n.push_back("alpha");
        else
          for (int j = 0; j < d; ++j) n.push_back(idx("alpha", j));
        for (int j = 1; j <= n_beta_; ++j) n.push_back(idx("beta", j));
    }
    if (t_.fit_margins) {
      if (t_.shared_sigma)
        n.push_back("sigma");
      else
        for (int j = 0; j < d; ++j) n.push_back(idx("sigma", j));
      if (t_.gamma != GammaMode::Zero) {
        if (t_.shared_gamma)
          n.push_back("gamma");
        else
          for (int j = 0; j < d; ++j) n.push_back(idx("gamma", j));
      }
    }
    return n;
  }

  Vector natural(const Vector& th) const {
    Vector out(size());
    const int d = t_.dim;
    int k = 0;
    switch (t_.family) {
      case Family::StructuredExp:
        for (int j = 0; j < n_gen_; ++j, ++k) out(k) = std::exp(th(k));
        break;
      case Family::Gaussian: {
        for (int j = 0; j < n_beta_; ++j, ++k) out(k) = th(k);
        if (t_.shape_tie && d >= 2) {
          out(k) = exch_rho(th(k));
          ++k;
        } else if (n_shape_ > 0) {
          const Matrix R = detail::corr_from_cpc(th.segment(k, n_shape_).array().tanh().matrix(), d);
          for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j, ++k) out(k) = R(i, j);
        }
        break;
      }
      default:
        for (int j = 0; j < n_shape_; ++j, ++k) out(k) = std::exp(th(k));
        for (int j = 0; j < n_beta_; ++j, ++k) out(k) = th(k);
    }
    for (int j = 0; j < n_sigma_; ++j, ++k) out(k) = std::exp(th(k));
    for (int j = 0; j < n_gamma_; ++j, ++k) out(k) = t_.gamma == GammaMode::Positive ? std::exp(th(k)) : th(k);
    return out;
  }

  // Inverse map; the model must satisfy the template's constraints up to the identifiability shifts.
  Vector theta_from_model(const GpModel& m) const {
    const int d = t_.dim;
    const GeneratorSpec& g = m.generator();
    Vector th(size());
    int k = 0;
    switch (t_.family) {
      case Family::StructuredExp:
        for (int j = 1; j < d; ++j, ++k) th(k) = std::log(g.lambda()(j) / g.lambda()(0));
        break;
      case Family::Gaussian: {
        const Vector& b = g.beta();
        for (int j = 1; j <= n_beta_; ++j, ++k) th(k) = b(j) - b(0);
        const Matrix& S = g.covariance();
        const Vector sd = S.diagonal().array().sqrt();
        const Matrix R = S.array() / (sd * sd.transpose()).array();
        if (t_.shape_tie && d >= 2) {
          double r = 0.0;
          for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) r += R(i, j);
          r /= d * (d - 1) / 2.0;
          const double lo = -1.0 / (d - 1);
          const double p = std::clamp((r - lo) / (1.0 - lo), 1e-6, 1.0 - 1e-6);
          th(k++) = std::log(p / (1.0 - p));
        } else if (n_shape_ > 0) {
          const Vector z = detail::cpc_from_corr(R);
          for (Eigen::Index i = 0; i < z.size(); ++i, ++k) th(k) = std::atanh(std::clamp(z(i), -0.999999, 0.999999));
        }
        break;
      }
      default: {
        if (t_.shape_tie) {
          th(k++) = g.alpha().array().log().mean();
        } else {
          for (int j = 0; j < d; ++j, ++k) th(k) = std::log(g.alpha()(j));
        }
        const Vector& b = g.beta();
        for (int j = 1; j <= n_beta_; ++j, ++k) th(k) = b(j) - b(0);
      }
    }
    const MarginalParams& mg = m.margins();
    if (n_sigma_ == 1) {
      th(k++) = mg.sigma().array().log().mean();
    } else {
      for (int j = 0; j < n_sigma_; ++j, ++k) th(k) = std::log(mg.sigma(j));
    }
    if (n_gamma_ > 0) {
      auto tr = [&](double gv) { return t_.gamma == GammaMode::Positive ? std::log(std::max(gv, 1e-4)) : gv; };
      if (n_gamma_ == 1) {
        th(k++) = tr(mg.gamma().mean());
      } else {
        for (int j = 0; j < n_gamma_; ++j, ++k) th(k) = tr(mg.gamma(j));
      }
    }
    return th;
  }

  // Default generator starting points, ordered from weak to strong dependence.
  std::vector<GeneratorSpec> default_generators() const {
    const int d = t_.dim;
    std::vector<GeneratorSpec> out;
    switch (t_.family) {
      case Family::StructuredExp:
        out.push_back(GeneratorSpec::structured(Vector::Ones(d)));
        break;
      case Family::Gaussian:
        for (double r : {0.2, 0.5, 0.8}) {
          Matrix R = Matrix::Constant(d, d, r);
          R.diagonal().setOnes();
          out.push_back(GeneratorSpec::gaussian(Vector::Zero(d), R));
        }
        break;
      case Family::IndepLogGamma:
        for (double a : {0.5, 1.0, 2.0, 5.0}) out.push_back(GeneratorSpec::indep_log_gamma(Vector::Constant(d, a)));
        break;
      case Family::IndepGumbel:
      case Family::IndepReverseGumbel:
      case Family::IndepReverseExp:
        for (double a : {1.5, 2.5, 4.0, 8.0}) {
          const Vector al = Vector::Constant(d, a), be = Vector::Zero(d);
          if (t_.family == Family::IndepGumbel) out.push_back(GeneratorSpec::indep_gumbel(al, be));
          if (t_.family == Family::IndepReverseGumbel) out.push_back(GeneratorSpec::indep_reverse_gumbel(al, be));
          if (t_.family == Family::IndepReverseExp) out.push_back(GeneratorSpec::indep_reverse_exp(al, be));
        }
        break;
    }
    return out;
  }

 private:
  double exch_rho(double v) const {
    const double lo = -1.0 / (t_.dim - 1);
    return lo + (1.0 - lo) * detail::logistic(v);
  }

  GeneratorSpec generator(const Vector& th) const {
    const int d = t_.dim;
    switch (t_.family) {
      case Family::StructuredExp: {
        Vector lam(d);
        lam(0) = 1.0;
        for (int j = 1; j < d; ++j) lam(j) = std::exp(th(j - 1));
        return GeneratorSpec::structured(lam);
      }
      case Family::Gaussian: {
        Vector beta = Vector::Zero(d);
        for (int j = 0; j < n_beta_; ++j) beta(j + 1) = th(j);
        Matrix R = Matrix::Identity(d, d);
        if (d >= 2) {
          if (t_.shape_tie) {
            const double r = exch_rho(th(n_beta_));
            R = Matrix::Constant(d, d, r);
            R.diagonal().setOnes();
          } else {
            R = detail::corr_from_cpc(th.segment(n_beta_, n_shape_).array().tanh().matrix(), d);
          }
        }
        return GeneratorSpec::gaussian(beta, R);
      }
      default: {
        Vector alpha(d), beta = Vector::Zero(d);
        for (int j = 0; j < d; ++j) alpha(j) = std::exp(th(t_.shape_tie ? 0 : j));
        for (int j = 0; j < n_beta_; ++j) beta(j + 1) = th(n_shape_ + j);
        switch (t_.family) {
          case Family::IndepGumbel: return GeneratorSpec::indep_gumbel(alpha, beta);
          case Family::IndepReverseGumbel: return GeneratorSpec::indep_reverse_gumbel(alpha, beta);
          case Family::IndepReverseExp: return GeneratorSpec::indep_reverse_exp(alpha, beta);
          default: return GeneratorSpec::indep_log_gamma(alpha);
        }
      }
    }
  }

  ModelTemplate t_;
  int n_gen_ = 0, n_shape_ = 0, n_beta_ = 0, n_sigma_ = 0, n_gamma_ = 0;
};

// ---- Univariate GP ----

inline double gp_log_likelihood(const std::vector<double>& x, double sigma, double gamma) {
  if (!(sigma > 0.0)) return kNegInf;
  CompensatedSum acc;
  for (double v : x) {
    if (v < 0.0) return kNegInf;
    if (gamma == 0.0) {
      acc.add(-std::log(sigma) - v / sigma);
    } else {
      const double z = gamma * v / sigma;
      if (!(1.0 + z > 0.0)) return kNegInf;
      acc.add(-std::log(sigma) - (1.0 + 1.0 / gamma) * std::log1p(z));
    }
  }
  return acc.value();
}

struct GpFit {
  double sigma = 1.0;
  double gamma = 0.0;
  double loglik = kNegInf;
  std::optional<double> se_sigma, se_gamma;
  int n = 0;
  bool converged = false;
};

inline nlohmann::json to_json(const GpFit& f) {
  nlohmann::json j = {{"sigma", f.sigma}, {"gamma", f.gamma}, {"loglik", f.loglik}, {"n", f.n}, {"converged", f.converged}};
  j["se_sigma"] = f.se_sigma ? nlohmann::json(*f.se_sigma) : nlohmann::json();
  j["se_gamma"] = f.se_gamma ? nlohmann::json(*f.se_gamma) : nlohmann::json();
  return j;
}

// Maximum likelihood for a GP(sigma, gamma) sample; gamma can be fixed.
inline GpFit fit_gp(const std::vector<double>& x, std::optional<double> fixed_gamma = std::nullopt) {
  if (x.size() < 2) throw std::invalid_argument("fit_gp: need at least two observations");
  for (double v : x)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("fit_gp: excesses must be finite and non-negative");
  double m = 0.0, s2 = 0.0;
  for (double v : x) m += v;
  m /= x.size();
  for (double v : x) s2 += (v - m) * (v - m);
  s2 /= (x.size() - 1.0);
  double g0 = s2 > 0.0 ? std::clamp(0.5 * (1.0 - m * m / s2), -0.4, 0.8) : 0.0;
  double sg0 = s2 > 0.0 ? 0.5 * m * (1.0 + m * m / s2) : std::max(m, 1e-8);
  if (fixed_gamma) {
    g0 = *fixed_gamma;
    sg0 = std::max(m * (1.0 - g0), 1e-8);
  }
  const double xmax = *std::max_element(x.begin(), x.end());
  if (g0 < 0.0 && xmax >= -sg0 / g0) sg0 = -g0 * xmax * 1.1;
  auto nll = [&](const Vector& th) {
    const double sg = std::exp(th(0));
    const double gm = fixed_gamma ? *fixed_gamma : th(1);
    const double ll = gp_log_likelihood(x, sg, gm);
    return std::isfinite(ll) ? -ll : kInf;
  };
  Vector th0(fixed_gamma ? 1 : 2);
  th0(0) = std::log(sg0);
  if (!fixed_gamma) th0(1) = g0;
  NelderMeadOptions opt;
  opt.initial_step = 0.1;
  opt.restarts = 2;
  opt.f_tol = 1e-11;
  opt.x_tol = 1e-9;
  const OptimResult r = nelder_mead(nll, th0, opt);
  GpFit f;
  f.n = static_cast<int>(x.size());
  f.sigma = std::exp(r.x(0));
  f.gamma = fixed_gamma ? *fixed_gamma : r.x(1);
  f.loglik = -r.value;
  f.converged = r.converged && std::isfinite(r.value);
  const Matrix H = numerical_hessian(nll, r.x, 1e-4);
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() == Eigen::Success) {
    const Matrix C = llt.solve(Matrix::Identity(H.rows(), H.cols()));
    f.se_sigma = f.sigma * std::sqrt(C(0, 0));
    if (!fixed_gamma) f.se_gamma = std::sqrt(C(1, 1));
  }
  return f;
}

// ---- Multivariate fit ----

struct FitOptions {
  NelderMeadOptions optimizer{};
  double search_tol = 1e-7;
  double final_tol = 1e-9;
  int threads = 1;
  std::optional<GpModel> init;
  bool init_fallback = false;  // use the default start when init has infinite NLL instead of failing
  bool compute_hessian = true;
  double hessian_step = 1e-2;
};

struct FitResult {
  ModelTemplate tmpl;
  GpModel model;
  Vector theta;
  std::vector<std::string> names;
  Vector estimates;
  std::optional<Vector> se;
  std::optional<Matrix> cov;
  std::optional<Matrix> theta_cov;
  double loglik = kNegInf;
  double aic = kInf;
  int n_params = 0;
  int n_obs = 0;
  int evaluations = 0;
  int iterations = 0;
  int restarts = 0;
  bool converged = false;
  int failed_evaluations = 0;
  int flagged_contributions = 0;
  std::vector<double> restart_values;
  std::string note;
};

inline nlohmann::json to_json(const FitResult& f) {
  nlohmann::json est = nlohmann::json::object();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    nlohmann::json e = {{"value", f.estimates(i)}};
    e["se"] = f.se ? nlohmann::json((*f.se)(i)) : nlohmann::json();
    est[f.names[i]] = e;
  }
  nlohmann::json j = {{"template", to_json(f.tmpl)},
                      {"model", to_json(f.model)},
                      {"estimates", est},
                      {"parameter_order", f.names},
                      {"theta", vector_to_json(f.theta)},
                      {"loglik", f.loglik},
                      {"aic", f.aic},
                      {"n_params", f.n_params},
                      {"n_obs", f.n_obs},
                      {"optimizer",
                       {{"evaluations", f.evaluations},
                        {"iterations", f.iterations},
                        {"restarts", f.restarts},
                        {"restart_values", f.restart_values},
                        {"converged", f.converged},
                        {"failed_evaluations", f.failed_evaluations}}},
                      {"flagged_contributions", f.flagged_contributions}};
  j["covariance"] = f.cov ? matrix_to_json(*f.cov) : nlohmann::json();
  j["theta_covariance"] = f.theta_cov ? matrix_to_json(*f.theta_cov) : nlohmann::json();
  if (!f.note.empty()) j["note"] = f.note;
  return j;
}

inline FitResult fit_result_from_json(const nlohmann::json& j) {
  FitResult f;
  f.tmpl = template_from_json(j.at("template"));
  f.model = model_from_json(j.at("model"));
  f.theta = vector_from_json(j.at("theta"));
  f.names = j.at("parameter_order").get<std::vector<std::string>>();
  f.estimates.resize(f.names.size());
  bool have_se = true;
  Vector se(f.names.size());
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    const auto& e = j.at("estimates").at(f.names[i]);
    f.estimates(i) = e.at("value").get<double>();
    if (e.at("se").is_null())
      have_se = false;
    else
      se(i) = e.at("se").get<double>();
  }
  if (have_se) f.se = se;
  f.loglik = j.at("loglik").get<double>();
  f.aic = j.at("aic").get<double>();
  f.n_params = j.at("n_params").get<int>();
  f.n_obs = j.at("n_obs").get<int>();
  if (!j.at("covariance").is_null()) f.cov = matrix_from_json(j.at("covariance"));
  if (!j.at("theta_covariance").is_null()) f.theta_cov = matrix_from_json(j.at("theta_covariance"));
  f.converged = j.at("optimizer").at("converged").get<bool>();
  return f;
}

namespace detail {

struct Objective {
  const Parameterization& par;
  const ExceedanceSet& data;
  EvalOptions eval;
  int threads = 1;
  mutable int failures = 0;
  mutable int flagged = 0;

  double operator()(const Vector& th) const {
    try {
      const GpModel m = par.model(th);
      const ModelEvaluator ev(m, eval);
      const NllReport r = negative_log_likelihood_report(ev, data, threads);
      flagged = r.flagged;
      return std::isfinite(r.value) ? r.value : kInf;
    } catch (const std::invalid_argument&) {
      return kInf;
    } catch (const NumericalError&) {
      ++failures;
      return kInf;
    }
  }
};

inline std::vector<double> positive_column(const ExceedanceSet& data, int j) {
  std::vector<double> out;
  for (int i = 0; i < data.size(); ++i)
    if (data.rows()(i, j) > 0.0) out.push_back(data.rows()(i, j));
  return out;
}

// Exceedances mapped to the standard scale with the given margins.
inline std::optional<ExceedanceSet> standardize(const ExceedanceSet& data, const MarginalParams& mg) {
  const int d = data.dim();
  Matrix rows(data.size(), d);
  Vector v(d);
  for (int j = 0; j < d; ++j) {
    v(j) = standard_from_observed(data.censor_floor()(j), mg.sigma(j), mg.gamma(j));
    if (std::isnan(v(j))) return std::nullopt;
    if (v(j) == kNegInf) v(j) = -1e300;
  }
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < d; ++j) {
      const double z = standard_from_observed(data.rows()(i, j), mg.sigma(j), mg.gamma(j));
      if (!std::isfinite(z)) {
        if (data.rows()(i, j) <= data.censor_floor()(j)) {
          rows(i, j) = v(j);
          continue;
        }
        return std::nullopt;
      }
      rows(i, j) = z;
    }
  }
  try {
    return ExceedanceSet(rows, v, Vector::Zero(d));
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace detail

// Initial margins from univariate GP fits to the positive parts of each component.
inline MarginalParams initial_margins(const ModelTemplate& t, const ExceedanceSet& data) {
  const int d = data.dim();
  Vector sigma(d), gamma(d);
  for (int j = 0; j < d; ++j) {
    const std::vector<double> xj = detail::positive_column(data, j);
    std::optional<double> fixed;
    if (t.gamma == GammaMode::Zero) fixed = 0.0;
    if (xj.size() < 5) {
      sigma(j) = 1.0;
      gamma(j) = 0.0;
      continue;
    }
    const GpFit f = fit_gp(xj, fixed);
    sigma(j) = f.sigma;
    gamma(j) = f.gamma;
  }
  if (t.gamma == GammaMode::Positive) gamma = gamma.cwiseMax(0.05);
  if (t.shared_gamma || t.family == Family::StructuredExp) gamma.setConstant(gamma.mean());
  if (t.shared_sigma || t.family == Family::StructuredExp) sigma.setConstant(sigma.mean());
  if (t.gamma == GammaMode::Zero) gamma.setZero();
  return {sigma, gamma};
}

// Fills SEs and covariances from a numerical Hessian at theta; one retry with a wider step
// when the first Hessian is not positive definite.
inline void attach_standard_errors(FitResult& f, const Parameterization& par, const std::function<double(const Vector&)>& obj,
                                   double h) {
  if (f.theta.size() == 0) return;
  for (int attempt = 0; attempt < 2; ++attempt, h *= 2.5) {
    const Matrix H = numerical_hessian(obj, f.theta, h);
    if (!H.allFinite()) {
      f.note = "Hessian not finite; standard errors unavailable";
      continue;
    }
    const Matrix Hs = 0.5 * (H + H.transpose());
    Eigen::LLT<Matrix> llt(Hs);
    if (llt.info() != Eigen::Success) {
      f.note = "Hessian not positive definite; standard errors unavailable";
      continue;
    }
    const Matrix Ct = llt.solve(Matrix::Identity(Hs.rows(), Hs.cols()));
    const Matrix J = numerical_jacobian([&](const Vector& th) { return par.natural(th); }, f.theta);
    const Matrix C = J * Ct * J.transpose();
    f.theta_cov = Ct;
    f.cov = 0.5 * (C + C.transpose());
    f.se = f.cov->diagonal().cwiseMax(0.0).cwiseSqrt();
    f.note = attempt == 0 ? "" : "standard errors from a widened Hessian step";
    if (!f.converged) f.note += (f.note.empty() ? "" : "; ") + std::string("optimizer did not meet its convergence tolerance");
    return;
  }
}

inline FitResult fit_mle(const ModelTemplate& tmpl, const ExceedanceSet& data, const FitOptions& opt = {}) {
  if (tmpl.dim != data.dim()) throw std::invalid_argument("fit_mle: template and data dimensions differ");
  if (data.size() < 1) throw DataError("fit_mle: no exceedances to fit");
  const Parameterization par(tmpl);
  EvalOptions search_eval;
  search_eval.rel_tol = opt.search_tol;
  search_eval.flag_tol = 1e2 * opt.search_tol;
  detail::Objective obj{par, data, search_eval, opt.threads};
  std::function<double(const Vector&)> f = std::cref(obj);

  // Starting point.
  Vector th0;
  double f0 = kInf;
  if (opt.init) {
    th0 = par.theta_from_model(*opt.init);
    f0 = f(th0);
    if (!std::isfinite(f0) && !opt.init_fallback) throw NumericalError("fit_mle: initial model has infinite negative log-likelihood on the data");
  }
  if (!std::isfinite(f0)) {
    MarginalParams mg = tmpl.fit_margins ? initial_margins(tmpl, data) : MarginalParams::standard(tmpl.dim);
    std::optional<ExceedanceSet> std_data;
    if (tmpl.fit_margins) std_data = detail::standardize(data, mg);
    ModelTemplate gen_only = tmpl;
    gen_only.fit_margins = false;
    const Parameterization gpar(gen_only);
    Vector best_gen;
    double best_val = kInf;
    const ExceedanceSet& gdata = std_data ? *std_data : data;
    detail::Objective gobj{gpar, gdata, search_eval, opt.threads};
    for (const GeneratorSpec& g : par.default_generators()) {
      const Form form = tmpl.form;
      GpModel m0 = form == Form::R ? GpModel(Form::R, g, MarginalParams::common(tmpl.dim, 1.0, 0.0)) : GpModel(form, g, MarginalParams::standard(tmpl.dim));
      const Vector th = gpar.theta_from_model(m0);
      const double v = (!tmpl.fit_margins || std_data) ? gobj(th) : 0.0;
      if (v < best_val || best_gen.size() == 0) {
        best_val = v;
        best_gen = th;
      }
    }
    // Generator-only refinement on the standardized data.
    if (tmpl.fit_margins && std_data && tmpl.family != Family::StructuredExp && std::isfinite(best_val) && best_gen.size() > 0) {
      NelderMeadOptions o = opt.optimizer;
      o.restarts = 0;
      o.f_tol = 1e-4;
      o.max_evaluations = 400 * std::max(1, gpar.size());
      best_gen = nelder_mead(std::cref(gobj), best_gen, o).x;
    }
    const GpModel gm = gpar.model(best_gen);
    GpModel full = tmpl.form == Form::R ? GpModel(Form::R, gm.generator(), MarginalParams::common(tmpl.dim, mg.sigma(0), std::max(mg.gamma(0), 0.0)))
                                        : GpModel(tmpl.form, gm.generator(), mg);
    th0 = par.theta_from_model(full);
    f0 = f(th0);
    if (!std::isfinite(f0) && tmpl.fit_margins) {
      // Widen the margins until the start is admissible.
      for (int k = 0; k < 20 && !std::isfinite(f0); ++k) {
        Vector sg = full.margins().sigma() * 1.5;
        Vector gm2 = full.margins().gamma();
        if (tmpl.gamma == GammaMode::Free) gm2 = gm2.cwiseMax(0.0) + Vector::Constant(tmpl.dim, 0.05);
        full = GpModel(tmpl.form, full.generator(), MarginalParams(sg, gm2));
        th0 = par.theta_from_model(full);
        f0 = f(th0);
      }
    }
  }
  if (!std::isfinite(f0)) throw NumericalError("fit_mle: no starting point with finite likelihood for " + tmpl.label());

  const OptimResult r = nelder_mead(f, th0, opt.optimizer);

  FitResult out;
  out.tmpl = par.model_template();
  out.theta = r.x;
  out.model = par.model(r.x);
  out.names = par.names();
  out.estimates = par.natural(r.x);
  out.n_params = par.size();
  out.n_obs = data.size();
  out.evaluations = r.evaluations;
  out.iterations = r.iterations;
  out.restarts = r.restarts_run;
  out.restart_values = r.restart_values;
  out.converged = r.converged;
  out.failed_evaluations = obj.failures;

  EvalOptions final_eval;
  final_eval.rel_tol = opt.final_tol;
  final_eval.flag_tol = 1e2 * opt.final_tol;
  detail::Objective fobj{par, data, final_eval, opt.threads};
  const double nll = fobj(r.x);
  if (!std::isfinite(nll)) throw NumericalError("fit_mle: final likelihood evaluation failed for " + tmpl.label());
  out.loglik = -nll;
  out.flagged_contributions = fobj.flagged;
  out.aic = 2.0 * nll + 2.0 * out.n_params;
  if (!out.converged) out.note = "optimizer did not meet its convergence tolerance";
  if (opt.compute_hessian) attach_standard_errors(out, par, std::cref(fobj), opt.hessian_step);
  return out;
}

inline std::optional<Vector> standard_errors(const FitResult& f) { return f.se; }

struct LrTest {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

inline nlohmann::json to_json(const LrTest& t) { return {{"statistic", t.statistic}, {"dof", t.dof}, {"p_value", t.p_value}}; }

inline LrTest lr_test(double loglik_nested, int k_nested, double loglik_full, int k_full) {
  LrTest t;
  t.dof = k_full - k_nested;
  if (t.dof < 0) throw std::invalid_argument("lr_test: nested model has more parameters than the full model");
  double s = 2.0 * (loglik_full - loglik_nested);
  if (s < -1e-6) throw NumericalError("lr_test: negative statistic " + std::to_string(s) + " (optimizer failure)");
  s = std::max(s, 0.0);
  t.statistic = s;
  if (t.dof == 0) {
    t.p_value = 1.0;
  } else {
    const boost::math::chi_squared dist(t.dof);
    t.p_value = s == 0.0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, s));
  }
  return t;
}

inline LrTest lr_test(const FitResult& nested, const FitResult& full) {
  return lr_test(nested.loglik, nested.n_params, full.loglik, full.n_params);
}

}  // namespace mgpd
