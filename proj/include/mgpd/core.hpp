#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgpd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexList = std::vector<int>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Raised when a numerical routine cannot reach its tolerance or a fit stalls.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed or inconsistent input data (CSV problems, bad rows).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Form { T, U, R };

inline std::string to_string(Form f) {
  switch (f) {
    case Form::T: return "T";
    case Form::U: return "U";
    case Form::R: return "R";
  }
  return "?";
}

inline Form form_from_string(const std::string& s) {
  if (s == "T" || s == "t") return Form::T;
  if (s == "U" || s == "u") return Form::U;
  if (s == "R" || s == "r") return Form::R;
  throw std::invalid_argument("unknown construction form '" + s + "' (expected T, U or R)");
}

inline void require_finite(const Vector& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

// Per-component GP scale and shape.
class MarginalParams {
 public:
  MarginalParams() = default;
  MarginalParams(Vector sigma, Vector gamma) : sigma_(std::move(sigma)), gamma_(std::move(gamma)) {
    if (sigma_.size() != gamma_.size() || sigma_.size() < 1) {
      throw std::invalid_argument("MarginalParams: sigma and gamma must have the same positive length");
    }
    require_finite(sigma_, "sigma");
    require_finite(gamma_, "gamma");
    for (Eigen::Index j = 0; j < sigma_.size(); ++j) {
      if (!(sigma_(j) > 0.0)) throw std::invalid_argument("MarginalParams: sigma must be positive");
    }
  }

  static MarginalParams standard(int d) { return {Vector::Ones(d), Vector::Zero(d)}; }
  static MarginalParams common(int d, double sigma, double gamma) {
    return {Vector::Constant(d, sigma), Vector::Constant(d, gamma)};
  }

  int dim() const { return static_cast<int>(sigma_.size()); }
  const Vector& sigma() const { return sigma_; }
  const Vector& gamma() const { return gamma_; }
  double sigma(int j) const { return sigma_(j); }
  double gamma(int j) const { return gamma_(j); }

  // -sigma/gamma for gamma > 0, -inf otherwise.
  double lower_endpoint(int j) const { return gamma_(j) > 0.0 ? -sigma_(j) / gamma_(j) : kNegInf; }
  // -sigma/gamma for gamma < 0, +inf otherwise.
  double upper_endpoint(int j) const { return gamma_(j) < 0.0 ? -sigma_(j) / gamma_(j) : kInf; }

  bool is_standard() const {
    return (sigma_.array() == 1.0).all() && (gamma_.array() == 0.0).all();
  }
  bool common_sigma() const { return (sigma_.array() == sigma_(0)).all(); }
  bool common_gamma() const { return (gamma_.array() == gamma_(0)).all(); }

  MarginalParams subset(const IndexList& idx) const {
    Vector s(idx.size()), g(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s(k) = sigma_(idx[k]);
      g(k) = gamma_(idx[k]);
    }
    return {s, g};
  }

 private:
  Vector sigma_;
  Vector gamma_;
};

using ThresholdVector = Vector;

// (1 + gamma x / sigma)_+^{-1/gamma}, exp(-x/sigma) at gamma = 0.
inline double marginal_conditional_survival(const MarginalParams& m, int j, double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("marginal_conditional_survival: x must be finite");
  if (x < 0.0) throw std::invalid_argument("marginal_conditional_survival: x must be non-negative");
  const double s = m.sigma(j);
  const double g = m.gamma(j);
  if (g == 0.0) return std::exp(-x / s);
  const double z = 1.0 + g * x / s;
  if (z <= 0.0) return 0.0;
  return std::exp(-std::log1p(g * x / s) / g);
}

// Standard-to-observed map sigma (e^{gamma x0} - 1)/gamma, applied per component.
inline double observed_from_standard(double x0, double sigma, double gamma) {
  if (gamma == 0.0) return sigma * x0;
  return sigma * std::expm1(gamma * x0) / gamma;
}

inline Vector observed_from_standard(const Vector& x0, const MarginalParams& m) {
  if (x0.size() != m.dim()) throw std::invalid_argument("observed_from_standard: dimension mismatch");
  Vector x(x0.size());
  for (int j = 0; j < m.dim(); ++j) x(j) = observed_from_standard(x0(j), m.sigma(j), m.gamma(j));
  return x;
}

// Inverse of observed_from_standard. Points below a positive-shape lower endpoint map to -inf,
// points above a negative-shape upper endpoint map to +inf.
inline double standard_from_observed(double x, double sigma, double gamma) {
  if (gamma == 0.0) return x / sigma;
  const double r = gamma * x / sigma;
  if (r <= -1.0) return gamma > 0.0 ? kNegInf : kInf;
  return std::log1p(r) / gamma;
}

inline Vector standard_from_observed(const Vector& x, const MarginalParams& m) {
  if (x.size() != m.dim()) throw std::invalid_argument("standard_from_observed: dimension mismatch");
  Vector x0(x.size());
  for (int j = 0; j < m.dim(); ++j) x0(j) = standard_from_observed(x(j), m.sigma(j), m.gamma(j));
  return x0;
}

// log |d x / d x0| at observed x, i.e. sum_j log(sigma_j + gamma_j x_j).
inline double log_jacobian_observed(const Vector& x, const MarginalParams& m) {
  double s = 0.0;
  for (int j = 0; j < m.dim(); ++j) s += std::log(m.sigma(j) + m.gamma(j) * x(j));
  return s;
}

// Exceedances x_i = y_i - u with a censor floor v <= 0.
class ExceedanceSet {
 public:
  ExceedanceSet() = default;
  ExceedanceSet(Matrix rows, Vector v, Vector u) : rows_(std::move(rows)), v_(std::move(v)), u_(std::move(u)) {
    const auto d = rows_.cols();
    if (v_.size() != d || u_.size() != d) throw std::invalid_argument("ExceedanceSet: dimension mismatch");
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!(v_(j) <= 0.0)) throw std::invalid_argument("ExceedanceSet: censor floor v must be <= 0");
    }
    for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
      if (!(rows_.row(i).maxCoeff() > 0.0)) {
        throw std::invalid_argument("ExceedanceSet: row " + std::to_string(i + 1) + " does not exceed the threshold");
      }
    }
  }

  int size() const { return static_cast<int>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }
  const Matrix& rows() const { return rows_; }
  Vector row(int i) const { return rows_.row(i).transpose(); }
  const Vector& censor_floor() const { return v_; }
  const Vector& threshold() const { return u_; }

 private:
  Matrix rows_;
  Vector v_;
  Vector u_;
};

inline IndexList all_indices(int d) {
  IndexList idx(d);
  for (int j = 0; j < d; ++j) idx[j] = j;
  return idx;
}

inline Vector take(const Vector& v, const IndexList& idx) {
  Vector out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out(k) = v(idx[k]);
  return out;
}

inline Matrix take(const Matrix& m, const IndexList& rows, const IndexList& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b) out(a, b) = m(rows[a], cols[b]);
  return out;
}

}  // namespace mgpd
