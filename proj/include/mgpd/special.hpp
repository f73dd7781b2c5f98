#pragma once

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "mgpd/core.hpp"

namespace mgpd {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
inline constexpr double kSqrt2 = std::numbers::sqrt2;

inline double lgamma_fn(double x) { return boost::math::lgamma(x); }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * kLogTwoPi); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

inline double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(norm_cdf(x));
  // Asymptotic Mills-ratio expansion for the far lower tail.
  const double z2 = 1.0 / (x * x);
  const double series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
  return -0.5 * x * x - 0.5 * kLogTwoPi - std::log(-x) + std::log(series);
}

inline double norm_quantile(double p) {
  if (p <= 0.0) return kNegInf;
  if (p >= 1.0) return kInf;
  return -kSqrt2 * boost::math::erfc_inv(2.0 * p);
}

// log(1 - e^a) for a <= 0.
inline double log1mexp(double a) {
  if (a > -0.6931471805599453) return std::log(-std::expm1(a));
  return std::log1p(-std::exp(a));
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct SignedLog {
  double log_abs = kNegInf;
  int sign = 0;
};

namespace detail {

// Generalized binomial coefficient q (q-1) ... (q-n+1) / n!.
inline double gbinom(double q, int n) {
  double c = 1.0;
  for (int i = 0; i < n; ++i) c *= (q - i) / (i + 1);
  return c;
}

}  // namespace detail

// Divided difference of y -> (b + y)^q over the given nodes (requires b + y > 0 at every node).
// Near-coincident nodes use a Taylor expansion about their mean, so ties are handled exactly.
inline SignedLog power_divided_difference(std::vector<double> y, double b, double q) {
  if (y.empty()) throw std::invalid_argument("power_divided_difference: no nodes");
  std::sort(y.begin(), y.end());
  const int n = static_cast<int>(y.size()) - 1;
  const double base = b + y[0];
  if (!(base > 0.0)) throw std::invalid_argument("power_divided_difference: non-positive base");
  std::vector<double> t(n + 1);
  for (int i = 0; i <= n; ++i) t[i] = (y[i] - y[0]) / base;

  std::vector<double> D(n + 1);
  for (int i = 0; i <= n; ++i) D[i] = std::pow(1.0 + t[i], q);
  for (int k = 1; k <= n; ++k) {
    const double tol = 3e-3 / (std::abs(q) + k + 1.0);
    for (int i = 0; i + k <= n; ++i) {
      const double gap = t[i + k] - t[i];
      if (k == 1) {
        const double r = gap / (1.0 + t[i]);
        if (r == 0.0) {
          D[i] = q * std::pow(1.0 + t[i], q - 1.0);
        } else {
          D[i] = std::pow(1.0 + t[i], q - 1.0) * std::expm1(q * std::log1p(r)) / r;
        }
      } else if (gap <= tol * (1.0 + t[i])) {
        double c = 0.0;
        for (int m = i; m <= i + k; ++m) c += t[m];
        c /= (k + 1);
        double p2 = 0.0, p3 = 0.0, p4 = 0.0;
        for (int m = i; m <= i + k; ++m) {
          const double e = t[m] - c;
          p2 += e * e;
          p3 += e * e * e;
          p4 += e * e * e * e;
        }
        const double h2 = p2 / 2.0;
        const double h3 = p3 / 3.0;
        const double h4 = (3.0 * p2 * p2 + 6.0 * p4) / 24.0;
        const double z = 1.0 + c;
        double val = detail::gbinom(q, k) * std::pow(z, q - k);
        val += detail::gbinom(q, k + 2) * std::pow(z, q - k - 2) * h2;
        val += detail::gbinom(q, k + 3) * std::pow(z, q - k - 3) * h3;
        val += detail::gbinom(q, k + 4) * std::pow(z, q - k - 4) * h4;
        D[i] = val;
      } else {
        D[i] = (D[i + 1] - D[i]) / gap;
      }
    }
  }
  SignedLog out;
  if (D[0] == 0.0 || !std::isfinite(D[0])) {
    out.sign = 0;
    out.log_abs = D[0] == 0.0 ? kNegInf : kInf;
    return out;
  }
  out.sign = D[0] > 0 ? 1 : -1;
  out.log_abs = (q - n) * std::log(base) + std::log(std::abs(D[0]));
  return out;
}

// log of the integral over {delta >= 0, sum(delta) <= bound} of (B + kappa . delta)^{-p},
// for p > dim(kappa) and B + kappa . delta > 0 on the region.
inline double log_simplex_power_integral(double B, const std::vector<double>& kappa, double bound, double p) {
  const int m = static_cast<int>(kappa.size());
  if (!(B > 0.0)) throw std::invalid_argument("log_simplex_power_integral: B must be positive");
  if (m == 0) return -p * std::log(B);
  if (!(bound > 0.0)) return kNegInf;
  if (!(p > m)) throw std::invalid_argument("log_simplex_power_integral: exponent too small");
  std::vector<double> nodes(m + 1, 0.0);
  for (int j = 0; j < m; ++j) nodes[j + 1] = kappa[j] * bound;
  const double q = m - p;
  const SignedLog dd = power_divided_difference(nodes, B, q);
  double log_den = 0.0;
  for (int i = 1; i <= m; ++i) log_den += std::log(p - i);
  // sign of prod (i - p) is (-1)^m and matches the sign of the divided difference
  return m * std::log(bound) + dd.log_abs - log_den;
}

}  // namespace mgpd
