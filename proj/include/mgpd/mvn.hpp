#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mgpd/core.hpp"
#include "mgpd/quadrature.hpp"
#include "mgpd/special.hpp"

namespace mgpd {

namespace detail {

template <int N>
double gl_half_sum(double asr, double hk, double hs) {
  // sum over the N-point Gauss-Legendre rule mapped to (0, asr), both halves
  using rule = boost::math::quadrature::gauss<double, N>;
  const auto& x = rule::abscissa();
  const auto& w = rule::weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (double sgn : {-1.0, 1.0}) {
      const double sn = std::sin(asr * (1.0 + sgn * x[i]));
      acc += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
  }
  return acc;
}

template <int N>
double gl_high_corr(double a, double bs, double hk, double c, double d) {
  using rule = boost::math::quadrature::gauss<double, N>;
  const auto& x = rule::abscissa();
  const auto& w = rule::weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (double sgn : {-1.0, 1.0}) {
      const double xs = std::pow(a * (1.0 + sgn * x[i]), 2);
      const double asr = -(bs / xs + hk) / 2.0;
      if (asr > -100.0) {
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-(hk / 2.0) * xs / std::pow(1.0 + rs, 2)) / rs;
        acc += w[i] * std::exp(asr) * (sp - ep);
      }
    }
  }
  return acc;
}

// Upper orthant probability P(X > dh, Y > dk) for a standard bivariate normal with correlation r.
inline double bvnu(double dh, double dk, double r) {
  constexpr double tp = 2.0 * std::numbers::pi;
  if (dh == kInf || dk == kInf) return 0.0;
  if (dh == kNegInf) return dk == kNegInf ? 1.0 : norm_cdf(-dk);
  if (dk == kNegInf) return norm_cdf(-dh);
  if (r == 0.0) return norm_cdf(-dh) * norm_cdf(-dk);
  double h = dh, k = dk, hk = h * k, bvn = 0.0;
  const double ar = std::abs(r);
  if (ar < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    double s;
    if (ar < 0.3)
      s = gl_half_sum<6>(asr, hk, hs);
    else if (ar < 0.75)
      s = gl_half_sum<12>(asr, hk, hs);
    else
      s = gl_half_sum<20>(asr, hk, hs);
    bvn = s * asr / tp + norm_cdf(-h) * norm_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (ar < 1.0) {
      const double as = 1.0 - r * r;
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double asr = -(bs / as + hk) / 2.0;
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * norm_cdf(-b / a);
        bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a /= 2.0;
      bvn = (a * gl_high_corr<20>(a, bs, hk, c, d) - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += norm_cdf(-std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double L = h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-k);
      bvn = L - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

}  // namespace detail

// P(X <= h, Y <= k) for a standard bivariate normal with correlation r.
inline double bvn_cdf(double h, double k, double r) {
  if (h == kNegInf || k == kNegInf) return 0.0;
  if (h == kInf) return norm_cdf(k);
  if (k == kInf) return norm_cdf(h);
  return detail::bvnu(-h, -k, r);
}

// P(Z <= b) for a standard trivariate normal with correlation matrix R, by one-dimensional
// adaptive quadrature over the best-conditioned variable.
inline double tvn_cdf(const std::array<double, 3>& b, const Matrix& R) {
  for (double x : b)
    if (x == kNegInf) return 0.0;
  int k0 = 0;
  double best = kInf;
  for (int k = 0; k < 3; ++k) {
    double m = 0.0;
    for (int j = 0; j < 3; ++j)
      if (j != k) m = std::max(m, std::abs(R(k, j)));
    if (m < best) {
      best = m;
      k0 = k;
    }
  }
  int i1 = (k0 + 1) % 3, i2 = (k0 + 2) % 3;
  const double r1 = R(k0, i1), r2 = R(k0, i2);
  const double s1 = std::sqrt(1.0 - r1 * r1), s2 = std::sqrt(1.0 - r2 * r2);
  const double rho = (R(i1, i2) - r1 * r2) / (s1 * s2);
  const double top = b[k0];
  auto f = [&](double z) {
    return norm_pdf(z) * bvn_cdf((b[i1] - r1 * z) / s1, (b[i2] - r2 * z) / s2, std::clamp(rho, -1.0, 1.0));
  };
  const double upper = std::min(top, 9.0);
  const double lower = std::min(top, 0.0) - 12.0;
  return integrate_gk(f, lower, upper, 1e-11);
}

struct MvnOptions {
  double abs_tol = 1e-6;
  int shifts = 12;
  int min_points = 256;
  int max_points = 1 << 17;
  std::uint64_t seed = 0x5eed5eedULL;
};

namespace detail {

inline const std::vector<double>& lattice_generators() {
  static const std::vector<double> g = [] {
    std::vector<double> out;
    const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};
    for (int p : primes) out.push_back(std::sqrt(static_cast<double>(p)));
    return out;
  }();
  return g;
}

// Genz separation-of-variables estimate with randomized Richtmyer lattice rules.
inline double mvn_qmc(const Vector& b, const Matrix& R, const MvnOptions& opt) {
  const int k = static_cast<int>(b.size());
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success) throw NumericalError("mvn_cdf: covariance not positive definite");
  const Matrix L = llt.matrixL();
  const auto& gen = lattice_generators();
  if (k - 1 > static_cast<int>(gen.size())) throw std::invalid_argument("mvn_cdf: dimension too large");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> shift(std::max(k - 1, 1));
  std::vector<double> y(k);
  auto sample = [&](const std::vector<double>& w) {
    double e = norm_cdf(b(0) / L(0, 0));
    double f = e;
    for (int i = 1; i < k && f > 0.0; ++i) {
      y[i - 1] = norm_quantile(std::clamp(w[i - 1] * e, 1e-300, 1.0 - 1e-16));
      double s = 0.0;
      for (int j = 0; j < i; ++j) s += L(i, j) * y[j];
      e = norm_cdf((b(i) - s) / L(i, i));
      f *= e;
    }
    return f;
  };
  int n = opt.min_points;
  double estimate = 0.0;
  std::vector<double> w(std::max(k - 1, 1));
  for (;;) {
    std::vector<double> shift_means;
    for (int m = 0; m < opt.shifts; ++m) {
      for (auto& s : shift) s = U(rng);
      double acc = 0.0;
      for (int p = 1; p <= n; ++p) {
        for (int i = 0; i < k - 1; ++i) {
          double v = std::fmod(p * gen[i] + shift[i], 1.0);
          w[i] = std::abs(2.0 * v - 1.0);
        }
        acc += sample(w);
        for (int i = 0; i < k - 1; ++i) w[i] = 1.0 - w[i];
        acc += sample(w);
      }
      shift_means.push_back(acc / (2.0 * n));
    }
    double mean = 0.0;
    for (double v : shift_means) mean += v;
    mean /= opt.shifts;
    double var = 0.0;
    for (double v : shift_means) var += (v - mean) * (v - mean);
    var /= (opt.shifts * (opt.shifts - 1.0));
    estimate = mean;
    if (3.0 * std::sqrt(var) < opt.abs_tol || n >= opt.max_points) break;
    n *= 2;
  }
  return std::clamp(estimate, 0.0, 1.0);
}

}  // namespace detail

// P(X <= b) for X ~ N(0, cov). Infinite upper limits are marginalized out.
inline double mvn_cdf(const Vector& b, const Matrix& cov, const MvnOptions& opt = {}) {
  IndexList keep;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (b(i) == kNegInf || std::isnan(b(i))) return 0.0;
    if (b(i) != kInf) keep.push_back(static_cast<int>(i));
  }
  const int k = static_cast<int>(keep.size());
  if (k == 0) return 1.0;
  Vector bs(k), sd(k);
  for (int i = 0; i < k; ++i) {
    sd(i) = std::sqrt(cov(keep[i], keep[i]));
    bs(i) = b(keep[i]) / sd(i);
  }
  Matrix R(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) R(i, j) = cov(keep[i], keep[j]) / (sd(i) * sd(j));
  if (k == 1) return norm_cdf(bs(0));
  if (k == 2) return bvn_cdf(bs(0), bs(1), std::clamp(R(0, 1), -1.0, 1.0));
  if (k == 3) return std::clamp(tvn_cdf({bs(0), bs(1), bs(2)}, R), 0.0, 1.0);
  return detail::mvn_qmc(bs, R, opt);
}

}  // namespace mgpd
