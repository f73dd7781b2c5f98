#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "mgpd/core.hpp"

namespace mgpd {

struct NelderMeadOptions {
  double initial_step = 0.25;
  double f_tol = 1e-9;      // absolute spread of simplex values
  double x_tol = 1e-7;      // simplex diameter
  int max_evaluations = 20000;
  int restarts = 5;
  double restart_jitter = 0.1;
  std::uint64_t seed = 12345;
};

struct OptimResult {
  Vector x;
  double value = kInf;
  int evaluations = 0;
  int iterations = 0;
  int restarts_run = 0;
  bool converged = false;
  std::vector<double> restart_values;  // best value reached after each start
};

namespace detail {

// Single Nelder-Mead run with dimension-adaptive coefficients.
inline OptimResult nelder_mead_once(const std::function<double(const Vector&)>& f, const Vector& x0, double step,
                                    const NelderMeadOptions& opt, int budget) {
  const int n = static_cast<int>(x0.size());
  const double nd = std::max(n, 2);
  const double alpha = 1.0, beta = 1.0 + 2.0 / nd, gam = 0.75 - 1.0 / (2.0 * nd), delta = 1.0 - 1.0 / nd;
  OptimResult r;
  auto eval = [&](const Vector& x) {
    ++r.evaluations;
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
  };
  std::vector<Vector> s(n + 1, x0);
  std::vector<double> fv(n + 1);
  fv[0] = eval(x0);
  for (int i = 0; i < n; ++i) {
    s[i + 1](i) += step;
    fv[i + 1] = eval(s[i + 1]);
    if (!std::isfinite(fv[i + 1])) {
      s[i + 1](i) = x0(i) - step;
      fv[i + 1] = eval(s[i + 1]);
    }
  }
  std::vector<int> ord(n + 1);
  while (r.evaluations < budget) {
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    {
      std::vector<Vector> s2(n + 1);
      std::vector<double> f2(n + 1);
      for (int i = 0; i <= n; ++i) {
        s2[i] = s[ord[i]];
        f2[i] = fv[ord[i]];
      }
      s.swap(s2);
      fv.swap(f2);
    }
    ++r.iterations;
    double diam = 0.0;
    for (int i = 1; i <= n; ++i) diam = std::max(diam, (s[i] - s[0]).lpNorm<Eigen::Infinity>());
    if (std::isfinite(fv[n]) && fv[n] - fv[0] <= opt.f_tol && diam <= opt.x_tol * 1e3) {
      r.converged = true;
      break;
    }
    if (diam <= opt.x_tol) {
      r.converged = std::isfinite(fv[0]);
      break;
    }
    Vector c = Vector::Zero(n);
    for (int i = 0; i < n; ++i) c += s[i];
    c /= n;
    const Vector xr = c + alpha * (c - s[n]);
    const double fr = eval(xr);
    if (fr < fv[0]) {
      const Vector xe = c + beta * (xr - c);
      const double fe = eval(xe);
      if (fe < fr) {
        s[n] = xe;
        fv[n] = fe;
      } else {
        s[n] = xr;
        fv[n] = fr;
      }
      continue;
    }
    if (fr < fv[n - 1]) {
      s[n] = xr;
      fv[n] = fr;
      continue;
    }
    bool shrink = false;
    if (fr < fv[n]) {
      const Vector xc = c + gam * (xr - c);
      const double fc = eval(xc);
      if (fc <= fr) {
        s[n] = xc;
        fv[n] = fc;
      } else {
        shrink = true;
      }
    } else {
      const Vector xc = c - gam * (c - s[n]);
      const double fc = eval(xc);
      if (fc < fv[n]) {
        s[n] = xc;
        fv[n] = fc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (int i = 1; i <= n; ++i) {
        s[i] = s[0] + delta * (s[i] - s[0]);
        fv[i] = eval(s[i]);
      }
    }
  }
  const int best = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  r.x = s[best];
  r.value = fv[best];
  return r;
}

}  // namespace detail

// Nelder-Mead with restarts: each restart begins at the incumbent, jittered, with a fresh simplex.
inline OptimResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                               const NelderMeadOptions& opt = {}) {
  if (x0.size() == 0) {
    OptimResult r;
    r.x = x0;
    r.value = f(x0);
    r.evaluations = 1;
    r.converged = true;
    return r;
  }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> N(0.0, 1.0);
  OptimResult best = detail::nelder_mead_once(f, x0, opt.initial_step, opt, opt.max_evaluations);
  best.restart_values.push_back(best.value);
  int total = best.evaluations, iters = best.iterations;
  bool converged = best.converged;
  for (int k = 0; k < opt.restarts && total < opt.max_evaluations; ++k) {
    Vector start = best.x;
    for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += opt.restart_jitter * N(rng);
    if (!std::isfinite(f(start))) start = best.x;
    ++total;
    OptimResult r = detail::nelder_mead_once(f, start, opt.initial_step, opt, opt.max_evaluations - total);
    total += r.evaluations;
    iters += r.iterations;
    if (r.value < best.value) {
      best.x = r.x;
      best.value = r.value;
      converged = r.converged;
    }
    best.restart_values.push_back(r.value);
  }
  best.evaluations = total;
  best.iterations = iters;
  best.restarts_run = static_cast<int>(best.restart_values.size()) - 1;
  best.converged = converged;
  return best;
}

// Central-difference Hessian.
inline Matrix numerical_hessian(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-3) {
  const int n = static_cast<int>(x.size());
  Matrix H(n, n);
  const double f0 = f(x);
  Vector xp = x;
  for (int i = 0; i < n; ++i) {
    xp = x;
    xp(i) += h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          xp = x;
          xp(i) += si * h;
          xp(j) += sj * h;
          acc += si * sj * f(xp);
        }
      }
      H(i, j) = H(j, i) = acc / (4.0 * h * h);
    }
  }
  return H;
}

inline Vector numerical_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp = x;
    xp(i) += h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    g(i) = (fp - f(xp)) / (2.0 * h);
  }
  return g;
}

// Numerical Jacobian of a vector map.
inline Matrix numerical_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double hi = h * std::max(1.0, std::abs(x(i)));
    xp = x;
    xp(i) += hi;
    const Vector fp = f(xp);
    xp(i) = x(i) - hi;
    J.col(i) = (fp - f(xp)) / (2.0 * hi);
  }
  return J;
}

}  // namespace mgpd
