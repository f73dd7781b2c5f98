#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mgpd/core.hpp"

namespace mgpd {

struct QuadResult {
  double log_value = kNegInf;
  double rel_error = 0.0;
  int evaluations = 0;
};

struct QuadOptions {
  double rel_tol = 1e-10;
  double drop = 45.0;  // panels extend until the log-integrand falls this far below its peak
  unsigned max_depth = 12;
};

namespace detail {

template <class F>
struct CountingLog {
  F& f;
  int* count;
  double operator()(double s) const {
    ++*count;
    const double v = f(s);
    return std::isnan(v) ? kNegInf : v;
  }
};

}  // namespace detail

// Integrates exp(logf(s)) over (lo, hi) for a unimodal log-integrand. Panels are laid out
// geometrically around the mode and each is integrated by adaptive Gauss-Kronrod.
template <class F>
QuadResult integrate_log(F&& logf_raw, double lo, double hi, double hint, const QuadOptions& opt = {}) {
  QuadResult res;
  int count = 0;
  detail::CountingLog<std::remove_reference_t<F>> lf{logf_raw, &count};
  auto inside = [&](double s) { return s > lo && s < hi; };

  double s0 = std::isfinite(hint) ? hint : 0.0;
  if (!inside(s0)) {
    if (std::isfinite(lo) && std::isfinite(hi))
      s0 = 0.5 * (lo + hi);
    else if (std::isfinite(hi))
      s0 = hi - 1.0;
    else
      s0 = lo + 1.0;
  }
  double v0 = lf(s0);
  if (!std::isfinite(v0)) {
    bool found = false;
    for (int k = 0; k < 64 && !found; ++k) {
      const double step = std::ldexp(1.0, k - 10);
      for (double cand : {s0 + step, s0 - step}) {
        if (!inside(cand)) continue;
        const double v = lf(cand);
        if (std::isfinite(v)) {
          s0 = cand;
          v0 = v;
          found = true;
          break;
        }
      }
    }
    if (!found) {
      res.evaluations = count;
      return res;
    }
  }

  // Bracket the mode, then refine by golden-section search.
  auto step_to = [&](double from, int dir, double st) {
    double p = from + dir * st;
    const double b = dir > 0 ? hi : lo;
    if (std::isfinite(b) && (dir > 0 ? p >= b : p <= b)) p = 0.5 * (from + b);
    return p;
  };
  double a, b = s0, c, fb = v0;
  {
    double st = 0.5;
    const double r = step_to(s0, 1, st), l = step_to(s0, -1, st);
    const double fr = lf(r), fl = lf(l);
    if (fr <= v0 && fl <= v0) {
      a = l;
      c = r;
    } else {
      const int dir = fr >= fl ? 1 : -1;
      a = s0;
      b = dir > 0 ? r : l;
      fb = dir > 0 ? fr : fl;
      c = b;
      for (int it = 0; it < 300; ++it) {
        st *= 2.0;
        const double nx = step_to(b, dir, st);
        if (std::abs(nx - b) <= 1e-13 * (1.0 + std::abs(b))) {
          c = nx;
          break;
        }
        const double fn = lf(nx);
        if (fn <= fb) {
          c = nx;
          break;
        }
        a = b;
        b = nx;
        fb = fn;
        c = b;
      }
      if (a > c) std::swap(a, c);
    }
  }
  double mode = b, fmode = fb;
  {
    const double g = 0.3819660112501051;
    double aa = a, cc = c;
    double x1 = aa + g * (cc - aa), x2 = cc - g * (cc - aa);
    double f1 = lf(x1), f2 = lf(x2);
    for (int k = 0; k < 100 && (cc - aa) > 1e-4 * (1.0 + std::abs(mode)); ++k) {
      if (f1 < f2) {
        aa = x1;
        x1 = x2;
        f1 = f2;
        x2 = cc - g * (cc - aa);
        f2 = lf(x2);
      } else {
        cc = x2;
        x2 = x1;
        f2 = f1;
        x1 = aa + g * (cc - aa);
        f1 = lf(x1);
      }
    }
    if (f1 > fmode) { mode = x1; fmode = f1; }
    if (f2 > fmode) { mode = x2; fmode = f2; }
  }
  if (!std::isfinite(fmode)) {
    res.evaluations = count;
    if (fmode == kInf) throw NumericalError("integrate_log: integrand is unbounded");
    return res;
  }

  // Local width from the curvature at the mode.
  double w = 1.0;
  {
    const double h = 1e-3 * (1.0 + std::abs(mode));
    if (inside(mode - h) && inside(mode + h)) {
      const double fp = lf(mode + h), fm = lf(mode - h);
      const double curv = (fp - 2.0 * fmode + fm) / (h * h);
      if (std::isfinite(curv) && curv < 0.0) w = 1.0 / std::sqrt(-curv);
    }
    w = std::clamp(w, 1e-6, 1e3);
  }

  std::vector<double> pts{mode};
  for (int side : {1, -1}) {
    const double bound = side > 0 ? hi : lo;
    double dist = w;
    for (int k = 0; k < 80; ++k) {
      double p = mode + side * dist;
      if (std::isfinite(bound) && (side > 0 ? p >= bound : p <= bound)) {
        pts.push_back(bound);
        break;
      }
      pts.push_back(p);
      if (lf(p) < fmode - opt.drop) break;
      dist *= 2.0;
    }
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  auto g = [&](double s) {
    const double v = lf(s);
    return v == kNegInf ? 0.0 : std::exp(v - fmode);
  };
  // One Gauss-Kronrod pass per panel, then refine only panels whose error exceeds their share of the budget.
  using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
  const std::size_t np = pts.size() - 1;
  std::vector<double> val(np), er(np), l1(np);
  double total = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    val[i] = GK::integrate(g, pts[i], pts[i + 1], 0, 0.0, &er[i], &l1[i]);
    total += val[i];
  }
  double err = 0.0;
  if (total > 0.0) {
    const double budget = opt.rel_tol * total / static_cast<double>(np);
    for (std::size_t i = 0; i < np; ++i) {
      if (er[i] > budget && l1[i] > 0.0) {
        const double tol = std::min(0.1, budget / l1[i]);
        total -= val[i];
        val[i] = GK::integrate(g, pts[i], pts[i + 1], opt.max_depth, tol, &er[i], &l1[i]);
        total += val[i];
      }
      err += er[i];
    }
  }
  res.evaluations = count;
  if (!(total > 0.0)) return res;
  res.log_value = fmode + std::log(total);
  res.rel_error = err / total;
  return res;
}

// Plain adaptive Gauss-Kronrod on a finite interval.
template <class F>
double integrate_gk(F&& f, double a, double b, double rel_tol = 1e-10, double* error = nullptr, unsigned depth = 15) {
  double e = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, depth, rel_tol, &e);
  if (error) *error = e;
  return v;
}

}  // namespace mgpd
