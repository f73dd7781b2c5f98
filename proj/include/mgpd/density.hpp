#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mgpd/core.hpp"
#include "mgpd/generators.hpp"
#include "mgpd/model.hpp"
#include "mgpd/mvn.hpp"
#include "mgpd/quadrature.hpp"
#include "mgpd/special.hpp"

namespace mgpd {

enum class EvalMethod { ClosedForm, Quadrature };

struct StdDensityEval {
  double log_density = kNegInf;
  EvalMethod method = EvalMethod::ClosedForm;
  std::optional<double> quad_error;
  bool flagged = false;
};

struct EvalOptions {
  double rel_tol = 1e-10;   // quadrature target
  double flag_tol = 1e-8;   // evaluations whose error estimate exceeds this are flagged
  double fail_tol = 1e-5;   // scalar API throws above this
  MvnOptions mvn{};
};

using CensorMask = std::vector<char>;

namespace detail {

// A rough centre of V_j, used to start the mode search of s-integrands.
inline double typical_location(const GeneratorSpec& g, int j) {
  switch (g.family()) {
    case Family::IndepGumbel:
    case Family::IndepReverseGumbel:
    case Family::Gaussian: return g.beta()(j);
    case Family::IndepReverseExp: return -g.beta()(j) - 1.0 / g.alpha()(j);
    case Family::IndepLogGamma: return std::log(g.alpha()(j));
    case Family::StructuredExp: return std::log(exp_moment(g, j));
  }
  return 0.0;
}

inline StdDensityEval from_quad(const QuadResult& q, double shift, const EvalOptions& opt) {
  StdDensityEval e;
  e.method = EvalMethod::Quadrature;
  e.log_density = q.log_value == kNegInf ? kNegInf : q.log_value + shift;
  e.quad_error = q.rel_error;
  e.flagged = q.rel_error > opt.flag_tol;
  return e;
}

inline StdDensityEval closed(double v) {
  StdDensityEval e;
  e.log_density = v;
  return e;
}

}  // namespace detail

// Standard-form (sigma = 1, gamma = 0) densities for T and U constructions with a prepared generator.
class StandardForm {
 public:
  StandardForm(GeneratorSpec g, Form form, EvalOptions opt = {}) : g_(std::move(g)), form_(form), opt_(opt) {
    if (form_ == Form::R || g_.family() == Family::StructuredExp) {
      if (g_.family() != Family::StructuredExp || form_ == Form::T) {
        throw std::invalid_argument("StandardForm: invalid family/form combination");
      }
    }
    d_ = g_.dim();
    rho_ = form_ == Form::T ? 0.0 : 1.0;
    if (g_.family() == Family::Gaussian) prepare_gaussian();
    if (g_.family() == Family::Gaussian && d_ <= 10) {
      gctx_.resize(std::size_t{1} << d_);
      for (std::size_t mask = 1; mask + 1 < gctx_.size(); ++mask) {
        CensorMask cm(d_, 0);
        for (int j = 0; j < d_; ++j) cm[j] = (mask >> j) & 1U;
        gctx_[mask] = std::make_shared<const GaussCtx>(gauss_context(cm));
      }
    }
    if (form_ != Form::T) {
      if (!admissible_u(g_)) throw std::invalid_argument("U form requires finite exponential moments E[e^{U_j}]");
      compute_norm_const();
    }
  }

  const GeneratorSpec& generator() const { return g_; }
  Form form() const { return form_; }
  int dim() const { return d_; }
  double log_norm_const() const { return log_norm_; }
  double norm_const_error() const { return norm_err_; }

  bool has_closed_form() const {
    switch (g_.family()) {
      case Family::IndepGumbel:
      case Family::IndepReverseGumbel: return g_.equal_alpha();
      case Family::IndepReverseExp:
      case Family::IndepLogGamma:
      case Family::Gaussian:
      case Family::StructuredExp: return true;
    }
    return false;
  }

  StdDensityEval log_density(const Vector& x) const {
    if (x.size() != d_) throw std::invalid_argument("log density: dimension mismatch");
    const double mx = x.maxCoeff();
    if (!(mx >= 0.0)) return detail::closed(kNegInf);
    if (!x.allFinite()) return detail::closed(kNegInf);
    if (!has_closed_form()) return log_density_quadrature(x);
    switch (g_.family()) {
      case Family::IndepGumbel: return detail::closed(gumbel_equal(x, mx));
      case Family::IndepReverseGumbel: return detail::closed(reverse_gumbel_equal(x, mx));
      case Family::IndepReverseExp: return detail::closed(reverse_exp(x, CensorMask(d_, 0), mx));
      case Family::IndepLogGamma: return detail::closed(log_gamma(x, mx));
      case Family::Gaussian: return detail::closed(gaussian(x, mx));
      case Family::StructuredExp: return detail::closed(structured_gamma0(x));
    }
    return detail::closed(kNegInf);
  }

  // Direct quadrature of the s-integral, regardless of closed-form availability.
  StdDensityEval log_density_quadrature(const Vector& x) const {
    const double mx = x.maxCoeff();
    if (!(mx >= 0.0)) return detail::closed(kNegInf);
    double hint = 0.0;
    for (int j = 0; j < d_; ++j) hint += detail::typical_location(g_, j) - x(j);
    hint /= d_;
    QuadOptions qo;
    qo.rel_tol = opt_.rel_tol;
    QuadResult q;
    if (g_.family() == Family::IndepGumbel || g_.family() == Family::IndepReverseGumbel) {
      const ExpSumKernel k = exp_sum_kernel(x, CensorMask(d_, 0));
      q = integrate_log(k, kNegInf, kInf, hint, qo);
    } else {
      Vector buf(d_);
      auto lf = [&](double s) {
        buf = x.array() + s;
        return gen_log_density(g_, buf) + rho_ * s;
      };
      double hi = kInf;
      if (g_.family() == Family::IndepReverseExp) hi = -(x + g_.beta()).maxCoeff();
      q = integrate_log(lf, kNegInf, hi, std::min(hint, hi - 1.0), qo);
    }
    const double shift = form_ == Form::T ? -mx : -log_norm_;
    return detail::from_quad(q, shift, opt_);
  }

  // x holds standard-scale values for uncensored components and standard-scale censor bounds
  // for the components flagged in `cens`.
  StdDensityEval log_censored(const Vector& x, const CensorMask& cens) const {
    bool any = false;
    double mx = kNegInf;
    for (int j = 0; j < d_; ++j) {
      if (cens[j]) {
        any = true;
        if (x(j) == kNegInf) return detail::closed(kNegInf);
      } else {
        mx = std::max(mx, x(j));
      }
    }
    if (!any) return log_density(x);
    if (!(mx > 0.0)) throw std::invalid_argument("censored contribution requires an uncensored positive component");
    switch (g_.family()) {
      case Family::IndepGumbel:
        if (g_.equal_alpha()) return detail::closed(gumbel_equal_censored(x, cens, mx));
        break;
      case Family::IndepReverseExp:
        return detail::closed(reverse_exp(x, cens, mx));
      case Family::Gaussian:
        return detail::closed(gaussian_censored(x, cens, mx));
      case Family::StructuredExp:
        throw std::invalid_argument("structured censoring is handled by StructuredForm");
      default: break;
    }
    return censored_quadrature(x, cens, mx);
  }

  // Quadrature route for censored contributions of independent-component generators.
  StdDensityEval censored_quadrature(const Vector& x, const CensorMask& cens, double mx) const {
    require_independent(g_);
    double hint = 0.0;
    int nu = 0;
    for (int j = 0; j < d_; ++j) {
      if (!cens[j]) {
        hint += detail::typical_location(g_, j) - x(j);
        ++nu;
      }
    }
    hint /= nu;
    double hi = kInf;
    if (g_.family() == Family::IndepReverseExp) {
      for (int j = 0; j < d_; ++j)
        if (!cens[j]) hi = std::min(hi, -(x(j) + g_.beta()(j)));
    }
    auto lf = [&](double s) {
      double acc = rho_ * s;
      for (int j = 0; j < d_; ++j) {
        acc += cens[j] ? gen_component_log_cdf(g_, j, x(j) + s) : gen_component_log_pdf(g_, j, x(j) + s);
        if (acc == kNegInf) return kNegInf;
      }
      return acc;
    };
    QuadOptions qo;
    qo.rel_tol = opt_.rel_tol;
    const QuadResult q = g_.family() == Family::IndepGumbel ? integrate_log(exp_sum_kernel(x, cens), kNegInf, kInf, hint, qo)
                                                            : integrate_log(lf, kNegInf, hi, std::min(hint, hi - 1.0), qo);
    const double shift = form_ == Form::T ? -mx : -log_norm_;
    return detail::from_quad(q, shift, opt_);
  }

 private:
  // log-integrand c + b s - sum_k exp(la_k + e_k s)
  struct ExpSumKernel {
    double c = 0.0, b = 0.0;
    std::vector<double> la, e;
    double operator()(double s) const {
      double acc = c + b * s;
      for (std::size_t k = 0; k < la.size(); ++k) acc -= std::exp(la[k] + e[k] * s);
      return acc;
    }
  };

  // Gumbel: uncensored and censored components; reverse Gumbel: uncensored only.
  ExpSumKernel exp_sum_kernel(const Vector& x, const CensorMask& cens) const {
    const bool rev = g_.family() == Family::IndepReverseGumbel;
    ExpSumKernel k;
    k.b = rho_;
    for (int j = 0; j < d_; ++j) {
      const double al = g_.alpha()(j);
      const double z = al * (x(j) - g_.beta()(j));
      if (!cens[j]) {
        k.c += std::log(al) + (rev ? z : -z);
        k.b += rev ? al : -al;
      }
      const double lg = rev ? z : -z;
      const double e = rev ? al : -al;
      bool merged = false;
      for (std::size_t m = 0; m < k.e.size() && !merged; ++m) {
        if (k.e[m] == e) {
          k.la[m] = log_sum_exp(k.la[m], lg);
          merged = true;
        }
      }
      if (!merged) {
        k.la.push_back(lg);
        k.e.push_back(e);
      }
    }
    return k;
  }

  struct GaussCtx {
    int k = -1;
    IndexList O, C;
    Vector muO_T, muC_T, muO_U, muC_U;
    Matrix SOO_inv;
    double logdet_OO = 0.0;
    Matrix B;
    Matrix cond_cov;
  };

  void prepare_gaussian() {
    const Matrix& S = g_.covariance();
    Eigen::LLT<Matrix> llt(S);
    P_ = llt.solve(Matrix::Identity(d_, d_));
    P1_ = P_ * Vector::Ones(d_);
    a_ = P1_.sum();
  }

  GaussCtx gauss_context(const CensorMask& cens) const {
    GaussCtx c;
    for (int j = 0; j < d_; ++j)
      if (!cens[j]) {
        c.k = j;
        break;
      }
    for (int j = 0; j < d_; ++j) {
      if (j == c.k) continue;
      (cens[j] ? c.C : c.O).push_back(j);
    }
    const Matrix& S = g_.covariance();
    const int k = c.k;
    auto cov_d = [&](int i, int j) { return S(i, j) - S(i, k) - S(j, k) + S(k, k); };
    const int no = static_cast<int>(c.O.size()), nc = static_cast<int>(c.C.size());
    Matrix SOO(no, no), SCO(nc, no), SCC(nc, nc);
    for (int a = 0; a < no; ++a)
      for (int b = 0; b < no; ++b) SOO(a, b) = cov_d(c.O[a], c.O[b]);
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < no; ++b) SCO(a, b) = cov_d(c.C[a], c.O[b]);
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) SCC(a, b) = cov_d(c.C[a], c.C[b]);
    const Vector& beta = g_.beta();
    const Vector tilt = beta + S.col(k);
    c.muO_T.resize(no);
    c.muO_U.resize(no);
    c.muC_T.resize(nc);
    c.muC_U.resize(nc);
    for (int a = 0; a < no; ++a) {
      c.muO_T(a) = beta(c.O[a]) - beta(k);
      c.muO_U(a) = tilt(c.O[a]) - tilt(k);
    }
    for (int a = 0; a < nc; ++a) {
      c.muC_T(a) = beta(c.C[a]) - beta(k);
      c.muC_U(a) = tilt(c.C[a]) - tilt(k);
    }
    if (no > 0) {
      Eigen::LLT<Matrix> llt(SOO);
      const Matrix L = llt.matrixL();
      c.logdet_OO = 2.0 * L.diagonal().array().log().sum();
      c.SOO_inv = llt.solve(Matrix::Identity(no, no));
      c.B = SCO * c.SOO_inv;
      c.cond_cov = SCC - c.B * SCO.transpose();
    } else {
      c.B = Matrix(nc, 0);
      c.cond_cov = SCC;
    }
    return c;
  }

  double gaussian_censored(const Vector& x, const CensorMask& cens, double mx) const {
    std::shared_ptr<const GaussCtx> cached;
    if (!gctx_.empty()) {
      std::size_t mask = 0;
      for (int j = 0; j < d_; ++j)
        if (cens[j]) mask |= std::size_t{1} << j;
      cached = gctx_[mask];
    }
    const GaussCtx local = cached ? GaussCtx{} : gauss_context(cens);
    const GaussCtx& c = cached ? *cached : local;
    const bool T = form_ == Form::T;
    const int no = static_cast<int>(c.O.size()), nc = static_cast<int>(c.C.size());
    Vector dO(no);
    for (int a = 0; a < no; ++a) dO(a) = x(c.O[a]) - x(c.k) - (T ? c.muO_T(a) : c.muO_U(a));
    double lphi = 0.0;
    if (no > 0) lphi = -0.5 * no * kLogTwoPi - 0.5 * c.logdet_OO - 0.5 * dO.dot(c.SOO_inv * dO);
    Vector ub(nc);
    const Vector mC = (T ? c.muC_T : c.muC_U) + c.B * dO;
    for (int a = 0; a < nc; ++a) ub(a) = x(c.C[a]) - x(c.k) - mC(a);
    const double p = mvn_cdf(ub, c.cond_cov, opt_.mvn);
    if (!(p > 0.0)) return kNegInf;
    if (T) return -mx + lphi + std::log(p);
    return -x(c.k) + log_exp_moment(g_, c.k) + lphi + std::log(p) - log_norm_;
  }

  double gaussian(const Vector& x, double mx) const {
    const Vector y = x - g_.beta();
    const double b = P1_.dot(y);
    const double yAy = y.dot(P_ * y) - b * b / a_;
    const double base = 0.5 * (1 - d_) * kLogTwoPi - 0.5 * g_.log_det() - 0.5 * std::log(a_);
    if (form_ == Form::T) return base - 0.5 * yAy - mx;
    return base - log_norm_ - 0.5 * (yAy + (2.0 * b - 1.0) / a_);
  }

  double gumbel_equal(const Vector& x, double mx) const {
    const double al = g_.alpha()(0);
    Vector z(d_);
    for (int j = 0; j < d_; ++j) z(j) = -al * (x(j) - g_.beta()(j));
    const double lse = log_sum_exp(z);
    if (form_ == Form::T) return -mx + (d_ - 1) * std::log(al) + lgamma_fn(d_) + z.sum() - d_ * lse;
    return (d_ - 1) * std::log(al) + lgamma_fn(d_ - 1.0 / al) + z.sum() - (d_ - 1.0 / al) * lse - log_norm_;
  }

  double gumbel_equal_censored(const Vector& x, const CensorMask& cens, double mx) const {
    const double al = g_.alpha()(0);
    Vector z(d_);
    double sum_unc = 0.0;
    int m = 0;
    for (int j = 0; j < d_; ++j) {
      z(j) = -al * (x(j) - g_.beta()(j));
      if (!cens[j]) {
        sum_unc += z(j);
        ++m;
      }
    }
    const double lse = log_sum_exp(z);
    if (form_ == Form::T) return -mx + (m - 1) * std::log(al) + lgamma_fn(m) + sum_unc - m * lse;
    return (m - 1) * std::log(al) + lgamma_fn(m - 1.0 / al) + sum_unc - (m - 1.0 / al) * lse - log_norm_;
  }

  double reverse_gumbel_equal(const Vector& x, double mx) const {
    const double al = g_.alpha()(0);
    Vector z(d_);
    for (int j = 0; j < d_; ++j) z(j) = al * (x(j) - g_.beta()(j));
    const double lse = log_sum_exp(z);
    if (form_ == Form::T) return -mx + (d_ - 1) * std::log(al) + lgamma_fn(d_) + z.sum() - d_ * lse;
    return (d_ - 1) * std::log(al) + lgamma_fn(d_ + 1.0 / al) + z.sum() - (d_ + 1.0 / al) * lse - log_norm_;
  }

  // Piecewise-exponential s-integral for reverse-exponential generators (censored or not).
  double reverse_exp(const Vector& x, const CensorMask& cens, double mx) const {
    const Vector& al = g_.alpha();
    const Vector& be = g_.beta();
    double s_hi = kInf, K = 0.0, A = rho_;
    struct Brk {
      double c, a, off;
    };
    std::vector<Brk> brk;
    for (int j = 0; j < d_; ++j) {
      if (!cens[j]) {
        s_hi = std::min(s_hi, -(x(j) + be(j)));
        K += std::log(al(j)) + al(j) * (x(j) + be(j));
        A += al(j);
      }
    }
    for (int j = 0; j < d_; ++j) {
      if (!cens[j]) continue;
      const double off = x(j) + be(j);
      const double c = -off;
      if (c >= s_hi) {
        K += al(j) * off;
        A += al(j);
      } else {
        brk.push_back({c, al(j), off});
      }
    }
    std::sort(brk.begin(), brk.end(), [](const Brk& p, const Brk& q) { return p.c < q.c; });
    double Kc = K, Ac = A;
    for (const auto& b : brk) {
      Kc += b.a * b.off;
      Ac += b.a;
    }
    std::vector<double> terms;
    double lo = kNegInf;
    for (std::size_t i = 0; i <= brk.size(); ++i) {
      const double hi = i < brk.size() ? brk[i].c : s_hi;
      double t;
      if (lo == kNegInf)
        t = Kc + Ac * hi - std::log(Ac);
      else
        t = Kc + Ac * hi + log1mexp(-Ac * (hi - lo)) - std::log(Ac);
      if (hi > lo) terms.push_back(t);
      if (i < brk.size()) {
        Kc -= brk[i].a * brk[i].off;
        Ac -= brk[i].a;
        lo = hi;
      }
    }
    const double li = log_sum_exp(terms);
    if (form_ == Form::T) return li - mx;
    return li - log_norm_;
  }

  double log_gamma(const Vector& x, double mx) const {
    const Vector& al = g_.alpha();
    const double sa = al.sum();
    double lg = 0.0;
    for (int j = 0; j < d_; ++j) lg += lgamma_fn(al(j));
    const double lin = al.dot(x);
    const double lse = log_sum_exp(x);
    if (form_ == Form::T) return lgamma_fn(sa) - lg + lin - mx - sa * lse;
    return lgamma_fn(sa + 1.0) - lg + lin - (sa + 1.0) * lse - log_norm_;
  }

  double structured_gamma0(const Vector& x) const {
    const Vector& lam = g_.lambda();
    double prev = 0.0, prev_x = kNegInf, Q = 0.0;
    for (int j = 0; j < d_; ++j) {
      if (!(x(j) > prev_x)) return kNegInf;
      const double z = std::exp(x(j));
      Q += lam(j) * (z - prev);
      prev = z;
      prev_x = x(j);
    }
    return lgamma_fn(d_ + 1.0) + lam.array().log().sum() + x.sum() - (d_ + 1.0) * std::log(Q) - log_norm_;
  }

  void compute_norm_const() {
    norm_err_ = 0.0;
    switch (g_.family()) {
      case Family::IndepGumbel:
        if (g_.equal_alpha()) {
          const double al = g_.alpha()(0);
          Vector z = al * g_.beta();
          log_norm_ = lgamma_fn(1.0 - 1.0 / al) + log_sum_exp(z) / al;
          return;
        }
        break;
      case Family::IndepReverseExp: {
        log_norm_ = std::log(reverse_exp_norm());
        return;
      }
      case Family::Gaussian: {
        log_norm_ = gaussian_log_norm();
        return;
      }
      case Family::StructuredExp: {
        log_norm_ = std::log((1.0 / g_.lambda().array()).sum());
        return;
      }
      default: break;
    }
    const QuadResult q = norm_const_quadrature();
    if (q.log_value == kNegInf || q.rel_error > opt_.fail_tol) {
      throw NumericalError("normalizing constant quadrature did not converge");
    }
    log_norm_ = q.log_value;
    norm_err_ = q.rel_error;
  }

 public:
  // E[e^{max U}] by quadrature of e^s (1 - prod_j F_j(s)), independent families only.
  QuadResult norm_const_quadrature() const {
    require_independent(g_);
    double hint = kNegInf;
    for (int j = 0; j < d_; ++j) hint = std::max(hint, std::log(exp_moment(g_, j)));
    auto lf = [&](double s) {
      double lF = 0.0;
      for (int j = 0; j < d_; ++j) lF += gen_component_log_cdf(g_, j, s);
      if (lF >= 0.0) return kNegInf;
      return s + log1mexp(lF);
    };
    QuadOptions qo;
    qo.rel_tol = opt_.rel_tol;
    return integrate_log(lf, kNegInf, kInf, hint, qo);
  }

  double reverse_exp_norm() const {
    const Vector& al = g_.alpha();
    const Vector& be = g_.beta();
    std::vector<int> idx(d_);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int p, int q) { return be(p) > be(q); });  // ascending t = e^{-beta}
    double N = 0.0, prev = 0.0;
    for (int k = 0; k < d_; ++k) {
      const double tk = std::exp(-be(idx[k]));
      double A = 0.0, logc = 0.0;
      for (int i = k; i < d_; ++i) {
        A += al(idx[i]);
        logc += al(idx[i]) * be(idx[i]);
      }
      auto F = [&](double t) { return t <= 0.0 ? 0.0 : std::exp(logc + (A + 1.0) * std::log(t)); };
      N += (tk - prev) - (F(tk) - F(prev)) / (A + 1.0);
      prev = tk;
    }
    return N;
  }

  double gaussian_log_norm() const {
    const Matrix& S = g_.covariance();
    const Vector& beta = g_.beta();
    if (d_ == 1) return beta(0) + 0.5 * S(0, 0);
    std::vector<double> terms;
    for (int k = 0; k < d_; ++k) {
      const Vector tilt = beta + S.col(k);
      Vector mu(d_ - 1);
      Matrix C(d_ - 1, d_ - 1);
      IndexList others;
      for (int j = 0; j < d_; ++j)
        if (j != k) others.push_back(j);
      for (int a = 0; a < d_ - 1; ++a) {
        mu(a) = tilt(others[a]) - tilt(k);
        for (int b = 0; b < d_ - 1; ++b) C(a, b) = S(others[a], others[b]) - S(others[a], k) - S(others[b], k) + S(k, k);
      }
      const double p = mvn_cdf(-mu, C, opt_.mvn);
      if (p > 0.0) terms.push_back(log_exp_moment(g_, k) + std::log(p));
    }
    return log_sum_exp(terms);
  }

  // Independent check of the Gaussian constant: quadrature of 1 - Phi_d(s 1 - beta; Sigma) in s.
  QuadResult gaussian_norm_quadrature() const {
    const Matrix& S = g_.covariance();
    auto lf = [&](double s) {
      const Vector b = Vector::Constant(d_, s) - g_.beta();
      const double p = mvn_cdf(b, S, opt_.mvn);
      if (p >= 1.0) return kNegInf;
      return s + std::log1p(-p);
    };
    QuadOptions qo;
    qo.rel_tol = 1e-9;
    double hint = g_.beta().maxCoeff();
    return integrate_log(lf, kNegInf, kInf, hint, qo);
  }

 private:
  GeneratorSpec g_;
  Form form_;
  EvalOptions opt_;
  int d_ = 0;
  double rho_ = 0.0;
  double log_norm_ = 0.0;
  double norm_err_ = 0.0;
  Matrix P_;
  Vector P1_;
  std::vector<std::shared_ptr<const GaussCtx>> gctx_;
  double a_ = 0.0;
};

// R-form model built on cumulative sums of exponentials with common sigma and gamma >= 0.
class StructuredForm {
 public:
  StructuredForm(Vector lambda, double sigma, double gamma) : lam_(std::move(lambda)), sigma_(sigma), gamma_(gamma) {
    if (lam_.size() < 1) throw std::invalid_argument("structured model: empty lambda");
    for (Eigen::Index j = 0; j < lam_.size(); ++j)
      if (!(lam_(j) > 0.0) || !std::isfinite(lam_(j))) throw std::invalid_argument("structured model: lambda must be positive");
    if (!(sigma_ > 0.0)) throw std::invalid_argument("structured model: sigma must be positive");
    if (!(gamma_ >= 0.0) || !std::isfinite(gamma_)) throw std::invalid_argument("structured model: gamma must be >= 0");
    d_ = static_cast<int>(lam_.size());
    sum_log_lam_ = lam_.array().log().sum();
    if (gamma_ == 0.0) {
      log_norm0_ = std::log((1.0 / lam_.array()).sum());
    } else {
      kappa_ = 1.0 / gamma_;
      const double lf = log_erlang_factor(d_);
      log_K_ = lgamma_fn(d_ + kappa_) - lgamma_fn(kappa_) - kappa_ * std::log(gamma_ / sigma_) - lf;
    }
  }

  int dim() const { return d_; }
  const Vector& lambda() const { return lam_; }
  double sigma() const { return sigma_; }
  double gamma() const { return gamma_; }

  // log E[R_j^kappa] for the cumulative sum of the first j+1 components (gamma > 0), log E[R_j] at gamma = 0.
  double log_moment(int j) const {
    if (gamma_ == 0.0) return std::log((1.0 / lam_.head(j + 1).array()).sum());
    double s = 0.0;
    for (int i = 0; i <= j; ++i) s += std::log(lam_(i));
    return lgamma_fn(kappa_ + 1.0) + s + log_erlang_factor(j + 1);
  }

  // P(X_j > 0) = E[e^{U_j}] / E[e^{max U}].
  double exceedance_probability(int j) const { return std::exp(log_moment(j) - log_moment(d_ - 1)); }

  double log_density(const Vector& x) const { return log_censored(x, CensorMask(d_, 0), 0.0); }

  // Observed-scale contribution with the components in `cens` integrated below the common bound v.
  double log_censored(const Vector& x, const CensorMask& cens, double v) const {
    if (x.size() != d_) throw std::invalid_argument("structured model: dimension mismatch");
    int m = 0;
    while (m < d_ && cens[m]) ++m;
    for (int j = m; j < d_; ++j)
      if (cens[j]) return kNegInf;
    if (m == d_) return kNegInf;
    if (!(x(d_ - 1) > 0.0)) return kNegInf;
    for (int j = m + 1; j < d_; ++j)
      if (x(j) < x(j - 1)) return kNegInf;
    std::vector<double> kap(m);
    for (int j = 0; j < m; ++j) kap[j] = lam_(j) - lam_(m);
    if (gamma_ == 0.0) {
      std::vector<double> z(d_);
      for (int j = m; j < d_; ++j) z[j] = std::exp(x(j) / sigma_);
      double B = lam_(m) * z[m];
      for (int j = m + 1; j < d_; ++j) B += lam_(j) * (z[j] - z[j - 1]);
      double bound = 0.0;
      if (m > 0) {
        bound = std::exp(v / sigma_);
        if (!(x(m) > v)) return kNegInf;
      }
      const double lI = log_simplex_power_integral(B, kap, bound, d_ + 1.0);
      double sx = 0.0;
      for (int j = m; j < d_; ++j) sx += x(j) / sigma_;
      return lgamma_fn(d_ + 1.0) - log_norm0_ + sum_log_lam_ + sx + lI - (d_ - m) * std::log(sigma_);
    }
    const double shift = sigma_ / gamma_;
    std::vector<double> w(d_);
    for (int j = m; j < d_; ++j) w[j] = x(j) + shift;
    if (!(w[m] > 0.0)) return kNegInf;
    double B = lam_(m) * w[m];
    for (int j = m + 1; j < d_; ++j) B += lam_(j) * (w[j] - w[j - 1]);
    double bound = 0.0;
    if (m > 0) {
      bound = v + shift;
      if (!(bound > 0.0)) return kNegInf;
      if (!(x(m) > v)) return kNegInf;
    }
    const double lI = log_simplex_power_integral(B, kap, bound, d_ + kappa_);
    return log_K_ + lI;
  }

 private:
  // log of (-1)^{n-1} times the divided difference of y^{-kappa-1} over lambda_1..lambda_n.
  double log_erlang_factor(int n) const {
    std::vector<double> nodes(lam_.data(), lam_.data() + n);
    const SignedLog dd = power_divided_difference(nodes, 0.0, -kappa_ - 1.0);
    return dd.log_abs;
  }

  Vector lam_;
  double sigma_ = 1.0;
  double gamma_ = 0.0;
  int d_ = 0;
  double kappa_ = 0.0;
  double sum_log_lam_ = 0.0;
  double log_norm0_ = 0.0;
  double log_K_ = 0.0;
};

// Observed-scale densities and censored contributions for any GpModel.
class ModelEvaluator {
 public:
  explicit ModelEvaluator(GpModel model, EvalOptions opt = {}) : model_(std::move(model)), opt_(opt) {
    if (model_.form() == Form::R) {
      str_ = std::make_unique<StructuredForm>(model_.generator().lambda(), model_.margins().sigma(0), model_.margins().gamma(0));
    } else {
      std_ = std::make_unique<StandardForm>(model_.generator(), model_.form(), opt_);
    }
  }

  const GpModel& model() const { return model_; }
  const StandardForm* standard_form() const { return std_.get(); }
  const StructuredForm* structured_form() const { return str_.get(); }

  StdDensityEval log_density_eval(const Vector& x) const {
    if (x.size() != model_.dim()) throw std::invalid_argument("log_density_observed: dimension mismatch");
    if (!(x.maxCoeff() >= 0.0)) return detail::closed(kNegInf);
    if (str_) return detail::closed(str_->log_density(x));
    const MarginalParams& mg = model_.margins();
    Vector x0(x.size());
    for (int j = 0; j < mg.dim(); ++j) {
      if (!(1.0 + mg.gamma(j) * x(j) / mg.sigma(j) > 0.0)) return detail::closed(kNegInf);
      x0(j) = standard_from_observed(x(j), mg.sigma(j), mg.gamma(j));
    }
    StdDensityEval e = std_->log_density(x0);
    if (e.log_density != kNegInf) e.log_density -= log_jacobian_observed(x, mg);
    return e;
  }

  double log_density(const Vector& x) const { return checked(log_density_eval(x)); }

  // x = y - u, v = censor floor.
  StdDensityEval log_censored_eval(const Vector& x, const Vector& v) const {
    const int d = model_.dim();
    if (x.size() != d || v.size() != d) throw std::invalid_argument("log_censored_contribution: dimension mismatch");
    if (!(x.maxCoeff() > 0.0)) throw std::invalid_argument("log_censored_contribution: observation does not exceed the threshold");
    CensorMask cens(d, 0);
    bool any = false;
    for (int j = 0; j < d; ++j) {
      cens[j] = x(j) <= v(j) ? 1 : 0;
      any = any || cens[j];
    }
    if (!any) return log_density_eval(x);
    return log_censored_eval(x, v, cens);
  }

  StdDensityEval log_censored_eval(const Vector& x, const Vector& v, const CensorMask& cens) const {
    const int d = model_.dim();
    if (str_) {
      double vb = kNaN();
      for (int j = 0; j < d; ++j) {
        if (v(j) != v(0)) throw std::invalid_argument("structured model censoring requires a common censor floor");
      }
      vb = v(0);
      return detail::closed(str_->log_censored(x, cens, vb));
    }
    const MarginalParams& mg = model_.margins();
    Vector x0(d);
    double jac = 0.0;
    for (int j = 0; j < d; ++j) {
      if (cens[j]) {
        x0(j) = standard_from_observed(v(j), mg.sigma(j), mg.gamma(j));
        if (x0(j) == kNegInf) return detail::closed(kNegInf);
      } else {
        if (!(1.0 + mg.gamma(j) * x(j) / mg.sigma(j) > 0.0)) return detail::closed(kNegInf);
        x0(j) = standard_from_observed(x(j), mg.sigma(j), mg.gamma(j));
        jac += std::log(mg.sigma(j) + mg.gamma(j) * x(j));
      }
    }
    StdDensityEval e = std_->log_censored(x0, cens);
    if (e.log_density != kNegInf) e.log_density -= jac;
    return e;
  }

  double log_censored(const Vector& x, const Vector& v) const { return checked(log_censored_eval(x, v)); }

  double checked(const StdDensityEval& e) const {
    if (e.quad_error && *e.quad_error > opt_.fail_tol) {
      throw NumericalError("density quadrature failed to reach tolerance (error estimate " + std::to_string(*e.quad_error) + ")");
    }
    return e.log_density;
  }

 private:
  static double kNaN() { return std::numeric_limits<double>::quiet_NaN(); }

  GpModel model_;
  EvalOptions opt_;
  std::unique_ptr<StandardForm> std_;
  std::unique_ptr<StructuredForm> str_;
};

// ---- Scalar convenience API ----

inline double log_h_T(const GeneratorSpec& g, const Vector& x) {
  StandardForm sf(g, Form::T);
  const StdDensityEval e = sf.log_density(x);
  if (e.quad_error && *e.quad_error > 1e-5) throw NumericalError("log_h_T: quadrature did not converge");
  return e.log_density;
}

inline double log_h_U(const GeneratorSpec& g, const Vector& x) {
  StandardForm sf(g, Form::U);
  const StdDensityEval e = sf.log_density(x);
  if (e.quad_error && *e.quad_error > 1e-5) throw NumericalError("log_h_U: quadrature did not converge");
  return e.log_density;
}

inline double norm_const_U(const GeneratorSpec& g) {
  if (g.family() == Family::StructuredExp) return (1.0 / g.lambda().array()).sum();
  StandardForm sf(g, Form::U);
  return std::exp(sf.log_norm_const());
}

inline double log_h_R_structured(const Vector& lambda, double sigma, double gamma, const Vector& x) {
  StructuredForm s(lambda, sigma, gamma);
  return s.log_density(x);
}

inline double log_density_observed(const GpModel& model, const Vector& x) {
  ModelEvaluator ev(model);
  return ev.log_density(x);
}

}  // namespace mgpd
