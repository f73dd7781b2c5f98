#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "mgpd/mgpd.hpp"
#include "support/oracle.hpp"

#ifndef MGPD_CLI_PATH
#define MGPD_CLI_PATH "mgpd_cli"
#endif
#ifndef MGPD_DATA_DIR
#define MGPD_DATA_DIR "tests/data"
#endif

namespace fs = std::filesystem;
using namespace mgpd;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  int k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

Matrix corr3(double r12, double r13, double r23) {
  Matrix R(3, 3);
  R << 1, r12, r13, r12, 1, r23, r13, r23, 1;
  return R;
}

Matrix corr2(double r) {
  Matrix R(2, 2);
  R << 1, r, r, 1;
  return R;
}

struct NamedModel {
  std::string name;
  GpModel model;
};

// ---- 1: density normalization ----

std::vector<NamedModel> normalization_models() {
  std::vector<NamedModel> out;
  auto add = [&](const std::string& n, Form f, GeneratorSpec g, MarginalParams mg) { out.push_back({n, GpModel(f, std::move(g), std::move(mg))}); };
  const MarginalParams m2a(vec({1.0, 2.0}), vec({0.0, 0.2}));
  const MarginalParams m3a(vec({1.0, 1.5, 0.7}), vec({0.1, 0.0, -0.1}));
  const MarginalParams m2b(vec({0.5, 1.0}), vec({0.3, 0.0}));
  for (Form f : {Form::T, Form::U}) {
    const std::string tag = f == Form::T ? "T" : "U";
    add("gumbel " + tag + " equal d=2", f, GeneratorSpec::indep_gumbel(vec({1.5, 1.5}), vec({0.0, 0.0})), m2a);
    add("gumbel " + tag + " equal d=3", f, GeneratorSpec::indep_gumbel(vec({2.5, 2.5, 2.5}), vec({0.0, 0.5, -0.5})), m3a);
    add("gumbel " + tag + " unequal d=2", f, GeneratorSpec::indep_gumbel(vec({1.3, 3.0}), vec({0.0, 1.0})), m2b);
    add("reverse_gumbel " + tag + " equal d=2", f, GeneratorSpec::indep_reverse_gumbel(vec({1.0, 1.0}), vec({0.0, 0.3})), m2a);
    add("reverse_gumbel " + tag + " equal d=3", f, GeneratorSpec::indep_reverse_gumbel(vec({2.0, 2.0, 2.0}), vec({0.0, -0.4, 0.2})), m3a);
    add("reverse_gumbel " + tag + " unequal d=2", f, GeneratorSpec::indep_reverse_gumbel(vec({0.8, 2.5}), vec({0.0, 0.5})), m2b);
    add("reverse_exp " + tag + " d=2", f, GeneratorSpec::indep_reverse_exp(vec({1.5, 2.5}), vec({0.0, 0.4})), m2a);
    add("reverse_exp " + tag + " d=3", f, GeneratorSpec::indep_reverse_exp(vec({1.0, 2.0, 3.0}), vec({0.0, 0.0, 0.0})), m3a);
    add("reverse_exp " + tag + " d=2 b", f, GeneratorSpec::indep_reverse_exp(vec({4.0, 0.7}), vec({0.0, -0.5})), m2b);
    add("log_gamma " + tag + " d=2", f, GeneratorSpec::indep_log_gamma(vec({1.5, 3.0})), m2a);
    add("log_gamma " + tag + " d=3", f, GeneratorSpec::indep_log_gamma(vec({2.0, 2.0, 5.0})), m3a);
    add("log_gamma " + tag + " d=2 b", f, GeneratorSpec::indep_log_gamma(vec({0.8, 1.2})), m2b);
    add("gaussian " + tag + " d=2", f, GeneratorSpec::gaussian(vec({0.0, 0.5}), corr2(0.5)), m2a);
    add("gaussian " + tag + " d=3", f, GeneratorSpec::gaussian(vec({0.0, 0.3, -0.2}), corr3(0.6, 0.3, 0.5)), m3a);
    Matrix S = corr2(-0.3);
    S(1, 1) = 2.0;
    S(0, 1) = S(1, 0) = -0.3 * std::sqrt(2.0);
    add("gaussian " + tag + " d=2 b", f, GeneratorSpec::gaussian(vec({0.0, -0.5}), S), m2b);
  }
  add("structured gamma=0 d=2", Form::R, GeneratorSpec::structured(vec({1.0, 0.5})), MarginalParams::common(2, 1.0, 0.0));
  add("structured gamma=0 d=3", Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 2.0, 0.0));
  add("structured gamma=0 d=3 b", Form::R, GeneratorSpec::structured(vec({0.5, 2.0, 1.0})), MarginalParams::common(3, 0.7, 0.0));
  add("structured gamma>0 d=2", Form::R, GeneratorSpec::structured(vec({1.0, 0.5})), MarginalParams::common(2, 1.0, 0.2));
  add("structured gamma>0 d=3", Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 2.0, 0.3));
  add("structured gamma>0 d=3 b", Form::R, GeneratorSpec::structured(vec({0.5, 2.0, 1.0})), MarginalParams::common(3, 0.7, 0.1));
  return out;
}

Outcome criterion1() {
  const int n = 1000000;
  const double df = 2.0;
  const double log_t_const = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi);
  int failures = 0, total = 0;
  double worst = 0.0;
  std::ostringstream bad;
  const auto models = normalization_models();
  std::uint64_t seed = 11;
  for (const auto& nm : models) {
    const int d = nm.model.dim();
    const ModelEvaluator ev(nm.model);
    Vector scale = 1.5 * nm.model.margins().sigma();
    Rng rng(seed++);
    std::student_t_distribution<double> t(df);
    double s1 = 0.0, s2 = 0.0;
    Vector x(d);
    for (int i = 0; i < n; ++i) {
      double lq = 0.0;
      for (int j = 0; j < d; ++j) {
        const double z = t(rng);
        x(j) = scale(j) * z;
        lq += log_t_const - 0.5 * (df + 1) * std::log1p(z * z / df) - std::log(scale(j));
      }
      double w = 0.0;
      if (x.maxCoeff() > 0.0) {
        const double lh = ev.log_density(x);
        if (lh != kNegInf) w = std::exp(lh - lq);
      }
      s1 += w;
      s2 += w * w;
    }
    const double mean = s1 / n;
    const double se = std::sqrt(std::max(0.0, s2 / n - mean * mean) / n);
    const double z = std::abs(mean - 1.0) / se;
    worst = std::max(worst, z);
    ++total;
    if (!(z <= 3.0)) {
      ++failures;
      bad << " [" << nm.name << ": " << fmt(mean, 6) << " se " << fmt(se, 3) << "]";
    }
  }
  return {failures == 0, std::to_string(total - failures) + "/" + std::to_string(total) + " settings within 3 SE of 1 (max |z| " +
                             fmt(worst, 3) + ")" + bad.str()};
}

// ---- 2: closed forms against direct integration ----

Outcome criterion2() {
  struct Case {
    std::string name;
    GeneratorSpec g;
    Form form;
  };
  std::vector<Case> cases = {
      {"gumbel T equal", GeneratorSpec::indep_gumbel(vec({1.7, 1.7, 1.7}), vec({0.0, 0.3, -0.2})), Form::T},
      {"gumbel U logistic", GeneratorSpec::indep_gumbel(vec({2.5, 2.5, 2.5}), vec({0.0, 0.0, 0.0})), Form::U},
      {"gumbel U equal shifted", GeneratorSpec::indep_gumbel(vec({1.6, 1.6}), vec({0.0, 0.7})), Form::U},
      {"reverse_gumbel T equal", GeneratorSpec::indep_reverse_gumbel(vec({1.2, 1.2, 1.2}), vec({0.0, 0.4, 0.1})), Form::T},
      {"reverse_gumbel U equal", GeneratorSpec::indep_reverse_gumbel(vec({2.0, 2.0}), vec({0.0, -0.3})), Form::U},
      {"reverse_exp T", GeneratorSpec::indep_reverse_exp(vec({1.5, 2.0, 3.0}), vec({0.0, 0.5, -0.3})), Form::T},
      {"reverse_exp U", GeneratorSpec::indep_reverse_exp(vec({1.5, 2.0, 3.0}), vec({0.0, 0.5, -0.3})), Form::U},
      {"reverse_exp U common beta", GeneratorSpec::indep_reverse_exp(vec({0.8, 2.0}), vec({0.2, 0.2})), Form::U},
      {"log_gamma T", GeneratorSpec::indep_log_gamma(vec({1.5, 2.0, 4.0})), Form::T},
      {"log_gamma U", GeneratorSpec::indep_log_gamma(vec({1.5, 2.0, 4.0})), Form::U},
      {"gaussian T d=3", GeneratorSpec::gaussian(vec({0.0, 0.3, -0.2}), corr3(0.6, 0.3, 0.5)), Form::T},
      {"gaussian T d=2", GeneratorSpec::gaussian(vec({0.0, 1.0}), corr2(-0.4)), Form::T},
  };
  int total = 0, bad = 0;
  double worst = 0.0;
  std::ostringstream msg;
  std::uint64_t seed = 200;
  for (const auto& c : cases) {
    const StandardForm sf(c.g, c.form);
    if (!sf.has_closed_form()) throw std::logic_error("case without a closed form: " + c.name);
    const double lnorm = c.form == Form::U ? oracle::log_norm_independent(c.g) : 0.0;
    const SampleBatch s = simulate(GpModel::standard(c.form, c.g), 100, seed++);
    double cw = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector x = s.x0.row(i).transpose();
      const double lib = sf.log_density(x).log_density;
      const double ref = c.form == Form::T ? oracle::log_h_T(c.g, x) : oracle::log_h_U(c.g, x, lnorm);
      const double err = std::abs(std::expm1(lib - ref));
      cw = std::max(cw, err);
      ++total;
      if (!(err <= 1e-7)) ++bad;
    }
    worst = std::max(worst, cw);
    if (cw > 1e-7) msg << " [" << c.name << " max rel " << fmt(cw, 3) << "]";
  }
  struct SCase {
    Vector lambda;
    double sigma, gamma;
  };
  for (const SCase& c : {SCase{vec({1.0, 0.84, 1.08}), 10.17, 0.0}, SCase{vec({1.0, 0.5}), 1.0, 0.0}, SCase{vec({1.0, 0.84, 1.08}), 2.0, 0.3},
                         SCase{vec({0.5, 2.0, 1.0}), 0.7, 0.15}}) {
    const GpModel m(Form::R, GeneratorSpec::structured(c.lambda), MarginalParams::common(static_cast<int>(c.lambda.size()), c.sigma, c.gamma));
    const SampleBatch s = simulate(m, 100, seed++);
    double cw = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector x = s.x.row(i).transpose();
      const double lib = log_h_R_structured(c.lambda, c.sigma, c.gamma, x);
      const double ref = oracle::log_h_structured(c.lambda, c.sigma, c.gamma, x);
      const double err = std::abs(std::expm1(lib - ref));
      cw = std::max(cw, err);
      ++total;
      if (!(err <= 1e-7)) ++bad;
    }
    worst = std::max(worst, cw);
    if (cw > 1e-7) msg << " [structured gamma=" << c.gamma << " max rel " << fmt(cw, 3) << "]";
  }
  return {bad == 0, std::to_string(total - bad) + "/" + std::to_string(total) + " points within relative 1e-7 (max " + fmt(worst, 3) + ")" + msg.str()};
}

// ---- 3: censored contributions against brute-force integration ----

double log_slab_integral(const std::function<double(const Vector&)>& logf, Vector x, const std::vector<int>& cens, const MarginalParams& mg,
                         const Vector& v, bool ordered) {
  // Integrates over the censored coordinates, innermost first.
  // Outermost loop takes the highest index so that ordered bounds are already fixed.
  std::function<double(std::size_t)> rec = [&](std::size_t k) -> double {
    if (k == cens.size()) return logf(x);
    const int j = cens[cens.size() - 1 - k];
    double hi = v(j);
    if (ordered && j + 1 < x.size()) hi = std::min(hi, x(j + 1));
    // The integration variable is the standard-scale value z, with dx/dz = sigma * exp(gamma z).
    const double sj = mg.sigma(j), gj = mg.gamma(j);
    const double hi_z = standard_from_observed(hi, sj, gj);
    if (!(hi_z > oracle::kNegInf)) return oracle::kNegInf;
    const double lo = hi_z - 60.0;
    hi = hi_z;
    auto f = [&, sj, gj, j](double z) {
      x(j) = observed_from_standard(z, sj, gj);
      return rec(k + 1) + std::log(sj) + gj * z;
    };
    // Reference level from a scan refined around its best point.
    const int scan = 60;
    const double step = (hi - lo) / scan;
    double ref = oracle::kNegInf, best = hi;
    for (int i = 1; i <= scan; ++i) {
      const double t = lo + step * i;
      const double val = f(t);
      if (val > ref) {
        ref = val;
        best = t;
      }
    }
    if (ref == oracle::kNegInf) return oracle::kNegInf;
    double l = std::max(lo, best - step), r = std::min(hi, best + step);
    for (int it = 0; it < 30; ++it) {
      const double m1 = l + (r - l) / 3.0, m2 = r - (r - l) / 3.0;
      const double f1 = f(m1), f2 = f(m2);
      ref = std::max({ref, f1, f2});
      if (f1 < f2) l = m1;
      else r = m2;
    }
    double total = 0.0;
    const double mid = std::clamp(0.5 * (l + r), lo, hi);
    for (auto [p, q] : {std::pair{lo, mid}, std::pair{mid, hi}}) {
      if (!(q > p)) continue;
      const double l = oracle::log_integral_plain(f, p, q, ref, 1e-9, 12);
      if (l != oracle::kNegInf) total += std::exp(l - ref);
    }
    return total > 0.0 ? ref + std::log(total) : oracle::kNegInf;
  };
  return rec(0);
}

Outcome criterion3() {
  std::vector<NamedModel> models;
  auto add = [&](const std::string& n, Form f, GeneratorSpec g, MarginalParams mg) { models.push_back({n, GpModel(f, std::move(g), std::move(mg))}); };
  const MarginalParams m2(vec({1.0, 0.8}), vec({0.1, -0.1}));
  const MarginalParams m3(vec({1.0, 1.4, 0.6}), vec({0.2, 0.0, -0.1}));
  for (Form f : {Form::T, Form::U}) {
    const std::string tag = f == Form::T ? " T" : " U";
    add("gumbel equal" + tag + " d=2", f, GeneratorSpec::indep_gumbel(vec({1.8, 1.8}), vec({0.0, 0.4})), m2);
    add("gumbel unequal" + tag + " d=3", f, GeneratorSpec::indep_gumbel(vec({1.5, 2.5, 3.0}), vec({0.0, 0.3, -0.2})), m3);
    add("gumbel equal" + tag + " d=3", f, GeneratorSpec::indep_gumbel(vec({2.2, 2.2, 2.2}), vec({0.0, -0.3, 0.2})), m3);
    add("reverse_gumbel" + tag + " d=2", f, GeneratorSpec::indep_reverse_gumbel(vec({1.0, 1.6}), vec({0.0, 0.2})), m2);
    add("reverse_gumbel" + tag + " d=3", f, GeneratorSpec::indep_reverse_gumbel(vec({1.3, 1.3, 1.3}), vec({0.0, 0.2, 0.4})), m3);
    add("reverse_exp" + tag + " d=2", f, GeneratorSpec::indep_reverse_exp(vec({1.5, 2.5}), vec({0.0, 0.3})), m2);
    add("reverse_exp" + tag + " d=3", f, GeneratorSpec::indep_reverse_exp(vec({1.0, 2.0, 3.0}), vec({0.0, -0.2, 0.3})), m3);
    add("log_gamma" + tag + " d=2", f, GeneratorSpec::indep_log_gamma(vec({1.5, 3.0})), m2);
    add("log_gamma" + tag + " d=3", f, GeneratorSpec::indep_log_gamma(vec({1.2, 2.0, 4.0})), m3);
    add("gaussian" + tag + " d=2", f, GeneratorSpec::gaussian(vec({0.0, 0.5}), corr2(0.4)), m2);
    add("gaussian" + tag + " d=3", f, GeneratorSpec::gaussian(vec({0.0, 0.3, -0.2}), corr3(0.6, 0.3, 0.5)), m3);
  }
  add("structured gamma=0 d=2", Form::R, GeneratorSpec::structured(vec({1.0, 0.6})), MarginalParams::common(2, 1.0, 0.0));
  add("structured gamma=0 d=3", Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 1.5, 0.0));
  add("structured gamma>0 d=3", Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 1.5, 0.25));

  int total = 0, bad = 0;
  double worst = 0.0;
  std::ostringstream msg;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& nm : models) {
    const GpModel& m = nm.model;
    const int d = m.dim();
    const bool structured = m.form() == Form::R;
    const ModelEvaluator ev(m);
    auto logf = [&](const Vector& x) { return ev.log_density(x); };
    // Censor patterns: every non-empty proper subset, prefixes only for the ordered model.
    std::vector<std::vector<int>> patterns;
    for (int mask = 1; mask + 1 < (1 << d); ++mask) {
      std::vector<int> c;
      for (int j = 0; j < d; ++j)
        if (mask >> j & 1) c.push_back(j);
      if (structured) {
        bool prefix = true;
        for (std::size_t k = 0; k < c.size(); ++k) prefix = prefix && c[k] == static_cast<int>(k);
        if (!prefix) continue;
      }
      patterns.push_back(c);
    }
    double cw = 0.0;
    for (const auto& c : patterns) {
      for (int rep = 0; rep < 2; ++rep) {
        Vector v = structured ? Vector::Constant(d, rep == 0 ? 0.0 : -0.3) : Vector(Vector::Zero(d));
        if (!structured)
          for (int j = 0; j < d; ++j) v(j) = rep == 0 ? 0.0 : -0.2 - 0.1 * j;
        Vector x(d);
        for (int j = 0; j < d; ++j) x(j) = v(j) - 0.1;
        double prev = 0.0;
        for (int j = 0; j < d; ++j) {
          if (std::find(c.begin(), c.end(), j) != c.end()) continue;
          x(j) = (structured ? prev : 0.0) + 0.05 + 1.5 * unif(rng);
          prev = x(j);
        }
        const double lib = ev.log_censored(x, v);
        const double ref = log_slab_integral(logf, x, c, m.margins(), v, structured);
        const double err = std::abs(lib - ref);
        cw = std::max(cw, err);
        ++total;
        if (!(err <= 1e-5)) ++bad;
      }
    }
    worst = std::max(worst, cw);
    if (cw > 1e-5) msg << " [" << nm.name << " max " << fmt(cw, 3) << "]";
  }
  return {bad == 0, std::to_string(total - bad) + "/" + std::to_string(total) + " censored contributions within 1e-5 (max " + fmt(worst, 3) + ")" + msg.str()};
}

// ---- 4: parameter recovery ----

struct RecoveryCase {
  std::string name;
  GpModel truth;
  ModelTemplate tmpl;
  Vector params;
};

std::vector<RecoveryCase> recovery_cases() {
  std::vector<RecoveryCase> out;
  {
    RecoveryCase c;
    c.name = "(a) equal-alpha gumbel T with margins";
    c.truth = GpModel(Form::T, GeneratorSpec::indep_gumbel(vec({2.0, 2.0}), vec({0.0, 0.0})), MarginalParams(vec({1.0, 1.0}), vec({0.0, 0.0})));
    c.tmpl.family = Family::IndepGumbel;
    c.tmpl.form = Form::T;
    c.tmpl.dim = 2;
    c.tmpl.shape_tie = true;
    c.tmpl.zero_location = true;
    c.tmpl.fit_margins = true;
    c.params = vec({2.0, 1.0, 1.0, 0.0, 0.0});
    out.push_back(c);
  }
  {
    RecoveryCase c;
    c.name = "(b) gaussian T d=3";
    c.truth = GpModel(Form::T, GeneratorSpec::gaussian(vec({0.0, 0.3, -0.2}), corr3(0.6, 0.3, 0.5)), MarginalParams::standard(3));
    c.tmpl.family = Family::Gaussian;
    c.tmpl.form = Form::T;
    c.tmpl.dim = 3;
    c.params = vec({0.3, -0.2, 0.6, 0.3, 0.5});
    out.push_back(c);
  }
  {
    RecoveryCase c;
    c.name = "(c) structured gamma=0 d=3";
    c.truth = GpModel(Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 10.17, 0.0));
    c.tmpl.family = Family::StructuredExp;
    c.tmpl.form = Form::R;
    c.tmpl.dim = 3;
    c.tmpl.fit_margins = true;
    c.tmpl.shared_sigma = true;
    c.tmpl.shared_gamma = true;
    c.tmpl.gamma = GammaMode::Zero;
    c.params = vec({0.84, 1.08, 10.17});
    out.push_back(c);
  }
  return out;
}

std::optional<Outcome> cached4;

Outcome criterion4() {
  if (cached4) return *cached4;
  const int reps = 100, n = 5000;
  bool all = true;
  std::ostringstream msg;
  const auto cases = recovery_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const RecoveryCase& c = cases[ci];
    int covered = 0;
    for (int r = 0; r < reps; ++r) {
      const SampleBatch s = simulate(c.truth, n, 4000 + 1000 * ci + static_cast<std::uint64_t>(r));
      const ExceedanceSet ex(s.x, Vector::Zero(c.truth.dim()), Vector::Zero(c.truth.dim()));
      const FitResult f = fit_mle(c.tmpl, ex);
      if (!f.se || f.names.size() != static_cast<std::size_t>(c.params.size())) continue;
      bool ok = true;
      for (int k = 0; k < c.params.size(); ++k) ok = ok && std::abs(f.estimates(k) - c.params(k)) <= 3.0 * (*f.se)(k);
      covered += ok;
    }
    all = all && covered >= 90;
    msg << c.name << ": " << covered << "/" << reps << "; ";
  }
  cached4 = Outcome{all, msg.str() + "replicate counts when all parameters lie within 3 SE (need >= 90)"};
  return *cached4;
}

// ---- 5: threshold stability ----

Outcome criterion5() {
  const std::vector<double> tg = {1.5, 2.0, 4.0};
  std::vector<NamedModel> models = {
      {"gumbel T", GpModel(Form::T, GeneratorSpec::indep_gumbel(vec({2.0, 2.0, 2.0}), vec({0.0, 0.3, -0.3})), MarginalParams(vec({1.0, 2.0, 0.5}), vec({0.2, 0.0, 0.1})))},
      {"logistic U", GpModel(Form::U, GeneratorSpec::indep_gumbel(vec({2.5, 2.5}), vec({0.0, 0.0})), MarginalParams(vec({1.0, 1.0}), vec({0.1, 0.1})))},
      {"gaussian T", GpModel(Form::T, GeneratorSpec::gaussian(vec({0.0, 0.5}), corr2(0.3)), MarginalParams(vec({1.0, 3.0}), vec({0.0, 0.3})))},
      {"structured R", GpModel(Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 10.0, 0.0))},
  };
  int points = 0, covered = 0;
  std::uint64_t seed = 500;
  for (const auto& nm : models) {
    const int d = nm.model.dim();
    for (int batch = 0; batch < 5; ++batch) {
      const SampleBatch s = simulate(nm.model, 2000, seed++);
      const ExceedanceSet ex(s.x, Vector::Zero(d), Vector::Zero(d));
      std::vector<IndexList> sets;
      for (int j = 0; j < d; ++j) sets.push_back({j});
      sets.push_back(all_indices(d));
      for (const auto& J : sets) {
        BootstrapOptions bo;
        bo.replicates = 400;
        bo.seed = seed * 31 + J.size();
        const StabilityCurve c = stability_ratio(ex, nm.model.margins().sigma(), nm.model.margins().gamma(), J, tg, bo);
        for (std::size_t k = 0; k < tg.size(); ++k) {
          if (c.omitted[k]) continue;
          ++points;
          covered += c.lower[k] <= 1.0 && 1.0 <= c.upper[k];
        }
      }
    }
  }
  const double frac = points ? static_cast<double>(covered) / points : 0.0;
  return {frac >= 0.9, std::to_string(covered) + "/" + std::to_string(points) + " grid points with 95% CI covering 1 (" + fmt(100 * frac, 3) + "%, need >= 90%)"};
}

// ---- 6: sum-stability ----

Outcome criterion6() {
  struct Case {
    std::string name;
    GpModel m;
    Vector a;
  };
  std::vector<Case> cases = {
      {"gumbel T d=3", GpModel(Form::T, GeneratorSpec::indep_gumbel(vec({2.0, 2.0, 2.0}), vec({0.0, 0.0, 0.0})), MarginalParams(vec({1.0, 2.0, 0.5}), vec({0.2, 0.2, 0.2}))), vec({1.0, 1.0, 1.0})},
      {"logistic U d=2", GpModel(Form::U, GeneratorSpec::indep_gumbel(vec({3.0, 3.0}), vec({0.0, 0.0})), MarginalParams(vec({1.0, 1.5}), vec({0.0, 0.0}))), vec({2.0, 1.0})},
      {"gaussian T d=3", GpModel(Form::T, GeneratorSpec::gaussian(vec({0.0, 0.2, -0.1}), corr3(0.7, 0.4, 0.5)), MarginalParams(vec({0.5, 1.0, 1.0}), vec({0.3, 0.3, 0.3}))), vec({1.0, 0.5, 2.0})},
  };
  bool all = true;
  std::ostringstream msg;
  std::uint64_t seed = 600;
  for (const auto& c : cases) {
    const int d = c.m.dim();
    const SampleBatch s = simulate(c.m, 5000, seed++);
    const ExceedanceSet ex(s.x, Vector::Zero(d), Vector::Zero(d));
    const SumStabilityReport r = sum_stability_check(ex, c.a, c.m.margins());
    if (!r.univariate.se_sigma || !r.univariate.se_gamma) return {false, c.name + ": univariate fit without standard errors"};
    const double zs = std::abs(r.univariate.sigma - r.implied_sigma) / *r.univariate.se_sigma;
    const double zg = std::abs(r.univariate.gamma - r.gamma) / *r.univariate.se_gamma;
    const bool ok = zs <= 3.0 && zg <= 3.0;
    all = all && ok;
    if (msg.tellp() > 0) msg << "; ";
    msg << c.name << ": sigma " << fmt(r.univariate.sigma) << " vs " << fmt(r.implied_sigma) << ", gamma " << fmt(r.univariate.gamma) << " vs "
        << fmt(r.gamma) << " (z " << fmt(zs, 2) << ", " << fmt(zg, 2) << ")";
  }
  return {all, msg.str()};
}

// ---- 7 and 8: real-data criteria replaced by frozen synthetic fixtures ----

json frozen() {
  std::ifstream in(fs::path(MGPD_DATA_DIR) / "frozen.json");
  if (!in) throw std::runtime_error("missing frozen.json");
  return json::parse(in);
}

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * (1.0 + std::abs(b)); }

bool fit_matches(const FitResult& f, const json& ref, std::ostringstream& msg) {
  bool ok = close(f.loglik, ref.at("loglik").get<double>(), 1e-6) && f.n_obs == ref.at("n_obs").get<int>();
  for (std::size_t k = 0; k < f.names.size(); ++k) {
    const json& p = ref.at("parameters").at(f.names[k]);
    ok = ok && close(f.estimates(static_cast<Eigen::Index>(k)), p.at("estimate").get<double>(), 1e-4);
    if (f.se && !p.at("se").is_null()) ok = ok && close((*f.se)(static_cast<Eigen::Index>(k)), p.at("se").get<double>(), 1e-2);
  }
  msg << "loglik " << fmt(f.loglik, 8) << " vs frozen " << fmt(ref.at("loglik").get<double>(), 8);
  return ok;
}

Outcome criterion7() {
  const Outcome c4 = criterion4();
  const json fz = frozen().at("bank");
  const Table r = negative_returns(read_csv((fs::path(MGPD_DATA_DIR) / "bank_prices.csv").string()));
  const Vector u = marginal_quantiles(r.values, 0.83);
  const ExceedanceSet ex = exceedances(r.values, u, Vector::Zero(r.cols()));
  ModelTemplate t;
  t.family = Family::IndepGumbel;
  t.form = Form::T;
  t.dim = r.cols();
  t.shape_tie = true;
  t.zero_location = true;
  t.fit_margins = true;
  t.shared_gamma = true;
  const FitResult f = fit_mle(t, ex);
  std::ostringstream msg;
  bool ok = r.rows() == fz.at("n_returns").get<int>() && ex.size() == fz.at("n_exceedances").get<int>();
  msg << "public price data unavailable; fallback: criterion 4 " << (c4.pass ? "PASS" : "FAIL") << ", frozen fixture n=" << r.rows()
      << ", exceedances " << ex.size() << ", ";
  ok = fit_matches(f, fz.at("fit"), msg) && ok;
  return {ok && c4.pass, msg.str()};
}

Outcome criterion8() {
  const Outcome c4 = criterion4();
  const json fz = frozen().at("rain");
  const Table rain = read_csv((fs::path(MGPD_DATA_DIR) / "rain_daily.csv").string());
  std::vector<double> p(rain.values.data(), rain.values.data() + rain.rows());
  const Matrix cl = rainfall_clusters(p, 12.0);
  const ExceedanceSet ex = exceedances(cl, Vector::Constant(3, 24.0), Vector::Zero(3), {2});
  ModelTemplate t;
  t.family = Family::StructuredExp;
  t.form = Form::R;
  t.dim = 3;
  t.fit_margins = true;
  t.shared_sigma = true;
  t.shared_gamma = true;
  t.gamma = GammaMode::Zero;
  const FitResult f = fit_mle(t, ex);
  std::ostringstream msg;
  bool ok = cl.rows() == fz.at("n_clusters").get<int>() && ex.size() == fz.at("n_exceedances").get<int>();
  msg << "observed rainfall series unavailable; fallback: criterion 4 " << (c4.pass ? "PASS" : "FAIL") << ", frozen fixture clusters " << cl.rows()
      << ", exceedances " << ex.size() << ", ";
  ok = fit_matches(f, fz.at("fit"), msg) && ok;
  // The event rate needs only the published estimates.
  const GpModel pub(Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 10.17, 0.0));
  McOptions mc;
  mc.nsim = 1000000;
  const EventRate e = event_rate(pub, Vector::Constant(3, 24.0), vec({39.5, 56.6, 69.9}), 142.0 / 102.0, mc);
  const bool ev_ok = std::abs(e.mu - 0.102) <= 0.01 && std::abs(e.p_at_least_one - 0.097) <= 0.01;
  msg << "; event rate at published estimates mu=" << fmt(e.mu) << " P(>=1)=" << fmt(e.p_at_least_one);
  return {ok && ev_ok && c4.pass, msg.str()};
}

// ---- 9: pipeline self-consistency ----

Outcome criterion9() {
  const int reps = 50, n = 2000, d = 3;
  const GpModel truth(Form::U, GeneratorSpec::indep_gumbel(Vector::Constant(d, 2.5), Vector::Zero(d)),
                      MarginalParams(Vector::LinSpaced(d, 1.0, 2.0), Vector::Constant(d, 0.1)));
  PipelineOptions po;
  po.q_grid = {0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  po.bootstrap.replicates = 200;
  po.fit.optimizer.restarts = 2;
  int hits = 0, errors = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) {
    const SampleBatch s = simulate(truth, n, 9000 + r);
    po.bootstrap.seed = 77 + r;
    try {
      const PipelineReport rep = model_selection_pipeline(s.x, po);
      if (rep.dependence && rep.dependence->tmpl.family == Family::IndepGumbel && rep.dependence->tmpl.shape_tie) ++hits;
    } catch (const std::exception&) {
      ++errors;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {hits >= 40 && secs < 1800.0, std::to_string(hits) + "/" + std::to_string(reps) + " runs selected a Gumbel family with equal alpha (need >= 40), " +
                                           std::to_string(errors) + " aborted, " + fmt(secs / 60.0, 3) + " min"};
}

// ---- 10: determinism of CLI outputs ----

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome criterion10() {
  const fs::path base = fs::temp_directory_path() / ("mgpd_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  const std::string cli = fs::absolute(MGPD_CLI_PATH).string();
  const std::string data = fs::absolute(fs::path(MGPD_DATA_DIR) / "bank_prices.csv").string();
  auto pipeline = [&](const fs::path& root, int seed) {
    fs::create_directories(root);
    const std::string pre = "cd '" + root.string() + "' && '" + cli + "' ";
    const std::string s = " --seed " + std::to_string(seed) + " --threads 1";
    int rc = 0;
    rc |= run(pre + "ingest returns --prices '" + data + "' --out ret" + s);
    rc |= run(pre + "fit --data ret/returns.csv --q 0.83 --family gumbel --form T --equal-alpha --zero-beta --shared-gamma --restarts 2 --out fit" + s);
    rc |= run(pre + "diagnose chi --data ret/returns.csv --subset 1,2 --bootstrap 100 --fit fit/fit.json --nsim 20000 --out chi" + s);
    rc |= run(pre + "diagnose stability --data ret/returns.csv --fit fit/fit.json --bootstrap 100 --out stab" + s);
    rc |= run(pre + "risk var --data ret/returns.csv --fit fit/fit.json --phi-mode model --nsim 20000 --out var" + s);
    rc |= run(pre + "simulate --fit fit/fit.json --n 500 --out sim" + s);
    return rc;
  };
  const int rc1 = pipeline(base / "a", 5), rc2 = pipeline(base / "b", 5), rc3 = pipeline(base / "c", 6);
  if (rc1 || rc2 || rc3) {
    fs::remove_all(base);
    return {false, "CLI invocation failed"};
  }
  int files = 0, same = 0;
  std::string differing;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), base / "a");
    ++files;
    if (slurp(e.path()) == slurp(base / "b" / rel)) ++same;
    else differing += " " + rel.string();
  }
  const bool differs = slurp(base / "a" / "sim" / "sample.csv") != slurp(base / "c" / "sim" / "sample.csv");
  fs::remove_all(base);
  return {files > 0 && same == files && differs, std::to_string(same) + "/" + std::to_string(files) +
                                                     " output files byte-identical across repeated runs; a different seed " +
                                                     (differs ? "changes" : "does not change") + " the sample" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "Criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " [" << fmt(secs, 3) << " s]\n";
  }
  return failed == 0 ? 0 : 1;
}
