#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "mgpd/core.hpp"
#include "mgpd/density.hpp"
#include "mgpd/generators.hpp"
#include "mgpd/model.hpp"

namespace mgpd {

enum class SampleMethod { ExactT, ImportanceResampledU };

inline std::string to_string(SampleMethod m) { return m == SampleMethod::ExactT ? "exact-T" : "importance-resampled-U"; }

struct SampleBatch {
  Matrix x;   // observed scale
  Matrix x0;  // standard scale
  SampleMethod method = SampleMethod::ExactT;
  std::optional<std::uint64_t> seed;
  double ess = 0.0;
  long long proposals = 0;
  bool ess_warning = false;
};

struct SirOptions {
  int proposal_factor = 20;
  int block = 10000;  // output draws per resampling block
};

// Generator draw on the U scale of the model. For the structured R form this maps R to U.
inline Vector model_generator_draw(const GpModel& m, Rng& rng) {
  const GeneratorSpec& g = m.generator();
  if (m.form() != Form::R) return gen_sample(g, rng);
  Vector s = structured_cumsum_sample(g.lambda(), rng);
  const double gam = m.margins().gamma(0);
  if (gam == 0.0) return s.array().log().matrix();
  const double sig = m.margins().sigma(0);
  return ((gam / sig) * s.array()).log().matrix() / gam;
}

// log E[e^{max U}] for U and R forms.
inline double model_log_norm_const(const GpModel& m) {
  if (m.form() == Form::T) throw std::invalid_argument("normalizing constant is defined for U and R forms");
  if (m.form() == Form::R) {
    const StructuredForm s(m.generator().lambda(), m.margins().sigma(0), m.margins().gamma(0));
    const double gam = s.gamma();
    if (gam == 0.0) return s.log_moment(s.dim() - 1);
    return std::log(gam / s.sigma()) / gam + s.log_moment(s.dim() - 1);
  }
  return StandardForm(m.generator(), Form::U).log_norm_const();
}

namespace detail {

inline void finish_rows(SampleBatch& b, const MarginalParams& mg) {
  b.x.resize(b.x0.rows(), b.x0.cols());
  for (Eigen::Index i = 0; i < b.x0.rows(); ++i) {
    for (int j = 0; j < mg.dim(); ++j) b.x(i, j) = observed_from_standard(b.x0(i, j), mg.sigma(j), mg.gamma(j));
  }
}

template <class Draw>
SampleBatch sir_sample(Draw&& draw, int d, int n, Rng& rng, const SirOptions& opt) {
  if (n < 0) throw std::invalid_argument("sample size must be non-negative");
  SampleBatch b;
  b.method = SampleMethod::ImportanceResampledU;
  b.x0.resize(n, d);
  const int m = std::max(1, opt.proposal_factor);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int done = 0;
  while (done < n) {
    const int nb = std::min(opt.block, n - done);
    const int np = m * nb;
    std::vector<Vector> prop(np);
    std::vector<double> lw(np);
    for (int k = 0; k < np; ++k) std::tie(prop[k], lw[k]) = draw(rng);
    const double mx = *std::max_element(lw.begin(), lw.end());
    std::vector<double> cum(np);
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < np; ++k) {
      const double w = std::exp(lw[k] - mx);
      s += w;
      s2 += w * w;
      cum[k] = s;
    }
    const double ess = s * s / s2;
    b.ess += ess;
    b.proposals += np;
    if (ess < 0.1 * np) throw NumericalError("importance resampling weights are degenerate (ESS " + std::to_string(ess) + ")");
    if (ess < nb) b.ess_warning = true;
    for (int i = 0; i < nb; ++i) {
      const double r = unif(rng) * s;
      const auto it = std::upper_bound(cum.begin(), cum.end(), r);
      const int k = std::min<int>(static_cast<int>(it - cum.begin()), np - 1);
      const Vector& v = prop[k];
      const double e = std_exponential(rng);
      b.x0.row(done + i) = (v.array() - v.maxCoeff() + e).matrix().transpose();
    }
    done += nb;
  }
  return b;
}

}  // namespace detail

// Exact draws X0 = E + T - max(T), mapped to the observed scale.
inline SampleBatch sample_gp_T(const GeneratorSpec& g, const MarginalParams& mg, int n, Rng& rng) {
  if (g.dim() != mg.dim()) throw std::invalid_argument("sample_gp_T: dimension mismatch");
  if (g.family() == Family::StructuredExp) throw std::invalid_argument("sample_gp_T: structured generators use the R form");
  if (n < 0) throw std::invalid_argument("sample size must be non-negative");
  SampleBatch b;
  b.method = SampleMethod::ExactT;
  b.x0.resize(n, g.dim());
  for (int i = 0; i < n; ++i) {
    const Vector t = gen_sample(g, rng);
    const double e = detail::std_exponential(rng);
    b.x0.row(i) = (t.array() - t.maxCoeff() + e).matrix().transpose();
  }
  b.ess = n;
  b.proposals = n;
  detail::finish_rows(b, mg);
  return b;
}

inline SampleBatch sample_gp_U(const GeneratorSpec& g, const MarginalParams& mg, int n, Rng& rng, const SirOptions& opt = {}) {
  if (g.dim() != mg.dim()) throw std::invalid_argument("sample_gp_U: dimension mismatch");
  if (!admissible_u(g)) throw std::invalid_argument("sample_gp_U: generator has infinite exponential moments");
  SampleBatch b = detail::sir_sample(
      [&](Rng& r) {
        Vector v = gen_sample(g, r);
        const double w = v.maxCoeff();
        return std::pair{std::move(v), w};
      },
      g.dim(), n, rng, opt);
  detail::finish_rows(b, mg);
  return b;
}

inline SampleBatch sample_gp_R_structured(const Vector& lambda, double sigma, double gamma, int n, Rng& rng,
                                          const SirOptions& opt = {}) {
  const int d = static_cast<int>(lambda.size());
  const GpModel m(Form::R, GeneratorSpec::structured(lambda), MarginalParams::common(d, sigma, gamma));
  // Target weight is S_d^k. Proposal increments are exponential with rates c * lambda_j.
  const double k = gamma > 0.0 ? 1.0 / gamma : 1.0;
  const double c = d / (d + k);
  SampleBatch b = detail::sir_sample(
      [&](Rng& r) {
        Vector s(d);
        double acc = 0.0, tilt = 0.0;
        for (int j = 0; j < d; ++j) {
          const double e = detail::std_exponential(r) / (c * lambda(j));
          acc += e;
          tilt += lambda(j) * e;
          s(j) = acc;
        }
        Vector u = gamma == 0.0 ? Vector(s.array().log()) : Vector(((gamma / sigma) * s.array()).log() / gamma);
        return std::pair{std::move(u), k * std::log(acc) - (1.0 - c) * tilt};
      },
      d, n, rng, opt);
  detail::finish_rows(b, m.margins());
  return b;
}

inline SampleBatch sample_model(const GpModel& m, int n, Rng& rng, const SirOptions& opt = {}) {
  switch (m.form()) {
    case Form::T: return sample_gp_T(m.generator(), m.margins(), n, rng);
    case Form::U: return sample_gp_U(m.generator(), m.margins(), n, rng, opt);
    case Form::R:
      return sample_gp_R_structured(m.generator().lambda(), m.margins().sigma(0), m.margins().gamma(0), n, rng, opt);
  }
  return {};
}

// Seeded batch; with several workers each draws a contiguous share from its own sub-stream.
inline SampleBatch simulate(const GpModel& m, int n, std::uint64_t seed, int threads = 1, const SirOptions& opt = {}) {
  const int workers = std::max(1, std::min(threads, std::max(n, 1)));
  SampleBatch out;
  if (workers == 1) {
    Rng rng(seed);
    out = sample_model(m, n, rng, opt);
  } else {
    std::vector<SampleBatch> parts(workers);
    std::vector<std::exception_ptr> errs(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
          const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
          std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                           static_cast<std::uint32_t>(w)};
          Rng rng(ss);
          parts[w] = sample_model(m, hi - lo, rng, opt);
        } catch (...) {
          errs[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
    out.method = parts[0].method;
    out.x.resize(n, m.dim());
    out.x0.resize(n, m.dim());
    int row = 0;
    for (auto& p : parts) {
      out.x.middleRows(row, p.x.rows()) = p.x;
      out.x0.middleRows(row, p.x0.rows()) = p.x0;
      row += static_cast<int>(p.x.rows());
      out.ess += p.ess;
      out.proposals += p.proposals;
      out.ess_warning = out.ess_warning || p.ess_warning;
    }
  }
  out.seed = seed;
  return out;
}

}  // namespace mgpd
