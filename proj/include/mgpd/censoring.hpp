#pragma once

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "mgpd/core.hpp"
#include "mgpd/density.hpp"
#include "mgpd/model.hpp"
#include "mgpd/special.hpp"

namespace mgpd {

struct CensorPartition {
  IndexList censored;
  IndexList uncensored;
};

// Components with y_j - u_j <= v_j are censored.
inline CensorPartition partition(const Vector& y, const Vector& u, const Vector& v) {
  if (y.size() != u.size() || y.size() != v.size()) throw std::invalid_argument("partition: dimension mismatch");
  CensorPartition p;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    (y(j) - u(j) <= v(j) ? p.censored : p.uncensored).push_back(static_cast<int>(j));
  }
  return p;
}

inline double log_censored_contribution(const ModelEvaluator& ev, const Vector& y, const Vector& u, const Vector& v) {
  return ev.log_censored(y - u, v);
}

inline double log_censored_contribution(const GpModel& model, const Vector& y, const Vector& u, const Vector& v) {
  const ModelEvaluator ev(model);
  return log_censored_contribution(ev, y, u, v);
}

struct NllOptions {
  int threads = 1;
  EvalOptions eval{};
};

struct NllReport {
  double value = kInf;
  int flagged = 0;            // contributions whose quadrature error exceeded the flag tolerance
  double max_quad_error = 0.0;
};

// Sum over rows of an ExceedanceSet; rows are processed in contiguous blocks, one per worker,
// and block sums are merged in block order.
inline NllReport negative_log_likelihood_report(const ModelEvaluator& ev, const ExceedanceSet& data, int threads = 1) {
  if (data.dim() != ev.model().dim()) throw std::invalid_argument("negative_log_likelihood: dimension mismatch");
  const int n = data.size();
  const int workers = std::max(1, std::min(threads, n));
  struct Block {
    CompensatedSum sum;
    bool infinite = false;
    int flagged = 0;
    double max_err = 0.0;
    std::exception_ptr error;
  };
  std::vector<Block> blocks(workers);
  const Vector& v = data.censor_floor();
  auto run = [&](int w) {
    Block& b = blocks[w];
    const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    try {
      Vector x(data.dim());
      for (int i = lo; i < hi; ++i) {
        x = data.rows().row(i).transpose();
        const StdDensityEval e = ev.log_censored_eval(x, v);
        if (e.quad_error) {
          b.max_err = std::max(b.max_err, *e.quad_error);
          if (e.flagged) ++b.flagged;
        }
        const double lc = ev.checked(e);
        if (lc == kNegInf || std::isnan(lc)) {
          b.infinite = true;
          return;
        }
        b.sum.add(-lc);
      }
    } catch (...) {
      b.error = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  NllReport r;
  CompensatedSum total;
  bool infinite = false;
  for (auto& b : blocks) {
    if (b.error) std::rethrow_exception(b.error);
    infinite = infinite || b.infinite;
    total.add(b.sum.value());
    r.flagged += b.flagged;
    r.max_quad_error = std::max(r.max_quad_error, b.max_err);
  }
  r.value = infinite ? kInf : total.value();
  return r;
}

inline double negative_log_likelihood(const ModelEvaluator& ev, const ExceedanceSet& data, int threads = 1) {
  return negative_log_likelihood_report(ev, data, threads).value;
}

inline double negative_log_likelihood(const GpModel& model, const ExceedanceSet& data, const NllOptions& opt = {}) {
  const ModelEvaluator ev(model, opt.eval);
  return negative_log_likelihood(ev, data, opt.threads);
}

}  // namespace mgpd
