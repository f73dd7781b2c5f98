#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgpd/core.hpp"
#include "mgpd/diagnostics.hpp"
#include "mgpd/fit.hpp"
#include "mgpd/ingest.hpp"

namespace mgpd {

class PipelineError : public DataError {
 public:
  PipelineError(const std::string& msg, nlohmann::json trace) : DataError(msg), trace_(std::move(trace)) {}
  const nlohmann::json& trace() const { return trace_; }

 private:
  nlohmann::json trace_;
};

struct FamilyChoice {
  Family family;
  Form form;
};

inline std::vector<FamilyChoice> default_pipeline_families() {
  return {{Family::IndepGumbel, Form::T},
          {Family::IndepGumbel, Form::U},
          {Family::IndepReverseExp, Form::T},
          {Family::IndepReverseExp, Form::U},
          {Family::Gaussian, Form::T}};
}

struct PipelineOptions {
  std::vector<FamilyChoice> families = default_pipeline_families();
  std::vector<double> q_grid = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  std::optional<double> q;  // fixed threshold quantile; skips the chi-based selection
  BootstrapOptions bootstrap{};
  double significance = 0.05;
  FitOptions fit{};
  bool test_marginals = true;
};

struct PipelineReport {
  double q = 0.0;
  Vector u;
  int n_exceedances = 0;
  std::optional<ThresholdSelection> threshold;
  std::vector<FitResult> family_fits;
  std::optional<FitResult> dependence;  // end of the simplification ladder, standard scale
  std::optional<FitResult> final_fit;   // margins + dependence, original scale
  std::optional<GpFit> univariate;      // d = 1
  nlohmann::json trace = nlohmann::json::array();
};

namespace detail {

inline nlohmann::json fit_summary(const FitResult& f) {
  return {{"model", f.tmpl.label()}, {"loglik", f.loglik}, {"aic", f.aic}, {"n_params", f.n_params}, {"converged", f.converged}};
}

// Refits `full` from the nested optimum when it ends below the nested log-likelihood.
inline FitResult fit_nesting(const FitResult& full, const FitResult& nested, const ExceedanceSet& data, const FitOptions& opt,
                             nlohmann::json& trace) {
  if (full.loglik >= nested.loglik) return full;
  FitOptions o = opt;
  o.init = nested.model;
  o.init_fallback = true;
  FitResult again = fit_mle(full.tmpl, data, o);
  trace.push_back({{"step", "refit"}, {"model", full.tmpl.label()}, {"from", full.loglik}, {"to", again.loglik}});
  return again.loglik > full.loglik ? again : full;
}

inline bool accept_nested(const FitResult& nested, const FitResult& full, double alpha, nlohmann::json& trace, const char* what) {
  const bool inverted = nested.loglik > full.loglik;
  const LrTest lr = inverted ? lr_test(nested.loglik, nested.n_params, nested.loglik, full.n_params) : lr_test(nested, full);
  const bool accept = lr.p_value > alpha;
  nlohmann::json e = {{"step", what},
                      {"nested", nested.tmpl.label()},
                      {"full", full.tmpl.label()},
                      {"lr", to_json(lr)},
                      {"decision", accept ? "accept simplification" : "reject simplification"}};
  if (inverted) e["note"] = "full fit below nested optimum after refit; statistic set to 0";
  trace.push_back(e);
  return accept;
}

}  // namespace detail

// Runs the seven-step strategy on a raw data matrix (rows are observations).
inline PipelineReport model_selection_pipeline(const Matrix& raw, const PipelineOptions& opt = {}) {
  PipelineReport rep;
  auto& tr = rep.trace;
  const int d = static_cast<int>(raw.cols());
  if (d < 1 || raw.rows() < 2) throw DataError("pipeline: need at least two rows and one column");
  try {
    // (i) standardize to exponential margins
    const Matrix Z = rank_standardize(raw);
    tr.push_back({{"step", "i"}, {"action", "rank standardization"}, {"n", raw.rows()}, {"d", d}});

    // (ii) threshold
    if (opt.q) {
      rep.q = *opt.q;
      tr.push_back({{"step", "ii"}, {"action", "fixed threshold quantile"}, {"q", rep.q}});
    } else {
      rep.threshold = threshold_select(Z, opt.q_grid, opt.bootstrap);
      if (!rep.threshold->q_star) throw DataError("pipeline: no stable chi region found on the q grid");
      rep.q = *rep.threshold->q_star;
      tr.push_back({{"step", "ii"}, {"action", "chi-based threshold selection"}, {"q", rep.q}});
    }
    rep.u = marginal_quantiles(raw, rep.q);
    const Vector uz = marginal_quantiles(Z, rep.q);
    const ExceedanceSet obs = exceedances(raw, rep.u, Vector::Zero(d));
    const ExceedanceSet stdx = exceedances(Z, uz, Vector::Zero(d));
    rep.n_exceedances = obs.size();
    tr.push_back({{"step", "ii"}, {"action", "exceedances"}, {"count", rep.n_exceedances}, {"u", vector_to_json(rep.u)}});
    if (rep.n_exceedances < d + 10) throw DataError("pipeline: too few exceedances (" + std::to_string(rep.n_exceedances) + ")");

    if (d == 1) {
      std::vector<double> x;
      for (int i = 0; i < obs.size(); ++i) x.push_back(obs.rows()(i, 0));
      rep.univariate = fit_gp(x);
      tr.push_back({{"step", "vi"}, {"action", "univariate GP fit"}, {"fit", to_json(*rep.univariate)}});
      return rep;
    }

    // (iii) richest standard-form model per family
    if (opt.families.empty()) throw std::invalid_argument("pipeline: empty family list");
    for (const auto& fc : opt.families) {
      ModelTemplate t;
      t.family = fc.family;
      t.form = fc.form;
      t.dim = d;
      rep.family_fits.push_back(fit_mle(t, stdx, opt.fit));
      tr.push_back({{"step", "iii"}, {"fit", detail::fit_summary(rep.family_fits.back())}});
    }

    // (iv) smallest AIC
    const auto best = std::min_element(rep.family_fits.begin(), rep.family_fits.end(),
                                       [](const FitResult& a, const FitResult& b) { return a.aic < b.aic; });
    FitResult current = *best;
    tr.push_back({{"step", "iv"}, {"selected", current.tmpl.label()}, {"aic", current.aic}});

    // (v) simplification ladder
    const ModelTemplate top = current.tmpl;
    const bool loc = top.has_location_axis() && !top.zero_location;
    const bool shp = top.has_shape_axis() && !top.shape_tie && d >= 2 && !(top.family == Family::Gaussian && d == 2);
    std::map<std::string, FitResult> cache;
    auto descend = [&](bool location_first) {
      FitResult cur = current;
      nlohmann::json branch = nlohmann::json::array();
      std::vector<int> order;
      if (location_first) order = {0, 1};
      else order = {1, 0};
      for (int axis : order) {
        if ((axis == 0 && !loc) || (axis == 1 && !shp)) continue;
        ModelTemplate t = cur.tmpl;
        (axis == 0 ? t.zero_location : t.shape_tie) = true;
        const std::string key = t.label();
        if (!cache.count(key)) cache.emplace(key, fit_mle(t, stdx, opt.fit));
        const FitResult& nested = cache.at(key);
        const FitResult full = detail::fit_nesting(cur, nested, stdx, opt.fit, branch);
        if (!detail::accept_nested(nested, full, opt.significance, branch, "v")) break;
        cur = nested;
      }
      return std::make_pair(cur, branch);
    };
    if (loc || shp) {
      auto [endA, trA] = descend(true);
      auto [endB, trB] = descend(false);
      const bool agree = endA.tmpl.label() == endB.tmpl.label();
      FitResult chosen = agree ? endA : (endA.aic <= endB.aic ? endA : endB);
      tr.push_back({{"step", "v"},
                    {"branch_location_first", trA},
                    {"branch_shape_first", trB},
                    {"agree", agree},
                    {"selected", chosen.tmpl.label()}});
      current = chosen;
    }
    rep.dependence = current;

    // (vi) joint fit of margins and dependence on the original scale
    ModelTemplate jt = current.tmpl;
    jt.fit_margins = true;
    FitOptions fo = opt.fit;
    fo.init = GpModel(jt.form, current.model.generator(), initial_margins(jt, obs));
    fo.init_fallback = true;
    FitResult joint = fit_mle(jt, obs, fo);
    tr.push_back({{"step", "vi"}, {"fit", detail::fit_summary(joint)}});

    // (vii) marginal simplifications
    if (opt.test_marginals) {
      for (int k = 0; k < 2; ++k) {
        ModelTemplate t = joint.tmpl;
        if (k == 0) t.shared_gamma = true;
        else t.shared_sigma = true;
        FitOptions o = opt.fit;
        MarginalParams mg = joint.model.margins();
        Vector sg = mg.sigma(), gm = mg.gamma();
        if (k == 0) gm.setConstant(gm.mean());
        else sg.setConstant(sg.mean());
        o.init = GpModel(t.form, joint.model.generator(), MarginalParams(sg, gm));
        o.init_fallback = true;
        const FitResult nested = fit_mle(t, obs, o);
        const FitResult full = detail::fit_nesting(joint, nested, obs, opt.fit, tr);
        if (detail::accept_nested(nested, full, opt.significance, tr, "vii")) joint = nested;
        else joint = full;
      }
    }
    rep.final_fit = joint;
    tr.push_back({{"step", "end"}, {"model", joint.tmpl.label()}});
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    tr.push_back({{"step", "abort"}, {"error", e.what()}});
    throw PipelineError(std::string("pipeline aborted: ") + e.what(), tr);
  }
  return rep;
}

inline nlohmann::json to_json(const PipelineReport& r) {
  nlohmann::json j = {{"q", r.q}, {"u", vector_to_json(r.u)}, {"n_exceedances", r.n_exceedances}, {"trace", r.trace}};
  if (r.threshold) j["threshold"] = to_json(*r.threshold);
  nlohmann::json fams = nlohmann::json::array();
  for (const auto& f : r.family_fits) fams.push_back(detail::fit_summary(f));
  j["family_fits"] = fams;
  j["dependence"] = r.dependence ? to_json(*r.dependence) : nlohmann::json();
  j["final"] = r.final_fit ? to_json(*r.final_fit) : nlohmann::json();
  j["univariate"] = r.univariate ? to_json(*r.univariate) : nlohmann::json();
  return j;
}

}  // namespace mgpd
