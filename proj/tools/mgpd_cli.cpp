#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgpd/mgpd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgpd;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string out;
  std::uint64_t seed = 1;
  int threads = 1;
};

std::string default_out_dir() {
  const char* e = std::getenv("MGPD_OUT_DIR");
  return e && *e ? e : ".";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

class Run {
 public:
  Run(std::string command, const Common& c, json config) : command_(std::move(command)), common_(c), config_(std::move(config)) {
    dir_ = fs::path(c.out.empty() ? default_out_dir() : c.out);
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream os(path(name));
    os << j.dump(2) << '\n';
  }

  template <class F>
  void write_text(const std::string& name, F&& writer) {
    std::ofstream os(path(name));
    writer(os);
  }

  void finish(const json& tolerances = json::object()) {
    json cfg = config_;
    cfg["seed"] = common_.seed;
    cfg["threads"] = common_.threads;
    json m = {{"command", command_},
              {"config", cfg},
              {"config_hash", hex(fnv1a(command_ + cfg.dump()))},
              {"version", kVersion},
              {"seed", common_.seed},
              {"tolerances", tolerances},
              {"outputs", outputs_}};
    std::ofstream os(dir_ / "manifest.json");
    os << m.dump(2) << '\n';
    for (const auto& o : outputs_) std::cout << (dir_ / o).string() << '\n';
  }

 private:
  std::string command_;
  Common common_;
  json config_;
  fs::path dir_;
  std::vector<std::string> outputs_;
};

Vector to_vector(const std::vector<double>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

Vector broadcast(const std::vector<double>& v, int d, const char* what) {
  if (v.size() == 1) return Vector::Constant(d, v[0]);
  if (static_cast<int>(v.size()) != d) throw UsageError(std::string(what) + ": expected 1 or " + std::to_string(d) + " values");
  return to_vector(v);
}

IndexList to_indices(const std::vector<int>& one_based, int d) {
  IndexList out;
  for (int j : one_based) {
    if (j < 1 || j > d) throw UsageError("component index " + std::to_string(j) + " out of range 1.." + std::to_string(d));
    out.push_back(j - 1);
  }
  return out;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
}

// Threshold block stored next to a fit: u, v and the components used for exceedance.
struct Threshold {
  Vector u, v;
  IndexList on;
  std::optional<double> q;
};

json to_json(const Threshold& t) {
  json on = json::array();
  for (int j : t.on) on.push_back(j + 1);
  return {{"u", vector_to_json(t.u)}, {"v", vector_to_json(t.v)}, {"on", on}, {"q", t.q ? json(*t.q) : json()}};
}

Threshold threshold_from_json(const json& j) {
  Threshold t;
  t.u = vector_from_json(j.at("u"));
  t.v = vector_from_json(j.at("v"));
  for (int k : j.at("on")) t.on.push_back(k - 1);
  if (!j.at("q").is_null()) t.q = j.at("q").get<double>();
  return t;
}

struct ThresholdArgs {
  std::optional<double> q;
  std::vector<double> u, v;
  std::vector<int> on;
};

void add_threshold_options(CLI::App* c, ThresholdArgs& t) {
  c->add_option("--q", t.q, "Threshold as a marginal quantile level");
  c->add_option("--u", t.u, "Threshold values (one, or one per component)")->delimiter(',');
  c->add_option("--v", t.v, "Censor floor v <= 0 (default 0)")->delimiter(',');
  c->add_option("--on", t.on, "Components whose exceedance selects a row (1-based, default all)")->delimiter(',');
}

Threshold resolve_threshold(const ThresholdArgs& a, const Matrix& data) {
  const int d = static_cast<int>(data.cols());
  Threshold t;
  if (a.q && !a.u.empty()) throw UsageError("give either --q or --u, not both");
  if (a.q) {
    t.q = *a.q;
    t.u = marginal_quantiles(data, *a.q);
  } else if (!a.u.empty()) {
    t.u = broadcast(a.u, d, "--u");
  } else {
    throw UsageError("a threshold is required (--q or --u)");
  }
  t.v = a.v.empty() ? Vector::Zero(d) : broadcast(a.v, d, "--v");
  t.on = to_indices(a.on, d);
  return t;
}

Table read_data(const std::string& path) {
  Table t = read_csv(path);
  if (t.rows() < 1) throw DataError(path + ": no data rows");
  return t;
}

struct LoadedFit {
  FitResult fit;
  Threshold thr;
};

LoadedFit load_fit(const std::string& path) {
  const json j = read_json(path);
  try {
    return {fit_result_from_json(j.at("fit")), threshold_from_json(j.at("threshold"))};
  } catch (const json::exception& e) {
    throw DataError(path + ": not a fit file: " + e.what());
  }
}

std::vector<FamilyChoice> parse_families(const std::vector<std::string>& names) {
  std::vector<FamilyChoice> out;
  for (const auto& n : names) {
    const auto p = n.find(':');
    if (p == std::string::npos) throw UsageError("family '" + n + "' must look like name:FORM, e.g. gumbel:T");
    out.push_back({family_from_string(n.substr(0, p)), form_from_string(n.substr(p + 1))});
  }
  return out;
}

json tolerances_json(const FitOptions& f) {
  return {{"search_tol", f.search_tol},
          {"final_tol", f.final_tol},
          {"optimizer",
           {{"f_tol", f.optimizer.f_tol},
            {"x_tol", f.optimizer.x_tol},
            {"restarts", f.optimizer.restarts},
            {"max_evaluations", f.optimizer.max_evaluations},
            {"seed", f.optimizer.seed}}}};
}

// ---- ingest ----

struct IngestArgs {
  std::string prices, rain, data, column;
  double u = 0.0;
  int halfwidth = 5;
  ThresholdArgs thr;
};

void cmd_ingest_returns(const IngestArgs& a, const Common& c) {
  Run run("ingest returns", c, {{"prices", a.prices}});
  const Table r = negative_returns(read_data(a.prices));
  run.write_text("returns.csv", [&](std::ostream& os) { write_csv(os, r); });
  run.finish();
}

void cmd_ingest_clusters(const IngestArgs& a, const Common& c) {
  Run run("ingest clusters", c, {{"rain", a.rain}, {"u", a.u}, {"halfwidth", a.halfwidth}, {"column", a.column}});
  const Table t = read_data(a.rain);
  int col = 0;
  if (!a.column.empty()) {
    const auto it = std::find(t.columns.begin(), t.columns.end(), a.column);
    if (it == t.columns.end()) throw DataError(a.rain + ": no column '" + a.column + "'");
    col = static_cast<int>(it - t.columns.begin());
  }
  std::vector<double> p(t.values.col(col).data(), t.values.col(col).data() + t.rows());
  const auto cl = rainfall_cluster_list(p, a.u, a.halfwidth);
  Table out;
  out.columns = {"Y1", "Y2", "Y3"};
  out.values.resize(static_cast<Eigen::Index>(cl.size()), 3);
  for (std::size_t i = 0; i < cl.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) << cl[i].y1, cl[i].y2, cl[i].y3;
    if (t.has_dates()) out.dates.push_back(t.dates[cl[i].peak]);
  }
  run.write_text("clusters.csv", [&](std::ostream& os) { write_csv(os, out); });
  run.finish();
}

void cmd_ingest_exceed(const IngestArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const Threshold thr = resolve_threshold(a.thr, t.values);
  Run run("ingest exceed", c, {{"data", a.data}, {"threshold", to_json(thr)}});
  const ExceedanceSet ex = exceedances(t.values, thr.u, thr.v, thr.on);
  Table out = matrix_table(ex.rows());
  out.columns = t.columns;
  run.write_text("exceedances.csv", [&](std::ostream& os) { write_csv(os, out); });
  run.write_json("threshold.json", to_json(thr));
  run.finish();
}

// ---- fit ----

struct FitArgs {
  std::string data, init;
  bool pipeline = false;
  std::vector<double> q_grid;
  std::vector<std::string> families;
  int bootstrap = 1000;
  std::string family = "gumbel";
  std::string form;
  bool equal_alpha = false, zero_beta = false, standard = false, shared_sigma = false, shared_gamma = false;
  bool gamma0 = false, gamma_positive = false;
  int restarts = 5;
  double significance = 0.05;
  ThresholdArgs thr;
};

FitOptions fit_options(const FitArgs& a, const Common& c) {
  FitOptions o;
  o.threads = c.threads;
  o.optimizer.restarts = a.restarts;
  o.optimizer.seed = c.seed;
  return o;
}

void cmd_fit(const FitArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const int d = t.cols();
  const FitOptions fo = fit_options(a, c);
  if (a.pipeline) {
    PipelineOptions po;
    po.fit = fo;
    po.significance = a.significance;
    po.bootstrap.replicates = a.bootstrap;
    po.bootstrap.seed = c.seed;
    po.bootstrap.threads = c.threads;
    if (!a.q_grid.empty()) po.q_grid = a.q_grid;
    if (!a.families.empty()) po.families = parse_families(a.families);
    if (a.thr.q) po.q = a.thr.q;
    json fams = json::array();
    for (const auto& f : po.families) fams.push_back(to_string(f.family) + ":" + to_string(f.form));
    Run run("fit pipeline", c,
            {{"data", a.data}, {"q", a.thr.q ? json(*a.thr.q) : json()}, {"q_grid", po.q_grid}, {"families", fams},
             {"bootstrap", a.bootstrap}, {"significance", a.significance}, {"restarts", a.restarts}});
    try {
      const PipelineReport rep = model_selection_pipeline(t.values, po);
      run.write_json("pipeline.json", to_json(rep));
      run.write_json("trace.json", rep.trace);
      if (rep.final_fit) {
        Threshold thr{rep.u, Vector::Zero(d), {}, rep.q};
        run.write_json("fit.json", {{"fit", to_json(*rep.final_fit)}, {"threshold", to_json(thr)}, {"data", a.data}});
      }
    } catch (const PipelineError& e) {
      run.write_json("trace.json", e.trace());
      run.finish(tolerances_json(fo));
      throw;
    }
    run.finish(tolerances_json(fo));
    return;
  }
  const Threshold thr = resolve_threshold(a.thr, t.values);
  ModelTemplate tm;
  tm.family = family_from_string(a.family);
  tm.form = tm.family == Family::StructuredExp ? Form::R : (a.form.empty() ? Form::T : form_from_string(a.form));
  tm.dim = d;
  tm.shape_tie = a.equal_alpha;
  tm.zero_location = a.zero_beta;
  tm.fit_margins = !a.standard;
  tm.shared_sigma = a.shared_sigma;
  tm.shared_gamma = a.shared_gamma;
  if (a.gamma0 && a.gamma_positive) throw UsageError("--gamma0 and --gamma-positive are exclusive");
  if (a.gamma0) tm.gamma = GammaMode::Zero;
  if (a.gamma_positive) tm.gamma = GammaMode::Positive;
  tm.validate();
  Run run("fit", c, {{"data", a.data}, {"template", to_json(tm)}, {"threshold", to_json(thr)}, {"restarts", a.restarts}, {"init", a.init}});
  const ExceedanceSet ex = exceedances(t.values, thr.u, thr.v, thr.on);
  if (ex.size() < 1) throw DataError("no exceedances at the given threshold");
  FitOptions o = fo;
  if (!a.init.empty()) {
    const GpModel init = model_from_json(read_json(a.init));
    if (init.dim() != d) throw UsageError("--init model dimension differs from the data");
    const ModelEvaluator ev(init);
    int bad = 0;
    for (int i = 0; i < ex.size(); ++i) {
      double lc = kNegInf;
      try {
        lc = ev.log_censored(ex.row(i), ex.censor_floor());
      } catch (const std::exception&) {
      }
      if (!std::isfinite(lc)) ++bad;
    }
    if (bad > 0 || !init.admissible()) {
      std::ostringstream os;
      os << "initial model is not admissible: " << bad << " of " << ex.size() << " exceedances have zero likelihood"
         << (init.admissible() ? "" : "; the generator has infinite exponential moments");
      throw NumericalError(os.str());
    }
    o.init = init;
  }
  const FitResult f = fit_mle(tm, ex, o);
  run.write_json("fit.json", {{"fit", to_json(f)}, {"threshold", to_json(thr)}, {"data", a.data}});
  run.finish(tolerances_json(fo));
}

// ---- diagnose ----

struct DiagArgs {
  std::string data, fit;
  std::vector<int> subset;
  std::vector<double> q_grid = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  std::vector<double> t_grid = {1.5, 2.0, 4.0};
  std::vector<double> weights;
  int bootstrap = 1000;
  int nsim = 100000;
  int component = 1;
};

void cmd_diagnose_chi(const DiagArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const IndexList J = a.subset.empty() ? all_indices(t.cols()) : to_indices(a.subset, t.cols());
  Run run("diagnose chi", c, {{"data", a.data}, {"subset", a.subset}, {"q_grid", a.q_grid}, {"bootstrap", a.bootstrap}, {"fit", a.fit}});
  BootstrapOptions bo{a.bootstrap, 0.95, c.seed, c.threads};
  const ThresholdSelection sel = threshold_select(t.values, a.q_grid, bo, J);
  run.write_text("chi.csv", [&](std::ostream& os) { write_csv(os, sel.curve); });
  json summary = to_json(sel);
  if (!a.fit.empty()) {
    const LoadedFit lf = load_fit(a.fit);
    summary["model_chi"] = to_json(model_chi(lf.fit.model, J, {a.nsim, c.seed, c.threads, 20}));
  }
  run.write_json("chi.json", summary);
  run.finish();
}

void cmd_diagnose_stability(const DiagArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const LoadedFit lf = load_fit(a.fit);
  const IndexList J = a.subset.empty() ? IndexList{} : to_indices(a.subset, t.cols());
  Run run("diagnose stability", c, {{"data", a.data}, {"fit", a.fit}, {"subset", a.subset}, {"t", a.t_grid}, {"bootstrap", a.bootstrap}});
  const ExceedanceSet ex = exceedances(t.values, lf.thr.u, lf.thr.v, lf.thr.on);
  BootstrapOptions bo{a.bootstrap, 0.95, c.seed, c.threads};
  json all = json::array();
  std::vector<IndexList> sets;
  if (J.empty())
    for (int j = 0; j < t.cols(); ++j) sets.push_back({j});
  else
    sets.push_back(J);
  run.write_text("stability.csv", [&](std::ostream& os) {
    os << "subset,t,ratio,lower,upper,omitted\n";
    for (const auto& S : sets) {
      const StabilityCurve sc = stability_ratio(ex, lf.fit.model.margins().sigma(), lf.fit.model.margins().gamma(), S, a.t_grid, bo);
      all.push_back(to_json(sc));
      std::string label;
      for (int j : S) label += (label.empty() ? "" : "+") + std::to_string(j + 1);
      for (std::size_t k = 0; k < sc.t.size(); ++k) {
        os << label << ',' << format_number(sc.t[k]) << ',' << format_number(sc.ratio[k]) << ',' << format_number(sc.lower[k]) << ','
           << format_number(sc.upper[k]) << ',' << (sc.omitted[k] ? 1 : 0) << '\n';
      }
    }
  });
  run.write_json("stability.json", all);
  run.finish();
}

void cmd_diagnose_sumstab(const DiagArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const LoadedFit lf = load_fit(a.fit);
  const Vector w = a.weights.empty() ? Vector::Ones(t.cols()) : broadcast(a.weights, t.cols(), "--weights");
  Run run("diagnose sumstab", c, {{"data", a.data}, {"fit", a.fit}, {"weights", vector_to_json(w)}});
  const ExceedanceSet ex = exceedances(t.values, lf.thr.u, lf.thr.v, lf.thr.on);
  const SumStabilityReport r = sum_stability_check(ex, w, lf.fit);
  run.write_json("sumstab.json", to_json(r));
  run.finish();
}

void cmd_diagnose_expprob(const DiagArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const LoadedFit lf = load_fit(a.fit);
  Run run("diagnose expprob", c, {{"data", a.data}, {"fit", a.fit}, {"nsim", a.nsim}});
  const ExceedanceSet ex = exceedances(t.values, lf.thr.u, lf.thr.v, lf.thr.on);
  const auto rows = exceedance_prob_check(lf.fit.model, ex, {a.nsim, c.seed, c.threads, 20});
  json j = json::array();
  for (const auto& r : rows) j.push_back(to_json(r));
  run.write_text("expprob.csv", [&](std::ostream& os) {
    os << "component,empirical,empirical_se,model,model_se\n";
    for (const auto& r : rows)
      os << r.component << ',' << format_number(r.empirical) << ',' << format_number(r.empirical_se) << ',' << format_number(r.model)
         << ',' << format_number(r.model_se) << '\n';
  });
  run.write_json("expprob.json", j);
  run.finish();
}

void cmd_diagnose_qq(const DiagArgs& a, const Common& c) {
  const Table t = read_data(a.data);
  const LoadedFit lf = load_fit(a.fit);
  const int j = to_indices({a.component}, t.cols())[0];
  Run run("diagnose qq", c, {{"data", a.data}, {"fit", a.fit}, {"component", a.component}});
  std::vector<double> s;
  for (int i = 0; i < t.rows(); ++i)
    if (t.values(i, j) > lf.thr.u(j)) s.push_back(t.values(i, j) - lf.thr.u(j));
  const auto pts = qq_points(s, lf.fit.model.margins().sigma(j), lf.fit.model.margins().gamma(j));
  run.write_text("qq.csv", [&](std::ostream& os) {
    os << "model,sample\n";
    for (const auto& p : pts) os << format_number(p.model) << ',' << format_number(p.sample) << '\n';
  });
  run.finish();
}

// ---- risk ----

struct RiskArgs {
  std::string data, fit;
  std::vector<double> weights, p = {0.01, 0.001}, y;
  std::string phi_mode = "binomial";
  int nsim = 100000;
  double zeta = 1.0;
  double aH = 10.0, budget = 100.0, step = 1.0, grid_p = 0.001;
  int fixed = 1, remainder = 4;
};

void cmd_risk_var(const RiskArgs& a, const Common& c) {
  const LoadedFit lf = load_fit(a.fit);
  const Table t = read_data(a.data);
  const int d = lf.fit.model.dim();
  if (t.cols() != d) throw DataError("data and fit dimensions differ");
  const Vector w = a.weights.empty() ? Vector::Ones(d) : broadcast(a.weights, d, "--weights");
  Run run("risk var", c, {{"data", a.data}, {"fit", a.fit}, {"weights", vector_to_json(w)}, {"p", a.p}, {"phi_mode", a.phi_mode}, {"nsim", a.nsim}});
  double phi = 0.0, phi_se = 0.0;
  json phi_j;
  if (a.phi_mode == "binomial") {
    const Proportion pb = phi_binomial(t.values, w, lf.thr.u);
    phi = pb.value;
    phi_se = pb.se;
    phi_j = {{"mode", "binomial"}, {"estimate", to_json(pb)}};
  } else if (a.phi_mode == "model") {
    const PhiEstimate pe = combine_phi(p_theta(lf.fit.model, w, a.nsim, c.seed, c.threads), exceedance_fraction(t.values, lf.thr.u));
    phi = pe.value;
    phi_se = pe.se;
    phi_j = {{"mode", "model"}, {"value", pe.value}, {"se", pe.se}, {"p_theta", to_json(pe.p_theta)}, {"exceed", to_json(pe.exceed)}};
  } else {
    throw UsageError("--phi-mode must be binomial or model");
  }
  if (!(phi > 0.0)) throw DataError("no positive weighted excesses; phi is zero");
  const auto rows = risk_table(lf.fit, w, lf.thr.u, phi, phi_se, a.p);
  json jr = json::array();
  for (const auto& r : rows) jr.push_back(to_json(r));
  run.write_text("risk.csv", [&](std::ostream& os) { write_csv(os, rows); });
  run.write_json("risk.json", {{"phi", phi_j}, {"rows", jr}});
  run.finish();
}

void cmd_risk_grid(const RiskArgs& a, const Common& c) {
  const LoadedFit lf = load_fit(a.fit);
  const Table t = read_data(a.data);
  const int d = lf.fit.model.dim();
  WeightGridSpec g;
  g.fixed = to_indices({a.fixed}, d)[0];
  g.remainder = to_indices({a.remainder}, d)[0];
  g.fixed_weight = a.aH;
  g.budget = a.budget;
  g.step = a.step;
  g.p = a.grid_p;
  Run run("risk grid", c,
          {{"data", a.data}, {"fit", a.fit}, {"aH", a.aH}, {"budget", a.budget}, {"fixed", a.fixed}, {"remainder", a.remainder},
           {"step", a.step}, {"p", a.grid_p}, {"nsim", a.nsim}});
  const SampleBatch draws = simulate(lf.fit.model, a.nsim, c.seed, c.threads);
  const auto cells = weight_grid(lf.fit.model, lf.thr.u, exceedance_fraction(t.values, lf.thr.u), draws.x, g);
  run.write_text("grid.csv", [&](std::ostream& os) { write_csv(os, cells); });
  run.finish();
}

void cmd_risk_event(const RiskArgs& a, const Common& c) {
  const LoadedFit lf = load_fit(a.fit);
  const int d = lf.fit.model.dim();
  const Vector y = broadcast(a.y, d, "--y");
  Run run("risk event", c, {{"fit", a.fit}, {"y", vector_to_json(y)}, {"zeta", a.zeta}, {"nsim", a.nsim}});
  const EventRate e = event_rate(lf.fit.model, lf.thr.u, y, a.zeta, {a.nsim, c.seed, c.threads, 20});
  run.write_json("event.json", to_json(e));
  run.finish();
}

// ---- simulate ----

struct SimArgs {
  std::string model, fit;
  int n = 1000;
  bool standard = false;
};

void cmd_simulate(const SimArgs& a, const Common& c) {
  if (a.model.empty() == a.fit.empty()) throw UsageError("give exactly one of --model or --fit");
  const GpModel m = a.model.empty() ? load_fit(a.fit).fit.model : model_from_json(read_json(a.model));
  if (m.form() == Form::U && !admissible_u(m.generator())) throw UsageError("U-form generator has infinite exponential moments");
  Run run("simulate", c, {{"model", a.model}, {"fit", a.fit}, {"n", a.n}, {"spec", to_json(m)}});
  const SampleBatch s = simulate(m, a.n, c.seed, c.threads);
  run.write_text("sample.csv", [&](std::ostream& os) { write_csv(os, matrix_table(s.x)); });
  if (a.standard) run.write_text("sample_standard.csv", [&](std::ostream& os) { write_csv(os, matrix_table(s.x0)); });
  run.write_json("sample.json", {{"method", to_string(s.method)}, {"ess", s.ess}, {"proposals", s.proposals}, {"ess_warning", s.ess_warning}, {"n", a.n}});
  run.finish();
}

void add_common(CLI::App* c, Common& o) {
  c->add_option("--out", o.out, "Output directory (default $MGPD_OUT_DIR or .)");
  c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  c->add_option("--threads", o.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate generalized Pareto peaks-over-threshold toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  Common common;

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Build data matrices from raw series");
  ingest->require_subcommand(1);
  auto* ir = ingest->add_subcommand("returns", "Negative returns 1 - Z_t/Z_{t-1} from price columns");
  ir->add_option("--prices", ia.prices, "CSV with a date column and one price column per asset")->required();
  add_common(ir, common);
  auto* ic = ingest->add_subcommand("clusters", "Rainfall cluster maxima (Y1, Y2, Y3)");
  ic->add_option("--rain", ia.rain, "CSV with daily precipitation")->required();
  ic->add_option("--u", ia.u, "Three-day sum threshold")->required();
  ic->add_option("--halfwidth", ia.halfwidth, "Days on each side of the peak")->capture_default_str();
  ic->add_option("--column", ia.column, "Precipitation column name (default first)");
  add_common(ic, common);
  auto* ie = ingest->add_subcommand("exceed", "Rows not below the threshold, shifted by it");
  ie->add_option("--data", ia.data, "Data CSV")->required();
  add_threshold_options(ie, ia.thr);
  add_common(ie, common);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Censored maximum likelihood fits and the model-selection pipeline");
  fit->add_option("--data", fa.data, "Data CSV (rows are observations)")->required();
  fit->add_flag("--pipeline", fa.pipeline, "Run the seven-step selection pipeline");
  fit->add_option("--q-grid", fa.q_grid, "Threshold grid for chi-based selection")->delimiter(',');
  fit->add_option("--families", fa.families, "Pipeline families, e.g. gumbel:T,gaussian:T")->delimiter(',');
  fit->add_option("--bootstrap", fa.bootstrap, "Bootstrap replicates for threshold selection")->capture_default_str();
  fit->add_option("--significance", fa.significance, "Level for likelihood-ratio tests")->capture_default_str();
  fit->add_option("--family", fa.family, "gumbel, reverse_gumbel, reverse_exp, log_gamma, gaussian or structured")->capture_default_str();
  fit->add_option("--form", fa.form, "T or U (R for structured)");
  fit->add_flag("--equal-alpha", fa.equal_alpha, "Tie shape parameters (exchangeable correlation for gaussian)");
  fit->add_flag("--zero-beta", fa.zero_beta, "Fix location parameters at zero");
  fit->add_flag("--standard", fa.standard, "Keep sigma = 1 and gamma = 0 (no marginal fit)");
  fit->add_flag("--shared-sigma", fa.shared_sigma, "One scale for all components");
  fit->add_flag("--shared-gamma", fa.shared_gamma, "One shape for all components");
  fit->add_flag("--gamma0", fa.gamma0, "Fix gamma = 0");
  fit->add_flag("--gamma-positive", fa.gamma_positive, "Restrict gamma > 0");
  fit->add_option("--init", fa.init, "Model JSON used as the starting point");
  fit->add_option("--restarts", fa.restarts, "Optimizer restarts")->capture_default_str();
  add_threshold_options(fit, fa.thr);
  add_common(fit, common);

  DiagArgs da;
  auto* diag = app.add_subcommand("diagnose", "Threshold selection and goodness-of-fit diagnostics");
  diag->require_subcommand(1);
  auto* dchi = diag->add_subcommand("chi", "Empirical chi curve with bootstrap bands and q*");
  auto* dst = diag->add_subcommand("stability", "Threshold-stability ratio curves");
  auto* dss = diag->add_subcommand("sumstab", "Sum-stability comparison");
  auto* dep = diag->add_subcommand("expprob", "Conditional exceedance probabilities, empirical vs model");
  auto* dqq = diag->add_subcommand("qq", "Marginal QQ points");
  for (auto* s : {dchi, dst, dss, dep, dqq}) {
    s->add_option("--data", da.data, "Data CSV")->required();
    add_common(s, common);
  }
  for (auto* s : {dst, dss, dep, dqq}) s->add_option("--fit", da.fit, "fit.json from the fit command")->required();
  dchi->add_option("--fit", da.fit, "Optional fit.json; adds the model chi");
  for (auto* s : {dchi, dst}) {
    s->add_option("--subset", da.subset, "Components (1-based)")->delimiter(',');
    s->add_option("--bootstrap", da.bootstrap, "Bootstrap replicates")->capture_default_str();
  }
  dchi->add_option("--q-grid", da.q_grid, "Quantile grid")->delimiter(',');
  dst->add_option("--t", da.t_grid, "t grid (> 1)")->delimiter(',');
  dss->add_option("--weights", da.weights, "Weights a > 0 (default 1)")->delimiter(',');
  for (auto* s : {dchi, dep}) s->add_option("--nsim", da.nsim, "Monte Carlo draws")->capture_default_str();
  dqq->add_option("--component", da.component, "Component (1-based)")->capture_default_str();

  RiskArgs ra;
  auto* risk = app.add_subcommand("risk", "Portfolio VaR/ES and event rates");
  risk->require_subcommand(1);
  auto* rv = risk->add_subcommand("var", "VaR and ES with delta-method intervals");
  auto* rg = risk->add_subcommand("grid", "VaR/ES over a weight grid with model-based phi");
  auto* re = risk->add_subcommand("event", "Poisson event rate");
  for (auto* s : {rv, rg, re}) {
    s->add_option("--fit", ra.fit, "fit.json from the fit command")->required();
    s->add_option("--nsim", ra.nsim, "Monte Carlo draws")->capture_default_str();
    add_common(s, common);
  }
  for (auto* s : {rv, rg}) s->add_option("--data", ra.data, "Data CSV")->required();
  rv->add_option("--weights", ra.weights, "Portfolio weights")->delimiter(',');
  rv->add_option("--p", ra.p, "Tail probabilities")->delimiter(',');
  rv->add_option("--phi-mode", ra.phi_mode, "binomial or model")->capture_default_str();
  rg->add_option("--aH", ra.aH, "Weight of the fixed component")->capture_default_str();
  rg->add_option("--budget", ra.budget, "Total weight")->capture_default_str();
  rg->add_option("--fixed", ra.fixed, "Fixed component (1-based)")->capture_default_str();
  rg->add_option("--remainder", ra.remainder, "Component taking the rest of the budget (1-based)")->capture_default_str();
  rg->add_option("--step", ra.step, "Grid step")->capture_default_str();
  rg->add_option("--p", ra.grid_p, "Tail probability")->capture_default_str();
  re->add_option("--y", ra.y, "Risk levels in data units")->delimiter(',')->required();
  re->add_option("--zeta", ra.zeta, "Yearly rate of threshold exceedances")->required();
  re->get_option("--nsim")->default_val(1000000);

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Draw from a GP model");
  sim->add_option("--model", sa.model, "Model JSON");
  sim->add_option("--fit", sa.fit, "fit.json (uses the fitted model)");
  sim->add_option("--n", sa.n, "Number of draws")->capture_default_str();
  sim->add_flag("--standard", sa.standard, "Also write standard-scale draws");
  add_common(sim, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ir) cmd_ingest_returns(ia, common);
    else if (*ic) cmd_ingest_clusters(ia, common);
    else if (*ie) cmd_ingest_exceed(ia, common);
    else if (*fit) cmd_fit(fa, common);
    else if (*dchi) cmd_diagnose_chi(da, common);
    else if (*dst) cmd_diagnose_stability(da, common);
    else if (*dss) cmd_diagnose_sumstab(da, common);
    else if (*dep) cmd_diagnose_expprob(da, common);
    else if (*dqq) cmd_diagnose_qq(da, common);
    else if (*rv) cmd_risk_var(ra, common);
    else if (*rg) cmd_risk_grid(ra, common);
    else if (*re) cmd_risk_event(ra, common);
    else if (*sim) cmd_simulate(sa, common);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
