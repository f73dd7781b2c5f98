// Writes the synthetic datasets in tests/data and freezes reference results computed from them.
#include <json.hpp>

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "mgpd/mgpd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgpd;
using namespace std::chrono;

namespace {

Table bank_prices(std::uint64_t seed) {
  const int d = 4, n = 470;
  Rng rng(seed);
  std::student_t_distribution<double> common(3.0), own(4.0);
  const std::array<double, 4> scale = {0.010, 0.012, 0.014, 0.011};
  Table t;
  t.columns = {"A", "B", "C", "D"};
  t.values.resize(n + 1, d);
  t.values.row(0).setConstant(100.0);
  sys_days day = sys_days{year{2001} / January / 5};
  t.dates.push_back(day);
  for (int i = 0; i < n; ++i) {
    day += days{7};
    t.dates.push_back(day);
    const double g = common(rng);
    for (int j = 0; j < d; ++j) {
      const double y = std::clamp(scale[j] * (g + 0.8 * own(rng)), -0.5, 0.6);
      t.values(i + 1, j) = std::round(t.values(i, j) * (1.0 - y) * 1e4) / 1e4;
    }
  }
  return t;
}

Table daily_rain(std::uint64_t seed) {
  const int n = 365 * 40;
  Rng rng(seed);
  std::gamma_distribution<double> amount(0.75, 4.5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Table t;
  t.columns = {"precip"};
  t.values.resize(n, 1);
  sys_days day = sys_days{year{1970} / January / 1};
  bool wet = false;
  for (int i = 0; i < n; ++i) {
    t.dates.push_back(day);
    day += days{1};
    wet = unif(rng) < (wet ? 0.62 : 0.33);
    const double p = wet ? amount(rng) : 0.0;
    t.values(i, 0) = std::round(p * 10.0) / 10.0;
  }
  return t;
}

json fit_summary(const FitResult& f) {
  json est = json::object();
  for (std::size_t k = 0; k < f.names.size(); ++k) {
    est[f.names[k]] = {{"estimate", f.estimates(static_cast<Eigen::Index>(k))},
                       {"se", f.se ? json((*f.se)(static_cast<Eigen::Index>(k))) : json()}};
  }
  return {{"model", f.tmpl.label()}, {"loglik", f.loglik}, {"n_obs", f.n_obs}, {"parameters", est}};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("tests/data");
  fs::create_directories(dir);
  json frozen;

  const Table prices = bank_prices(20240501);
  write_csv((dir / "bank_prices.csv").string(), prices);
  {
    const Table r = negative_returns(prices);
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
    frozen["bank"] = {{"n_returns", r.rows()}, {"q", 0.83}, {"u", vector_to_json(u)}, {"n_exceedances", ex.size()}, {"fit", fit_summary(f)}};
  }

  const Table rain = daily_rain(19130101);
  write_csv((dir / "rain_daily.csv").string(), rain);
  {
    std::vector<double> p(rain.values.data(), rain.values.data() + rain.rows());
    const Matrix cl = rainfall_clusters(p, 12.0);
    const Vector u = Vector::Constant(3, 24.0);
    const ExceedanceSet ex = exceedances(cl, u, Vector::Zero(3), {2});
    ModelTemplate t;
    t.family = Family::StructuredExp;
    t.form = Form::R;
    t.dim = 3;
    t.fit_margins = true;
    t.shared_sigma = true;
    t.shared_gamma = true;
    t.gamma = GammaMode::Zero;
    const FitResult f = fit_mle(t, ex);
    frozen["rain"] = {{"n_days", rain.rows()}, {"cluster_u", 12.0}, {"n_clusters", cl.rows()}, {"u", 24.0}, {"n_exceedances", ex.size()},
                      {"fit", fit_summary(f)}};
  }

  std::ofstream((dir / "frozen.json").string()) << frozen.dump(2) << '\n';
  std::cout << frozen.dump(2) << '\n';
}
