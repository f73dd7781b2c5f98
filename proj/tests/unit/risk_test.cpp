#include <gtest/gtest.h>

#include <cmath>

#include "mgpd/mgpd.hpp"

using namespace mgpd;

namespace {
Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  int k = 0;
  for (double x : v) out(k++) = x;
  return out;
}
}  // namespace

TEST(ValueAtRisk, AtPhiEqualsThresholdSum) {
  const Portfolio pf = make_portfolio(vec({1, 2, 3}), vec({0.1, 0.2, 0.3}), MarginalParams::common(3, 0.5, 0.3));
  EXPECT_NEAR(value_at_risk(pf, 0.05, 0.05), 1.4, 1e-14);
}

TEST(ValueAtRisk, ExponentialQuantile) {
  const Portfolio pf = make_portfolio(vec({0.5, 0.5}), Vector::Zero(2), MarginalParams::common(2, 1.0, 0.0));
  EXPECT_NEAR(value_at_risk(pf, 0.1, 0.01), std::log(10.0), 1e-14);
}

TEST(ValueAtRisk, MatchesUnivariateQuantileOfTheSum) {
  const MarginalParams mg(vec({0.020, 0.041, 0.038, 0.035}), Vector::Constant(4, 0.43));
  const Vector u = vec({0.03, 0.05, 0.06, 0.04});
  const Portfolio pf = make_portfolio(Vector::Ones(4), u, mg);
  const double phi = 0.08, p = 0.01;
  const double s = mg.sigma().sum();
  EXPECT_NEAR(value_at_risk(pf, phi, p), u.sum() + s * (std::pow(phi / p, 0.43) - 1.0) / 0.43, 1e-12);
}

TEST(ExpectedShortfall, ExponentialMeanExcess) {
  const Portfolio pf = make_portfolio(vec({2, 1}), vec({1, 1}), MarginalParams(vec({0.5, 1.5}), vec({0, 0})));
  const double v = value_at_risk(pf, 0.2, 0.01);
  EXPECT_NEAR(expected_shortfall(pf, 0.2, 0.01), v + 2.5, 1e-12);
}

TEST(ExpectedShortfall, ExceedsVarAndMatchesTailIntegral) {
  const Portfolio pf = make_portfolio(Vector::Ones(2), vec({0.2, 0.1}), MarginalParams::common(2, 0.3, 0.35));
  const double phi = 0.1;
  for (double p : {0.05, 0.01, 0.001}) {
    const double es = expected_shortfall(pf, phi, p);
    EXPECT_GT(es, value_at_risk(pf, phi, p));
    // ES(p) = (1/p) * integral of VaR(q) over q in (0, p), midpoint rule in log q.
    const int m = 20000;
    const double lo = std::log(p) - 60.0;
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      const double lq = lo + (std::log(p) - lo) * (i + 0.5) / m;
      acc += value_at_risk(pf, phi, std::exp(lq)) * std::exp(lq);
    }
    acc *= (std::log(p) - lo) / m / p;
    EXPECT_NEAR(es, acc, 1e-4 * es);
  }
  EXPECT_THROW(expected_shortfall(make_portfolio(Vector::Ones(1), Vector::Zero(1), MarginalParams::common(1, 1.0, 1.2)), 0.1, 0.01),
               std::invalid_argument);
}

TEST(ValueAtRisk, RejectsInvalidInput) {
  const Portfolio pf = make_portfolio(Vector::Ones(2), Vector::Zero(2), MarginalParams::standard(2));
  EXPECT_THROW(value_at_risk(pf, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(value_at_risk(pf, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(make_portfolio(vec({1, -1}), Vector::Zero(2), MarginalParams::standard(2)), std::invalid_argument);
  EXPECT_THROW(make_portfolio(Vector::Ones(2), Vector::Zero(2), MarginalParams(vec({1, 1}), vec({0.1, 0.2}))), std::invalid_argument);
}

TEST(PhiBinomial, Extremes) {
  Matrix y(3, 2);
  y << 2, 2, 3, 1, 5, 5;
  EXPECT_DOUBLE_EQ(phi_binomial(y, Vector::Ones(2), Vector::Zero(2)).value, 1.0);
  EXPECT_DOUBLE_EQ(phi_binomial(y, Vector::Ones(2), Vector::Constant(2, 10.0)).value, 0.0);
  const Proportion p = phi_binomial(y, Vector::Ones(2), Vector::Constant(2, 2.5));
  EXPECT_EQ(p.count, 1);
  EXPECT_NEAR(p.se, std::sqrt((1.0 / 3) * (2.0 / 3) / 3), 1e-14);
}

TEST(PTheta, ConcentratedWeightGivesMarginalProbability) {
  const GpModel m(Form::T, GeneratorSpec::gaussian(vec({0, 0.4}), (Matrix(2, 2) << 1, 0.5, 0.5, 1).finished()), MarginalParams::standard(2));
  McOptions mc;
  mc.nsim = 200000;
  const auto probs = model_exceedance_probabilities(m, mc);
  const Proportion p = p_theta(m, vec({1.0, 1e-9}), 200000, 5);
  EXPECT_LT(std::abs(p.value - probs[0].value), 3.0 * std::hypot(p.se, probs[0].se));
}

TEST(PTheta, ComonotoneModelEqualsMarginal) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(vec({500, 500}), vec({0, 0})), MarginalParams::standard(2));
  const Proportion p = p_theta(m, Vector::Ones(2), 50000, 6);
  const Proportion q = p_theta(m, vec({1.0, 1e-9}), 50000, 6);
  EXPECT_NEAR(p.value, q.value, 0.01);
}

TEST(CombinePhi, ProductAndDeltaSe) {
  const Proportion a = make_proportion(30, 100), b = make_proportion(50, 400);
  const PhiEstimate e = combine_phi(a, b);
  EXPECT_NEAR(e.value, 0.3 * 0.125, 1e-15);
  EXPECT_NEAR(e.se, std::hypot(0.3 * b.se, 0.125 * a.se), 1e-15);
}

TEST(RiskTable, RowsMatchDirectFormulas) {
  const GpModel truth(Form::T, GeneratorSpec::indep_gumbel(Vector::Constant(2, 2.0), Vector::Zero(2)), MarginalParams::common(2, 1.0, 0.1));
  const SampleBatch s = simulate(truth, 1500, 3);
  ModelTemplate t;
  t.family = Family::IndepGumbel;
  t.form = Form::T;
  t.dim = 2;
  t.shape_tie = true;
  t.zero_location = true;
  t.fit_margins = true;
  t.shared_gamma = true;
  FitOptions opt;
  opt.optimizer.restarts = 1;
  const FitResult f = fit_mle(t, ExceedanceSet(s.x, Vector::Zero(2), Vector::Zero(2)), opt);
  const Vector a = Vector::Ones(2), u = vec({1.0, 2.0});
  const auto rows = risk_table(f, a, u, 0.1, 0.01, {0.01, 0.001});
  ASSERT_EQ(rows.size(), 2u);
  const Portfolio pf = make_portfolio(a, u, f.model.margins());
  EXPECT_NEAR(rows[0].var.value, value_at_risk(pf, 0.1, 0.01), 1e-12);
  EXPECT_NEAR(rows[1].es.value, expected_shortfall(pf, 0.1, 0.001), 1e-12);
  ASSERT_TRUE(rows[0].var.se.has_value());
  EXPECT_GT(*rows[0].var.se, 0.0);
}

TEST(WeightGrid, BudgetAndSmoothness) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(Vector::Constant(4, 1.3), Vector::Zero(4)),
                  MarginalParams(vec({0.020, 0.041, 0.038, 0.035}), Vector::Constant(4, 0.43)));
  const SampleBatch s = simulate(m, 20000, 9);
  WeightGridSpec g;
  g.fixed = 0;
  g.remainder = 3;
  g.fixed_weight = 10;
  g.budget = 100;
  g.step = 10;
  const auto cells = weight_grid(m, Vector::Constant(4, 0.03), make_proportion(30, 180), s.x, g);
  ASSERT_FALSE(cells.empty());
  for (const auto& c : cells) {
    EXPECT_NEAR(c.weights.sum(), 100.0, 1e-9);
    EXPECT_GE(c.weights.minCoeff(), 1.0 - 1e-12);
  }
}

TEST(EventRate, AtThresholdEqualsZeta) {
  const GpModel m(Form::R, GeneratorSpec::structured(vec({1.0, 0.84, 1.08})), MarginalParams::common(3, 10.17, 0.0));
  McOptions mc;
  mc.nsim = 20000;
  const Vector u = Vector::Constant(3, 24.0);
  const EventRate e = event_rate(m, u, u, 1.4, mc);
  EXPECT_NEAR(e.mu, 1.4, 1e-12);
  const EventRate far = event_rate(m, u, Vector::Constant(3, 1e4), 1.4, mc);
  EXPECT_LT(far.mu, 1e-12);
}

TEST(EventRate, PoissonProbabilities) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(vec({2, 2}), vec({0, 0})), MarginalParams::standard(2));
  McOptions mc;
  mc.nsim = 20000;
  const EventRate e = event_rate(m, Vector::Zero(2), vec({1.0, 1.5}), 3.0, mc);
  EXPECT_NEAR(e.p_exactly_one, e.mu * std::exp(-e.mu), 1e-12);
  EXPECT_NEAR(e.p_at_least_one, -std::expm1(-e.mu), 1e-12);
  EXPECT_NEAR(e.mu, 3.0 * e.exceed_prob, 1e-12);
}
