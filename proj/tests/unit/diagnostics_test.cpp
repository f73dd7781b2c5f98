#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mgpd/mgpd.hpp"

using namespace mgpd;

namespace {
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Matrix uniforms(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = u(rng);
  return m;
}
}  // namespace

TEST(EmpiricalChi, SingleComponentIsOne) {
  const Matrix x = uniforms(1000, 2, 1);
  for (double q : {0.5, 0.8, 0.95}) EXPECT_NEAR(empirical_chi(x, {0}, q).value, 1.0, 1e-12);
}

TEST(EmpiricalChi, ComonotoneIsOne) {
  Matrix x = uniforms(1000, 1, 2);
  Matrix y(1000, 3);
  y << x, x, x;
  for (double q : {0.5, 0.9}) EXPECT_NEAR(empirical_chi(y, {0, 1, 2}, q).value, 1.0, 1e-12);
}

TEST(EmpiricalChi, IndependenceLevel) {
  const int n = 100000;
  const Matrix x = uniforms(n, 2, 3);
  for (double q : {0.5, 0.8, 0.9}) {
    const double c = empirical_chi(x, {0, 1}, q).value;
    // chi = P(both above) / (1 - q), binomial SE of the numerator.
    const double p = (1 - q) * (1 - q);
    const double se = std::sqrt(p * (1 - p) / n) / (1 - q);
    EXPECT_LT(std::abs(c - (1 - q)), 3.0 * se) << q;
  }
}

TEST(EmpiricalChi, FlagsSparseTail) {
  const Matrix x = uniforms(50, 2, 4);
  EXPECT_TRUE(empirical_chi(x, {0, 1}, 0.99).flagged);
  EXPECT_FALSE(empirical_chi(x, {0, 1}, 0.9).flagged);
  EXPECT_THROW(empirical_chi(x, {0, 2}, 0.9), std::invalid_argument);
}

TEST(ThresholdSelect, ComonotoneGivesGridMinimum) {
  Matrix x = uniforms(2000, 1, 5);
  Matrix y(2000, 2);
  y << x, x;
  BootstrapOptions bo;
  bo.replicates = 50;
  const ThresholdSelection s = threshold_select(y, {0.6, 0.7, 0.8, 0.9}, bo);
  ASSERT_TRUE(s.q_star.has_value());
  EXPECT_DOUBLE_EQ(*s.q_star, 0.6);
}

TEST(ChiCurve, BootstrapBandsAreDeterministicAcrossThreads) {
  const Matrix x = uniforms(500, 2, 6);
  BootstrapOptions a, b;
  a.replicates = b.replicates = 80;
  b.threads = 4;
  const ChiCurve c1 = chi_curve(x, {0, 1}, {0.5, 0.8}, a), c2 = chi_curve(x, {0, 1}, {0.5, 0.8}, b);
  EXPECT_EQ(c1.lower, c2.lower);
  EXPECT_EQ(c1.upper, c2.upper);
}

TEST(ModelChi, OneDimensionIsOne) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(Vector::Constant(1, 2.0), Vector::Zero(1)), MarginalParams::standard(1));
  EXPECT_NEAR(model_chi(m, {0}).value, 1.0, 1e-12);
}

TEST(ModelChi, ComonotoneLimit) {
  // Nearly degenerate spread: T_1 and T_2 almost equal.
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(v2(400.0, 400.0), v2(0, 0)), MarginalParams::standard(2));
  McOptions mc;
  mc.nsim = 20000;
  EXPECT_NEAR(model_chi(m, {0, 1}, mc).value, 1.0, 0.01);
}

TEST(ModelChi, MatchesSimulatedLogisticSample) {
  const GpModel m(Form::U, GeneratorSpec::indep_gumbel(v2(2.5, 2.5), v2(0, 0)), MarginalParams::standard(2));
  McOptions mc;
  mc.nsim = 200000;
  const McEstimate c = model_chi(m, {0, 1}, mc);
  const SampleBatch s = simulate(m, 200000, 12);
  double both = 0, one = 0;
  for (int i = 0; i < s.x.rows(); ++i) {
    both += s.x(i, 0) > 0 && s.x(i, 1) > 0;
    one += s.x(i, 0) > 0;
  }
  // chi for GP margins: P(X_1 > 0, X_2 > 0) / P(X_1 > 0).
  const double emp = both / one;
  const double se = std::sqrt(emp * (1 - emp) / one);
  EXPECT_LT(std::abs(emp - c.value), 3.0 * std::hypot(se, c.se));
}

TEST(ExceedanceProbabilities, ExchangeableModelEqualAcrossComponents) {
  const GpModel m(Form::U, GeneratorSpec::indep_gumbel(Vector::Constant(3, 2.0), Vector::Zero(3)), MarginalParams::standard(3));
  McOptions mc;
  mc.nsim = 50000;
  const auto p = model_exceedance_probabilities(m, mc);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_NEAR(p[0].value, p[1].value, 4 * p[0].se + 1e-12);
  EXPECT_NEAR(p[0].value, p[2].value, 4 * p[0].se + 1e-12);
}

TEST(ExceedanceProbabilities, SelfConsistentWithSample) {
  const GpModel m(Form::T, GeneratorSpec::gaussian(v2(0, 0.5), (Matrix(2, 2) << 1, 0.4, 0.4, 1).finished()), MarginalParams::standard(2));
  const SampleBatch s = simulate(m, 20000, 13);
  McOptions mc;
  mc.nsim = 200000;
  for (const auto& r : exceedance_prob_check(m, ExceedanceSet(s.x, Vector::Zero(2), Vector::Zero(2)), mc))
    EXPECT_LT(std::abs(r.empirical - r.model), 3.0 * std::hypot(r.empirical_se, r.model_se));
}

TEST(Stability, UnitTGivesRatioOne) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(v2(2, 2), v2(0, 0)), MarginalParams(v2(1, 2), v2(0.1, 0.2)));
  const SampleBatch s = simulate(m, 2000, 14);
  BootstrapOptions bo;
  bo.replicates = 20;
  const StabilityCurve c = stability_ratio(ExceedanceSet(s.x, Vector::Zero(2), Vector::Zero(2)), m.margins().sigma(), m.margins().gamma(), {0, 1}, {1.0}, bo);
  EXPECT_DOUBLE_EQ(c.ratio[0], 1.0);
  EXPECT_THROW(stability_ratio(ExceedanceSet(s.x, Vector::Zero(2), Vector::Zero(2)), m.margins().sigma(), m.margins().gamma(), {0}, {0.5}, bo),
               std::invalid_argument);
}

TEST(SumStability, OneDimensionFitsCoincide) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(Vector::Constant(1, 2.0), Vector::Zero(1)), MarginalParams::common(1, 1.5, 0.2));
  const SampleBatch s = simulate(m, 3000, 15);
  const ExceedanceSet data(s.x, Vector::Zero(1), Vector::Zero(1));
  const GpFit direct = fit_gp(std::vector<double>(s.x.data(), s.x.data() + s.x.rows()));
  const SumStabilityReport r = sum_stability_check(data, Vector::Ones(1), MarginalParams::common(1, direct.sigma, direct.gamma));
  EXPECT_EQ(r.n_positive, 3000);
  EXPECT_NEAR(r.univariate.sigma, direct.sigma, 1e-6);
  EXPECT_NEAR(r.implied_sigma, direct.sigma, 1e-12);
  EXPECT_NEAR(r.univariate.loglik, r.implied_loglik, 1e-6);
}

TEST(SumStability, NeedsSharedShape) {
  Matrix x(2, 2);
  x << 1, 1, 2, 2;
  EXPECT_ANY_THROW(sum_stability_check(ExceedanceSet(x, Vector::Zero(2), Vector::Zero(2)), v2(1, 1), MarginalParams(v2(1, 1), v2(0.1, 0.2))));
}

TEST(Qq, ExactQuantilesLieOnDiagonal) {
  std::vector<double> s;
  const int n = 99;
  for (int i = 1; i <= n; ++i) s.push_back(-std::log1p(-i / (n + 1.0)));
  for (const QqPoint& p : qq_points(s, 1.0, 0.0)) EXPECT_NEAR(p.sample, p.model, 1e-12);
}

TEST(Qq, UpperEndpointViolationIsFlagged) {
  EXPECT_THROW(qq_points({0.5, 1.0, 2.5}, 1.0, -0.5), DataError);
}

TEST(Qq, SimulatedSampleNearDiagonal) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(Vector::Constant(1, 2.0), Vector::Zero(1)), MarginalParams::common(1, 2.0, 0.1));
  const SampleBatch s = simulate(m, 2000, 16);
  const auto pts = qq_points(std::vector<double>(s.x.data(), s.x.data() + s.x.rows()), 2.0, 0.1);
  // Kolmogorov-Smirnov 95% band in probability units.
  const double band = 1.36 / std::sqrt(2000.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double F = 1.0 - std::pow(1.0 + 0.1 * pts[i].sample / 2.0, -10.0);
    EXPECT_LT(std::abs(F - (i + 1.0) / (pts.size() + 1.0)), band + 1.0 / pts.size());
  }
}
