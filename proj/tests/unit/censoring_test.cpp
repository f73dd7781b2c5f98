#include <gtest/gtest.h>

#include <cmath>

#include "mgpd/mgpd.hpp"
#include "support/oracle.hpp"

using namespace mgpd;

namespace {
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }
const Vector kZero2 = Vector::Zero(2);
}  // namespace

TEST(Partition, TieRule) {
  EXPECT_TRUE(partition(v2(1, 1), kZero2, kZero2).censored.empty());
  EXPECT_EQ(partition(v2(1, -0.2), kZero2, kZero2).censored, IndexList{1});
  EXPECT_EQ(partition(v2(0, 0.5), kZero2, kZero2).censored, IndexList{0});
  EXPECT_EQ(partition(v2(0, 0.5), kZero2, kZero2).uncensored, IndexList{1});
}

TEST(Censored, NoCensoredComponentsEqualsDensity) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(v2(1.8, 1.8), v2(0, 0.3)), MarginalParams(v2(1.0, 2.0), v2(0.1, 0.0)));
  const Vector y = v2(0.4, 0.9);
  EXPECT_DOUBLE_EQ(log_censored_contribution(m, y, kZero2, kZero2), log_density_observed(m, y));
}

TEST(Censored, RecedingFloorRecoversDensity) {
  const GpModel m(Form::U, GeneratorSpec::indep_gumbel(v2(2.5, 2.5), v2(0, 0)), MarginalParams(v2(1.0, 1.0), v2(0.0, 0.0)));
  const Vector floor = Vector::Constant(2, -1e6);
  for (const Vector& y : {v2(0.4, -0.3), v2(-1.0, 0.2)})
    EXPECT_NEAR(log_censored_contribution(m, y, kZero2, floor), log_density_observed(m, y), 1e-6);
}

TEST(Censored, GumbelTwoDimensionsAgainstBruteForce) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(v2(1.6, 1.6), v2(0, 0)), MarginalParams::standard(2));
  const ModelEvaluator ev(m);
  for (double x1 : {0.2, 1.5}) {
    auto f = [&](double t) { return ev.log_density(v2(x1, t)); };
    const double ref = f(-0.5);
    const double want = std::log(std::exp(oracle::log_integral_plain(f, -oracle::kInf, -3.0, ref) - ref) +
                                 std::exp(oracle::log_integral_plain(f, -3.0, 0.0, ref) - ref)) + ref;
    EXPECT_NEAR(ev.log_censored(v2(x1, -0.1), kZero2), want, 1e-6);
  }
}

TEST(Censored, GaussianTwoDimensionsAgainstBruteForce) {
  const GpModel m(Form::U, GeneratorSpec::gaussian(v2(0, 0.4), (Matrix(2, 2) << 1, 0.5, 0.5, 1).finished()),
                  MarginalParams(v2(1.0, 0.5), v2(0.2, -0.1)));
  const ModelEvaluator ev(m);
  const Vector v = v2(-0.3, -0.2);
  auto f = [&](double t) { return ev.log_density(v2(t, 0.8)); };
  const double lo = oracle::lower_end(m.margins(), 0);
  const double ref = f(-1.0);
  const double want = oracle::log_integral_plain(f, lo, v(0), ref);
  EXPECT_NEAR(ev.log_censored(v2(-0.5, 0.8), v), want, 1e-6);
}

TEST(NegativeLogLikelihood, SingleUncensoredObservation) {
  const GpModel m(Form::T, GeneratorSpec::indep_reverse_exp(v2(1.5, 2.5), v2(0, 0.3)), MarginalParams::standard(2));
  Matrix x(1, 2);
  x << 0.3, 0.7;
  const ExceedanceSet data(x, Vector::Constant(2, -10.0), kZero2);
  EXPECT_NEAR(negative_log_likelihood(m, data), -log_density_observed(m, x.row(0).transpose()), 1e-12);
}

TEST(NegativeLogLikelihood, SumsContributions) {
  const GpModel m(Form::T, GeneratorSpec::indep_gumbel(v2(2, 2), v2(0, 0)), MarginalParams::standard(2));
  const SampleBatch s = simulate(m, 50, 4);
  const ExceedanceSet data(s.x, kZero2, kZero2);
  const ModelEvaluator ev(m);
  double want = 0.0;
  for (int i = 0; i < data.size(); ++i) want -= ev.log_censored(data.row(i), kZero2);
  EXPECT_NEAR(negative_log_likelihood(m, data), want, 1e-9);
  NllOptions opt;
  opt.threads = 3;
  EXPECT_NEAR(negative_log_likelihood(m, data, opt), want, 1e-9);
}
