#include <iostream>

#include "mgpd/mgpd.hpp"

using namespace mgpd;

int main() {
  const int d = 3;
  const GpModel truth(Form::U, GeneratorSpec::indep_gumbel(Vector::Constant(d, 2.5), Vector::Zero(d)),
                      MarginalParams(Vector::LinSpaced(d, 1.0, 2.0), Vector::Constant(d, 0.1)));
  const SampleBatch s = simulate(truth, 1500, 7);
  const ExceedanceSet ex(s.x, Vector::Zero(d), Vector::Zero(d));

  ModelTemplate t;
  t.family = Family::IndepGumbel;
  t.form = Form::U;
  t.dim = d;
  t.shape_tie = true;
  t.zero_location = true;
  t.fit_margins = true;
  t.shared_gamma = true;
  const FitResult f = fit_mle(t, ex);
  for (std::size_t k = 0; k < f.names.size(); ++k) {
    std::cout << f.names[k] << " = " << f.estimates(k);
    if (f.se) std::cout << " (" << (*f.se)(k) << ")";
    std::cout << '\n';
  }
  std::cout << "loglik = " << f.loglik << ", AIC = " << f.aic << '\n';

  const Vector a = Vector::Ones(d);
  const double phi = p_theta(f.model, a, 100000, 1).value;
  const Portfolio pf = make_portfolio(a, Vector::Zero(d), f.model.margins());
  for (double p : {0.01, 0.001}) {
    std::cout << "p = " << p << ": VaR = " << value_at_risk(pf, phi, p) << ", ES = " << expected_shortfall(pf, phi, p) << '\n';
  }
}
