#pragma once

#include <json.hpp>

#include <stdexcept>

#include "mgpd/core.hpp"
#include "mgpd/generators.hpp"

namespace mgpd {

// Generator + margins + construction tag.
class GpModel {
 public:
  GpModel() = default;
  GpModel(Form form, GeneratorSpec generator, MarginalParams margins)
      : form_(form), gen_(std::move(generator)), margins_(std::move(margins)) {
    if (gen_.dim() != margins_.dim()) throw std::invalid_argument("GpModel: generator and margins dimension mismatch");
    const bool structured = gen_.family() == Family::StructuredExp;
    if (form_ == Form::R) {
      if (!structured) throw std::invalid_argument("GpModel: the R form is only available for the structured family");
      if (!margins_.common_sigma() || !margins_.common_gamma()) {
        throw std::invalid_argument("GpModel: the R form requires common sigma and gamma");
      }
      if (margins_.gamma(0) < 0.0) throw std::invalid_argument("GpModel: the R form requires gamma >= 0");
    } else if (structured) {
      throw std::invalid_argument("GpModel: the structured family is used with the R form");
    }
  }

  static GpModel standard(Form form, GeneratorSpec generator) {
    const int d = generator.dim();
    return {form, std::move(generator), MarginalParams::standard(d)};
  }

  Form form() const { return form_; }
  const GeneratorSpec& generator() const { return gen_; }
  const MarginalParams& margins() const { return margins_; }
  int dim() const { return gen_.dim(); }

  // Finite exponential moments for U forms; always true for T forms.
  bool admissible() const {
    if (form_ == Form::U) return admissible_u(gen_);
    return true;
  }

 private:
  Form form_ = Form::T;
  GeneratorSpec gen_;
  MarginalParams margins_;
};

inline nlohmann::json to_json(const GpModel& m) {
  return {{"form", to_string(m.form())},
          {"generator", to_json(m.generator())},
          {"sigma", vector_to_json(m.margins().sigma())},
          {"gamma", vector_to_json(m.margins().gamma())}};
}

inline GpModel model_from_json(const nlohmann::json& j) {
  const Form f = form_from_string(j.at("form").get<std::string>());
  GeneratorSpec g = generator_from_json(j.at("generator"));
  const int d = g.dim();
  Vector sigma = j.contains("sigma") ? vector_from_json(j.at("sigma")) : Vector::Ones(d);
  Vector gamma = j.contains("gamma") ? vector_from_json(j.at("gamma")) : Vector::Zero(d);
  if (sigma.size() == 1 && d > 1) sigma = Vector::Constant(d, sigma(0));
  if (gamma.size() == 1 && d > 1) gamma = Vector::Constant(d, gamma(0));
  return {f, std::move(g), MarginalParams(sigma, gamma)};
}

}  // namespace mgpd
