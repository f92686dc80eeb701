#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rpalab/autodiff.hpp"
#include "rpalab/rng.hpp"

namespace rpalab {

/// y = x W (+ b) with W stored [in, out]. Weights and bias start U(-1/sqrt(in), 1/sqrt(in)).
struct Linear {
  Parameter weight;
  std::optional<Parameter> bias;

  Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng&& rng)
      : Linear(name, in, out, with_bias, rng) {}
  Var operator()(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out);
};

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;

  LayerNormParams(const std::string& name, std::size_t d);
  Var operator()(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out);
};

}  // namespace rpalab
