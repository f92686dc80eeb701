#include "rpalab/layers.hpp"

#include <cmath>

namespace rpalab {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(name + ".weight", Tensor({in, out})) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight.value = rng.uniform_tensor({in, out}, -bound, bound);
  if (with_bias) bias.emplace(name + ".bias", rng.uniform_tensor({out}, -bound, bound), false);
}

Var Linear::operator()(Tape& tape, const Var& x) {
  Var y = matmul(x, tape.param(weight));
  return bias ? add(y, tape.param(*bias)) : y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

LayerNormParams::LayerNormParams(const std::string& name, std::size_t d)
    : gamma(name + ".gamma", Tensor({d}, 1.0), false), beta(name + ".beta", Tensor({d}, 0.0), false) {}

Var LayerNormParams::operator()(Tape& tape, const Var& x) {
  return layer_norm(x, tape.param(gamma), tape.param(beta));
}

void LayerNormParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

}  // namespace rpalab
