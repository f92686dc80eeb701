#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rpalab/autodiff.hpp"
#include "rpalab/rng.hpp"

namespace rpalab::testing {

/// Central-difference oracle. `f` builds an output from leaf Vars; the scalar
/// probe is sum(out * w) for a fixed random w. Returns the worst elementwise
/// relative error |ad - fd| / max(|ad|, |fd|, floor).
inline double fd_max_rel_error(const std::function<Var(std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                               std::uint64_t seed = 7, double h = 1e-5, double floor = 1e-6) {
  Rng rng(seed);
  Tensor w;
  auto probe = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(tape.leaf(x));
    Var out = f(leaves);
    if (w.numel() != out.value().numel()) w = rng.uniform_tensor(out.shape(), -1.0, 1.0);
    Var loss = sum(mul(out, tape.constant(w)));
    if (grads) {
      tape.backward(loss);
      for (const auto& l : leaves) grads->push_back(tape.grad(l));
    }
    return loss.value().item();
  };
  std::vector<Tensor> ad;
  probe(inputs, &ad);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = probe(inputs, nullptr);
      inputs[k][i] = x0 - h;
      const double fm = probe(inputs, nullptr);
      inputs[k][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = ad[k][i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
    }
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace rpalab::testing
