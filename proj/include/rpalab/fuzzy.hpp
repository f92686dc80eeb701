#pragma once

#include <string>
#include <vector>

#include "rpalab/layers.hpp"

namespace rpalab {

/// Gaussian regime memberships: projection, R centers and per-regime log scales.
struct FuzzyParams {
  Linear proj;
  Parameter centers;    // [R, D], N(0, 1/D)
  Parameter log_sigma;  // [R], zeros

  FuzzyParams(const std::string& name, std::size_t d_model, std::size_t regimes, Rng& rng);
  std::size_t regimes() const { return log_sigma.value.numel(); }
  void collect(std::vector<Parameter*>& out);
};

/// mu[b,t,:] = softmax(clamp(-0.5 |W h + b - c_r|^2 exp(-2 log_sigma_r), +-30)), NaN -> 1/R.
/// The precision exp(-2 log_sigma) is clamped to [1e-3, 1e3].
Var memberships(const Var& h, const Var& proj_w, const Var& proj_b, const Var& centers, const Var& log_sigma);
Var memberships(Tape& tape, const Var& h, FuzzyParams& p);
Tensor memberships(const Tensor& h, FuzzyParams& p);

/// Mean over positions of -sum_r mu log(max(mu, 1e-8)).
Var membership_entropy(const Var& mu);
double membership_entropy(const Tensor& mu);

/// Share of positions whose largest membership is >= threshold.
double saturation_fraction(const Tensor& mu, double threshold = 0.9);

}  // namespace rpalab
