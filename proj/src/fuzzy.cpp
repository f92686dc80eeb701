#include "rpalab/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rpalab {

FuzzyParams::FuzzyParams(const std::string& name, std::size_t d_model, std::size_t regimes, Rng& rng)
    : proj(name + ".proj", d_model, d_model, true, rng),
      centers(name + ".centers", Tensor({regimes, d_model})),
      log_sigma(name + ".log_sigma", Tensor({regimes}, 0.0), false) {
  if (regimes == 0) throw std::invalid_argument("fuzzy memberships need at least one regime");
  centers.value = rng.normal_tensor({regimes, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model)));
}

void FuzzyParams::collect(std::vector<Parameter*>& out) {
  proj.collect(out);
  out.push_back(&centers);
  out.push_back(&log_sigma);
}

Var memberships(const Var& h, const Var& proj_w, const Var& proj_b, const Var& centers, const Var& log_sigma) {
  if (h.value().rank() != 3) throw std::invalid_argument("memberships expects h of shape [B,T,D]");
  const std::size_t b = h.dim(0), t = h.dim(1), d = h.dim(2), r = centers.dim(0);
  if (r == 0) throw std::invalid_argument("memberships: R must be >= 1");
  if (centers.dim(1) != d || log_sigma.value().numel() != r)
    throw std::invalid_argument("memberships: parameter shapes do not match h " + shape_str(h.shape()));
  Var z = add(matmul(h, proj_w), proj_b);
  Var z2 = sq_dist(reshape(z, {b * t, d}), centers);  // [BT, R]
  Var precision = clamp(exp(mul(log_sigma, -2.0)), 1e-3, 1e3);
  Var logits = clamp(mul(mul(z2, precision), -0.5), -30.0, 30.0);
  const double huge = std::numeric_limits<double>::max();
  Var mu = nan_to_num(softmax_last(logits), 1.0 / static_cast<double>(r), huge, -huge);
  return reshape(mu, {b, t, r});
}

Var memberships(Tape& tape, const Var& h, FuzzyParams& p) {
  return memberships(h, tape.param(p.proj.weight), tape.param(*p.proj.bias), tape.param(p.centers),
                     tape.param(p.log_sigma));
}

Tensor memberships(const Tensor& h, FuzzyParams& p) {
  Tape tape;
  return memberships(tape, tape.constant(h), p).value();
}

Var membership_entropy(const Var& mu) {
  const double positions = static_cast<double>(mu.value().numel() / mu.shape().back());
  return mul(sum(mul(mu, log(clamp_min(mu, 1e-8)))), -1.0 / positions);
}

double membership_entropy(const Tensor& mu) {
  const std::size_t r = mu.shape().back(), n = mu.numel() / r;
  double h = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i) h -= mu[i] * std::log(std::max(mu[i], 1e-8));
  return h / static_cast<double>(n);
}

double saturation_fraction(const Tensor& mu, double threshold) {
  const std::size_t r = mu.shape().back(), n = mu.numel() / r;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = mu.data().data() + i * r;
    if (*std::max_element(row, row + r) >= threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace rpalab
