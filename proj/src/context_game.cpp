#include "rpalab/context_game.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rpalab {

double context_utility(double ce, double sat, double entropy, const UtilityConfig& cfg) {
  if (!(cfg.entropy_max > 0.0)) throw std::invalid_argument("context_utility: entropy_max must be positive");
  return -ce - cfg.lambda_sat * std::max(sat - cfg.sat_threshold, 0.0) +
         cfg.lambda_entropy * entropy / cfg.entropy_max;
}

ContextMixture::ContextMixture(std::vector<std::size_t> contexts, double eta)
    : contexts_(std::move(contexts)), log_w_(contexts_.size(), 0.0), eta_(eta) {
  if (contexts_.empty()) throw std::invalid_argument("ContextMixture needs at least one context");
  refresh();
}

void ContextMixture::update(const std::vector<double>& utilities) {
  if (utilities.size() != contexts_.size()) throw std::invalid_argument("ContextMixture::update: size mismatch");
  for (double u : utilities)
    if (!std::isfinite(u)) throw std::invalid_argument("ContextMixture::update: non-finite utility");
  for (std::size_t i = 0; i < log_w_.size(); ++i) log_w_[i] += eta_ * utilities[i];
  refresh();
}

void ContextMixture::refresh() {
  // re-centre so the largest log-weight is 0; softmax is unchanged and nothing overflows
  const double top = *std::max_element(log_w_.begin(), log_w_.end());
  for (double& w : log_w_) w -= top;
  q_.assign(log_w_.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < log_w_.size(); ++i) z += q_[i] = std::exp(log_w_[i]);
  for (double& v : q_) v = std::max(v / z, 1e-300);
}

std::size_t ContextMixture::sample(Rng& rng) const { return contexts_[rng.categorical(q_)]; }

std::size_t ContextMixture::largest() const { return *std::max_element(contexts_.begin(), contexts_.end()); }

}  // namespace rpalab
