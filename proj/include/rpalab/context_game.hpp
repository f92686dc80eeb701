#pragma once

#include <cstddef>
#include <vector>

#include "rpalab/rng.hpp"

namespace rpalab {

struct UtilityConfig {
  double lambda_sat = 1.0;
  double sat_threshold = 0.9;
  double lambda_entropy = 0.2;
  double entropy_max = 1.0;
};

/// -ce - lambda_sat * max(sat - sat_threshold, 0) + lambda_entropy * entropy / entropy_max
double context_utility(double ce, double sat, double entropy, const UtilityConfig& cfg);

/// Multiplicative-weights mixture over candidate context lengths, kept as log-weights.
class ContextMixture {
 public:
  ContextMixture(std::vector<std::size_t> contexts, double eta = 0.5);

  /// log_w += eta * u, then q = softmax(log_w).
  void update(const std::vector<double>& utilities);
  std::size_t sample(Rng& rng) const;

  const std::vector<std::size_t>& contexts() const { return contexts_; }
  const std::vector<double>& q() const { return q_; }
  const std::vector<double>& log_weights() const { return log_w_; }
  double eta() const { return eta_; }
  std::size_t size() const { return contexts_.size(); }
  std::size_t largest() const;

 private:
  void refresh();

  std::vector<std::size_t> contexts_;
  std::vector<double> log_w_;
  std::vector<double> q_;
  double eta_;
};

}  // namespace rpalab
