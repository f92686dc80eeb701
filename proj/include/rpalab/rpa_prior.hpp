#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "rpalab/autodiff.hpp"

namespace rpalab {

struct RpaConfig {
  std::size_t blocks = 0;  // K; 0 means K = R
  double tau_align = 0.70;
  std::size_t sinkhorn_iters = 6;
  double posmix = 0.10;
  bool detach_scores = true;
  std::size_t warm_steps = 1200;
  double clip = 4.0;
  double tau_max = 1.6;

  void validate() const;
};

/// Raised-cosine blocks tiling 0..T-1; rows normalized by (rowsum + 1e-6).
struct PositionalBasis {
  Tensor phi;  // [T, K]
  std::vector<double> centers;
  double half_width = 1.0;
};

PositionalBasis soft_blocks(std::size_t T, std::size_t K);
/// |i - j| / max(1, T - 1)
Tensor pos_distance(std::size_t T);

/// Alternating row then column normalization (each with a +1e-9 guard), `iters` rounds.
Tensor sinkhorn(const Tensor& x, std::size_t iters);
Var sinkhorn(const Var& x, std::size_t iters);

/// Scales a positive matrix to row sums r and column sums c (sum r == sum c),
/// iterating until both marginals are within tol or max_iters is reached.
Tensor sinkhorn_marginals(const Tensor& x, const std::vector<double>& r, const std::vector<double>& c,
                          std::size_t max_iters = 100000, double tol = 1e-15);

/// Scores S[r,k] = batch-mean of sum_t mu[b,t,r] phi[t,k] and plan P = sinkhorn(clamp(exp(S / tau_align))).
struct AlignmentPlan {
  Var scores;
  Var plan;
};
AlignmentPlan align_scores(const Var& mu, const Tensor& phi, double tau_align, std::size_t iters, bool detach);

/// min(1, step / max(1, warm_steps))
double warm_scale(std::size_t step, std::size_t warm_steps);

/// Global z-score (x - mean) / (unbiased std + 1e-6). A single entry maps to 0.
Var standardize(const Var& x);

/// Differentiable inputs shared by both bias constructions.
struct BiasInputs {
  Var tau_att;
  Var pos_beta;
  Var kappa;
  double bias_scale = 1.0;  // clamped to [0, 1] at use
  double tau_max = 1.6;
  double clip = 4.0;
};

/// Alignment prior B(T) from memberships [B,T,R]: standardized, sanitized, divided by
/// clamp(tau_att, 0.6, tau_max), clipped and scaled.
Var rpa_bias(const Var& mu, const RpaConfig& cfg, const BiasInputs& in);
/// Fuzzy-similarity / distance blend used when alignment is off.
Var legacy_bias(const Var& mu, const BiasInputs& in);

struct PriorBias {
  Tensor bias;  // [T, T]
  double warm = 1.0;
  double clip = 4.0;
  double tau_used = 1.0;
};

/// Intermediate arrays of one prior construction, for inspection and CSV dumps.
struct PriorTrace {
  Tensor phi, scores, plan, raw, standardized;
  PriorBias prior;
};

PriorTrace rpa_trace(const Tensor& mu, const RpaConfig& cfg, double tau_att, double pos_beta, std::size_t step);
PriorBias rpa_bias(const Tensor& mu, const RpaConfig& cfg, double tau_att, double pos_beta, std::size_t step);
PriorBias legacy_bias(const Tensor& mu, double pos_beta, double kappa, double tau_att, double clip = 4.0,
                      double tau_max = 1.6);

/// softmax(z + log pi), the maximizer of a.z - KL(a || pi) over the simplex.
std::vector<double> kl_map_attention(const std::vector<double>& z, const std::vector<double>& prior);

/// Row sums of A A^T for A [N,K] whose rows sum to 1/N and columns to 1/K (checked to tol).
std::vector<double> row_sum_check(const Tensor& a, double tol = 1e-9);

/// Writes a rank-1 or rank-2 tensor as comma-separated rows.
void write_csv(const std::string& path, const Tensor& t);
void write_csv(std::ostream& out, const Tensor& t);

/// Evaluation-time store of B(T), keyed by layer, length and a parameter fingerprint.
/// Concurrent lookups share a lock; inserts take it exclusively.
class PriorCache {
 public:
  struct Key {
    std::size_t layer = 0;
    std::size_t length = 0;
    std::uint64_t fingerprint = 0;
    auto operator<=>(const Key&) const = default;
  };

  std::optional<Tensor> find(const Key& key) const;
  void store(const Key& key, Tensor bias);
  void clear();
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<Key, Tensor> entries_;
};

/// FNV-1a over names and raw bytes of the given parameters.
std::uint64_t param_fingerprint(const std::vector<const Parameter*>& params);

}  // namespace rpalab
