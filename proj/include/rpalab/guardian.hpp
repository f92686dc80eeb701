#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rpalab/layers.hpp"
#include "rpalab/optim.hpp"

namespace rpalab {

class Model;

struct GuardianState {
  double gate_delta = 0.0;
  double sat_frac = 0.0;
  double mu_entropy = 0.0;
  double val_loss = 0.0;

  Tensor as_tensor() const { return Tensor({1, 4}, {gate_delta, sat_frac, mu_entropy, val_loss}); }
};

struct GuardianAction {
  double d_tau = 0.0;
  double d_lambda_delta = 0.0;
  double d_lambda_sat = 0.0;

  Tensor as_tensor() const { return Tensor({1, 3}, {d_tau, d_lambda_delta, d_lambda_sat}); }
};

/// 4 -> 64 tanh -> 64 tanh -> 3 action means, plus a learned log-std per action.
class GuardianPolicy {
 public:
  explicit GuardianPolicy(Rng& rng);
  explicit GuardianPolicy(Rng&& rng) : GuardianPolicy(rng) {}

  struct Sample {
    GuardianAction action;
    double log_prob = 0.0;
  };

  Tensor mean(const GuardianState& s);
  Tensor stddev() const;
  Sample sample(const GuardianState& s, Rng& rng);
  /// -0.5 sum(((a - m) / (std + 1e-8))^2 + 2 log_std + log 2 pi)
  double log_prob(const GuardianState& s, const GuardianAction& a);
  /// Gradient of log_prob with the action held fixed, one tensor per parameter.
  std::vector<Tensor> log_prob_grad(const GuardianState& s, const GuardianAction& a);
  /// Records log_prob on the tape with the action as a constant.
  Var log_prob(Tape& tape, const GuardianState& s, const GuardianAction& a);

  std::vector<Parameter*> parameters();
  Parameter& log_std() { return log_std_; }
  Linear& mean_head() { return head_; }

 private:
  Linear l1_, l2_, head_;
  Parameter log_std_;
};

struct Controls {
  double tau_att = 0.0;  // mean over blocks after the step
  double lambda_delta = 0.0;
  double lambda_sat = 0.0;
};

/// tau + 0.03 beta d_tau, pulled back by 0.10 of any overshoot above tau_max, clamped to [0.3, tau_max].
double guardian_tau_update(double tau, double d_tau, double beta, double tau_max);

/// Training-time controller for attention temperature and penalty weights.
class Guardian {
 public:
  struct Options {
    bool enable = true;
    double lr = 1e-3;
  };

  Guardian(std::uint64_t seed, Options opt);

  void set_beta(double beta) { beta_ = beta; }
  double beta() const { return beta_; }
  double lambda_delta() const { return lambda_delta_; }
  double lambda_sat() const { return lambda_sat_; }
  bool enabled() const { return opt_.enable; }
  bool has_sample() const { return last_.has_value(); }
  const std::optional<GuardianPolicy::Sample>& last_sample() const { return last_; }

  /// Samples an action and applies it to every block's tau_att. Disabled: returns current values.
  Controls step(const GuardianState& s, Model& model);
  /// Same update applied to a plain list of temperatures.
  Controls step(const GuardianState& s, std::vector<double>& taus, double tau_max);
  /// One Adam step on -(log_prob * reward) for the last sample; no-op without one or when disabled.
  void update(double reward);

  GuardianPolicy& policy() { return policy_; }

 private:
  GuardianPolicy::Sample draw(const GuardianState& s);
  void nudge_lambdas(const GuardianAction& a);

  Options opt_;
  Rng rng_;
  GuardianPolicy policy_;
  AdamW adam_;
  double beta_ = 1.0;
  double lambda_delta_ = 0.0;
  double lambda_sat_ = 0.0;
  std::optional<GuardianState> last_state_;
  std::optional<GuardianPolicy::Sample> last_;
};

struct RewardConfig {
  double lambda_gain = 1.0;
  double lambda_zone = 0.5;
  double zone_center = 0.0;
  double zone_width = 1.0;
};

/// -ce + lambda_gain * max(ce_prev - ce, 0) + lambda_zone * sigmoid((zone_center - ce) / zone_width)
double shaped_reward(double ce, double ce_prev, const RewardConfig& cfg);

struct ScriptedTauConfig {
  double tau_min = 0.6;
  double tau_max = 1.6;
  std::size_t warm = 100;
  std::size_t total = 1000;
  double floor = 0.1;
  double zone = 0.0;  // nudge only when val CE is below this
  double gain_gate = 0.0;
  double nudge = 0.05;
};

/// Linear warm-in to tau_max over `warm` steps, cosine to the floor afterwards, and a
/// nudge min(tau + nudge, tau_max) when val CE < zone and improvement < gain_gate.
double scripted_tau(std::size_t t, const ScriptedTauConfig& cfg, std::optional<double> val_ce = std::nullopt,
                    std::optional<double> improvement = std::nullopt);

struct NoisySignResult {
  double mean = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;      // (2p - 1) alpha |g| - L alpha^2 / 2
  double alpha_max = 0.0;  // 2 (2p - 1) |g| / L
};

/// Monte Carlo of R(tau + alpha delta) - R(tau) on R = -(tau - tau_star)^2 (L = 2) where the
/// unit step delta points uphill with probability p.
NoisySignResult noisy_sign_experiment(double tau, double tau_star, double p, double alpha, std::size_t trials, Rng& rng);

struct ConvergenceConfig {
  double tau_star = 1.0;
  double tau_min = 0.3;
  double tau_max = 1.6;
  double tau0 = 0.3;
  double step_scale = 0.5;  // eta_t = step_scale / t
  double noise = 0.5;
  std::size_t steps = 100000;
};

/// Projected stochastic ascent on R = -(tau - tau_star)^2 with Gaussian gradient noise.
/// Returns the iterate after every `stride` steps (the last entry is the final iterate).
std::vector<double> convergence_experiment(const ConvergenceConfig& cfg, Rng& rng, std::size_t stride = 0);

}  // namespace rpalab
