#include "rpalab/guardian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rpalab/model.hpp"

namespace rpalab {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

GuardianPolicy::GuardianPolicy(Rng& rng)
    : l1_("guardian.l1", 4, 64, true, rng),
      l2_("guardian.l2", 64, 64, true, rng),
      head_("guardian.mean", 64, 3, true, rng),
      log_std_("guardian.log_std", Tensor({3}, 0.0), false) {}

std::vector<Parameter*> GuardianPolicy::parameters() {
  std::vector<Parameter*> out;
  l1_.collect(out);
  l2_.collect(out);
  head_.collect(out);
  out.push_back(&log_std_);
  return out;
}

Tensor GuardianPolicy::mean(const GuardianState& s) {
  Tape tape;
  Var z = tanh(l2_(tape, tanh(l1_(tape, tape.constant(s.as_tensor())))));
  return head_(tape, z).value();
}

Tensor GuardianPolicy::stddev() const {
  Tensor s = log_std_.value;
  for (auto& v : s.data()) v = std::exp(v);
  return s;
}

GuardianPolicy::Sample GuardianPolicy::sample(const GuardianState& s, Rng& rng) {
  const Tensor m = mean(s), sd = stddev();
  double a[3];
  for (std::size_t i = 0; i < 3; ++i) a[i] = m[i] + sd[i] * rng.normal();
  Sample out{{a[0], a[1], a[2]}, 0.0};
  out.log_prob = log_prob(s, out.action);
  return out;
}

Var GuardianPolicy::log_prob(Tape& tape, const GuardianState& s, const GuardianAction& a) {
  Var z = tanh(l2_(tape, tanh(l1_(tape, tape.constant(s.as_tensor())))));
  Var m = head_(tape, z);  // [1,3]
  Var ls = tape.param(log_std_);
  Var scaled = div(sub(tape.constant(a.as_tensor()), m), add(exp(ls), 1e-8));
  Var terms = add(add(square(scaled), mul(ls, 2.0)), kLog2Pi);
  return mul(sum(terms), -0.5);
}

double GuardianPolicy::log_prob(const GuardianState& s, const GuardianAction& a) {
  Tape tape;
  return log_prob(tape, s, a).value().item();
}

std::vector<Tensor> GuardianPolicy::log_prob_grad(const GuardianState& s, const GuardianAction& a) {
  auto ps = parameters();
  std::vector<Tensor> saved;
  for (auto* p : ps) saved.push_back(p->grad), p->zero_grad();
  Tape tape;
  tape.backward(log_prob(tape, s, a));
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back(ps[i]->grad), ps[i]->grad = saved[i];
  return out;
}

double guardian_tau_update(double tau, double d_tau, double beta, double tau_max) {
  const double moved = tau + 0.03 * beta * d_tau;
  const double overshoot = std::max(moved - tau_max, 0.0);
  return std::clamp(moved - 0.10 * overshoot, 0.3, tau_max);
}

Guardian::Guardian(std::uint64_t seed, Options opt)
    : opt_(opt),
      rng_(Rng(seed).fork("guardian.sample")),
      policy_(Rng(seed).fork("guardian.init")),
      adam_(policy_.parameters(), {opt.lr, 0.9, 0.999, 1e-8, 0.0}) {}

GuardianPolicy::Sample Guardian::draw(const GuardianState& s) {
  last_state_ = s;
  last_ = policy_.sample(s, rng_);
  return *last_;
}

void Guardian::nudge_lambdas(const GuardianAction& a) {
  lambda_delta_ = std::clamp(lambda_delta_ + 0.01 * beta_ * a.d_lambda_delta, 0.0, 1.0);
  lambda_sat_ = std::clamp(lambda_sat_ + 0.01 * beta_ * a.d_lambda_sat, 0.0, 0.6);
}

Controls Guardian::step(const GuardianState& s, Model& model) {
  if (!opt_.enable) return {model.mean_tau_att(), lambda_delta_, lambda_sat_};
  const auto smp = draw(s);
  const double tau_max = model.config().rpa.tau_max;
  for (std::size_t l = 0; l < model.layers(); ++l)
    model.set_tau_att(l, guardian_tau_update(model.tau_att(l), smp.action.d_tau, beta_, tau_max));
  nudge_lambdas(smp.action);
  return {model.mean_tau_att(), lambda_delta_, lambda_sat_};
}

Controls Guardian::step(const GuardianState& s, std::vector<double>& taus, double tau_max) {
  auto mean_tau = [&taus] {
    double m = 0.0;
    for (double t : taus) m += t;
    return taus.empty() ? 0.0 : m / static_cast<double>(taus.size());
  };
  if (!opt_.enable) return {mean_tau(), lambda_delta_, lambda_sat_};
  const auto smp = draw(s);
  for (double& t : taus) t = guardian_tau_update(t, smp.action.d_tau, beta_, tau_max);
  nudge_lambdas(smp.action);
  return {mean_tau(), lambda_delta_, lambda_sat_};
}

void Guardian::update(double reward) {
  if (!opt_.enable || !last_) return;
  Tape tape;
  Var loss = mul(policy_.log_prob(tape, *last_state_, last_->action), -reward);
  adam_.zero_grad();
  tape.backward(loss);
  adam_.step();
}

double shaped_reward(double ce, double ce_prev, const RewardConfig& cfg) {
  const double gain = std::max(ce_prev - ce, 0.0);
  const double zone = 1.0 / (1.0 + std::exp(-(cfg.zone_center - ce) / cfg.zone_width));
  return -ce + cfg.lambda_gain * gain + cfg.lambda_zone * zone;
}

double scripted_tau(std::size_t t, const ScriptedTauConfig& cfg, std::optional<double> val_ce,
                    std::optional<double> improvement) {
  double tau;
  const double span = cfg.tau_max - cfg.tau_min;
  if (t <= cfg.warm) {
    tau = cfg.tau_min + span * static_cast<double>(t) / static_cast<double>(std::max<std::size_t>(1, cfg.warm));
  } else {
    const double u = std::min(1.0, static_cast<double>(t - cfg.warm) / static_cast<double>(cfg.total - cfg.warm));
    tau = cfg.tau_min + span * (cfg.floor + (1.0 - cfg.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * u)));
  }
  if (val_ce && improvement && *val_ce < cfg.zone && *improvement < cfg.gain_gate)
    tau = std::min(tau + cfg.nudge, cfg.tau_max);
  return tau;
}

NoisySignResult noisy_sign_experiment(double tau, double tau_star, double p, double alpha, std::size_t trials, Rng& rng) {
  if (trials < 2) throw std::invalid_argument("noisy_sign_experiment needs at least two trials");
  const double lipschitz = 2.0;
  auto surface = [tau_star](double x) { return -(x - tau_star) * (x - tau_star); };
  const double g = -2.0 * (tau - tau_star);
  const double uphill = g >= 0.0 ? 1.0 : -1.0;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const double delta = rng.uniform() < p ? uphill : -uphill;
    const double gain = surface(tau + alpha * delta) - surface(tau);
    sum += gain;
    sq += gain * gain;
  }
  const double n = static_cast<double>(trials);
  NoisySignResult r;
  r.mean = sum / n;
  r.standard_error = std::sqrt(std::max(0.0, (sq - n * r.mean * r.mean) / (n - 1.0)) / n);
  r.bound = (2.0 * p - 1.0) * alpha * std::abs(g) - lipschitz * alpha * alpha / 2.0;
  r.alpha_max = 2.0 * (2.0 * p - 1.0) * std::abs(g) / lipschitz;
  return r;
}

std::vector<double> convergence_experiment(const ConvergenceConfig& cfg, Rng& rng, std::size_t stride) {
  std::vector<double> trace;
  double tau = std::clamp(cfg.tau0, cfg.tau_min, cfg.tau_max);
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const double grad = -2.0 * (tau - cfg.tau_star) + cfg.noise * rng.normal();
    tau = std::clamp(tau + cfg.step_scale / static_cast<double>(t) * grad, cfg.tau_min, cfg.tau_max);
    if (stride > 0 && t % stride == 0 && t != cfg.steps) trace.push_back(tau);
  }
  trace.push_back(tau);
  return trace;
}

}  // namespace rpalab
