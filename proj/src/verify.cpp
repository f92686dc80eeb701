#include "rpalab/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rpalab/context_game.hpp"
#include "rpalab/guardian.hpp"
#include "rpalab/model.hpp"
#include "rpalab/rpa_prior.hpp"

namespace rpalab {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

SuiteReport finish(std::string name, double measured, double tol, Clock::time_point t0, std::string detail,
                   bool pass) {
  SuiteReport r;
  r.name = std::move(name);
  r.measured = measured;
  r.tolerance = tol;
  r.seconds = elapsed(t0);
  r.detail = std::move(detail);
  r.pass = pass;
  return r;
}

double kl_objective(const std::vector<double>& a, const std::vector<double>& z, const std::vector<double>& pi) {
  double f = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) f += a[i] * z[i] - a[i] * std::log(a[i] / pi[i]);
  return f;
}

// Newton ascent restricted to sum(a) = 1. The step a_i (g_i - nu) solves the KKT system of
// the local quadratic model since the Hessian is diag(-1/a_i).
std::vector<double> kl_argmax_newton(const std::vector<double>& z, const std::vector<double>& pi) {
  const std::size_t n = z.size();
  std::vector<double> a(n, 1.0 / static_cast<double>(n)), g(n), step(n), trial(n);
  for (int it = 0; it < 200; ++it) {
    for (std::size_t i = 0; i < n; ++i) g[i] = z[i] - std::log(a[i] / pi[i]) - 1.0;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) num += a[i] * g[i], den += a[i];
    const double nu = num / den;
    double size = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      step[i] = a[i] * (g[i] - nu);
      size = std::max(size, std::abs(step[i]));
    }
    if (size < 1e-17) break;
    const double f0 = kl_objective(a, z, pi);
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      bool positive = true;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = a[i] + t * step[i];
        positive = positive && trial[i] > 0.0;
      }
      if (positive && kl_objective(trial, z, pi) >= f0 - 1e-15) break;
    }
    // renormalize away rounding drift off the simplex
    double s = 0.0;
    for (double v : trial) s += v;
    for (std::size_t i = 0; i < n; ++i) a[i] = trial[i] / s;
  }
  return a;
}

ModelConfig grad_model_config() {
  ModelConfig c;
  c.vocab = 11;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.regimes = 2;
  c.experts = 2;
  c.top_k = 2;
  c.max_len = 16;
  c.dropout = 0.0;
  c.rpa.detach_scores = false;
  return c;
}

}  // namespace

nlohmann::json SuiteReport::to_json() const {
  return {{"suite", name}, {"pass", pass}, {"measured", measured}, {"tolerance", tolerance},
          {"seconds", seconds}, {"detail", detail}};
}

SuiteReport verify_klmap(std::size_t cases, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t L = 2 + rng.below(5);
    std::vector<double> z(L), pi(L);
    double s = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      z[i] = rng.uniform(-4.0, 4.0);
      s += pi[i] = rng.uniform(0.05, 1.0);
    }
    for (double& p : pi) p /= s;
    const auto closed = kl_map_attention(z, pi);
    const auto oracle = kl_argmax_newton(z, pi);
    for (std::size_t i = 0; i < L; ++i) worst = std::max(worst, std::abs(closed[i] - oracle[i]));
  }
  const double secs = elapsed(t0);
  std::ostringstream d;
  d << cases << " cases, runtime " << secs << " s (limit 30 s)";
  return finish("klmap", worst, 1e-6, t0, d.str(), worst < 1e-6 && secs < 30.0);
}

SuiteReport verify_sinkhorn(std::size_t cases, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const Tensor p = sinkhorn(rng.uniform_tensor({8, 8}, 0.01, 5.0), 50);
    for (double s : row_sums(p)) worst = std::max(worst, std::abs(s - 1.0));
    for (double s : col_sums(p)) worst = std::max(worst, std::abs(s - 1.0));
  }
  return finish("sinkhorn", worst, 1e-6, t0, std::to_string(cases) + " random positive 8x8, 50 rounds",
                worst < 1e-6);
}

SuiteReport verify_rowsum(std::size_t cases, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t N = 1 + rng.below(8), K = 1 + rng.below(8);
    const Tensor a = sinkhorn_marginals(rng.uniform_tensor({N, K}, 0.05, 3.0),
                                        std::vector<double>(N, 1.0 / static_cast<double>(N)),
                                        std::vector<double>(K, 1.0 / static_cast<double>(K)));
    const double target = 1.0 / static_cast<double>(N * K);
    for (double v : row_sum_check(a)) worst = std::max(worst, std::abs(v - target));
  }
  return finish("rowsum", worst, 1e-9, t0, std::to_string(cases) + " matrices with N, K <= 8", worst < 1e-9);
}

SuiteReport verify_shift(std::size_t cases, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t T = 2 + rng.below(7), hd = 1 + rng.below(4);
    // dyadic scores and integer shifts keep every addition exact
    Tensor scores({T, T});
    for (auto& v : scores.data()) v = static_cast<double>(static_cast<int>(rng.below(4096)) - 2048) / 256.0;
    Tensor shifted = scores;
    for (std::size_t i = 0; i < T; ++i) {
      const double k = static_cast<double>(static_cast<int>(rng.below(2001)) - 1000);
      for (std::size_t j = 0; j < T; ++j) shifted.at(i, j) += k;
    }
    const Tensor v = rng.uniform_tensor({T, hd}, -1.0, 1.0);
    const Tensor out = matmul(softmax_rows(scores), v);
    const Tensor out_shifted = matmul(softmax_rows(shifted), v);
    if (!out.bit_equal(out_shifted)) ++mismatches;
  }
  return finish("shift", static_cast<double>(mismatches), 0.0, t0,
                std::to_string(cases) + " cases, outputs compared bit for bit", mismatches == 0);
}

SuiteReport verify_grad(std::uint64_t seed) {
  const auto t0 = Clock::now();
  const ModelConfig cfg = grad_model_config();
  Model model(cfg, seed);
  Rng rng(seed + 100);
  const std::size_t B = 2, T = 4;
  std::vector<std::size_t> x(B * T), y(B * T);
  for (auto& v : x) v = rng.below(cfg.vocab);
  for (auto& v : y) v = rng.below(cfg.vocab);
  ForwardOptions opt;
  opt.training = true;
  opt.deterministic = true;
  auto loss_at = [&](bool grad) {
    Tape tape;
    ForwardResult f = model.forward(tape, x, B, T, opt);
    LossResult l = lm_loss(f.logits, y, f.mu_entropy, cfg, 0.0, true);
    if (grad) tape.backward(l.loss);
    return l.loss.value().item();
  };
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  loss_at(true);
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double x0 = p->value[i];
      p->value[i] = x0 + h;
      const double fp = loss_at(false);
      p->value[i] = x0 - h;
      const double fm = loss_at(false);
      p->value[i] = x0;
      const double fd = (fp - fm) / (2.0 * h), ad = p->grad[i];
      const double err = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
      if (err > worst) worst = err, worst_name = p->name + "[" + std::to_string(i) + "]";
      ++checked;
    }
  const double secs = elapsed(t0);
  std::ostringstream d;
  d << checked << " entries over " << params.size() << " parameters, worst at " << worst_name << ", runtime "
    << secs << " s (limit 120 s)";
  return finish("grad", worst, 1e-3, t0, d.str(), worst < 1e-3 && secs < 120.0);
}

SuiteReport verify_signgain(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  const double p = 0.8, tau = 1.0, tau_star = 0.0;
  const double alpha = (2.0 * (2.0 * p - 1.0) * 2.0 / 2.0) / 2.0;
  const NoisySignResult r = noisy_sign_experiment(tau, tau_star, p, alpha, 10000, rng);
  const double z = std::abs(r.mean - r.bound) / r.standard_error;
  std::ostringstream d;
  d << "mean " << r.mean << ", bound " << r.bound << ", standard error " << r.standard_error;
  return finish("signgain", z, 3.0, t0, d.str(), r.mean > 0.0 && z < 3.0);
}

SuiteReport verify_ascent(std::uint64_t seed) {
  const auto t0 = Clock::now();
  const ConvergenceConfig cfg;
  std::size_t hits = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(seed * 1000 + s);
    const double err = std::abs(convergence_experiment(cfg, rng).back() - cfg.tau_star);
    worst = std::max(worst, err);
    if (err < 0.05) ++hits;
  }
  const double secs = elapsed(t0);
  std::ostringstream d;
  d << hits << "/100 seeds within 0.05 (worst " << worst << "), runtime " << secs << " s (limit 60 s)";
  return finish("ascent", static_cast<double>(hits), 95.0, t0, d.str(), hits >= 95 && secs < 60.0);
}

SuiteReport verify_nash(std::uint64_t seed) {
  const auto t0 = Clock::now();
  ContextMixture dominant({128, 256, 512}, 0.5);
  std::size_t took = 0;
  for (std::size_t n = 1; n <= 200 && took == 0; ++n) {
    dominant.update({-3.0, -2.0, -3.0});
    if (dominant.q()[1] > 0.99) took = n;
  }
  ContextMixture flat({128, 256, 512}, 0.5);
  flat.update({0.2, -0.1, 0.0});
  const auto q0 = flat.q();
  Rng rng(seed);
  for (int n = 0; n < 200; ++n) {
    const double u = rng.uniform(-5.0, 5.0);
    flat.update({u, u, u});
  }
  double drift = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) drift = std::max(drift, std::abs(flat.q()[i] - q0[i]));
  std::ostringstream d;
  d << "q(best) > 0.99 after " << took << " updates (limit 200), equal-utility drift " << drift;
  return finish("nash", drift, 1e-12, t0, d.str(), took > 0 && drift < 1e-12);
}

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names{"klmap", "sinkhorn", "rowsum", "shift",
                                              "grad",  "signgain",   "ascent", "nash"};
  return names;
}

std::vector<SuiteReport> run_verify(const std::string& suite) {
  static const std::vector<std::function<SuiteReport()>> runners{
      [] { return verify_klmap(); },  [] { return verify_sinkhorn(); }, [] { return verify_rowsum(); },
      [] { return verify_shift(); },  [] { return verify_grad(); },     [] { return verify_signgain(); },
      [] { return verify_ascent(); }, [] { return verify_nash(); }};
  const auto& names = verify_suites();
  std::vector<SuiteReport> out;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (suite == "all" || suite == names[i]) out.push_back(runners[i]());
  if (out.empty()) {
    std::string known;
    for (const auto& n : names) known += n + ", ";
    throw std::invalid_argument("unknown suite '" + suite + "' (known: " + known + "all)");
  }
  return out;
}

}  // namespace rpalab
