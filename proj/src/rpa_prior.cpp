#include "rpalab/rpa_prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rpalab/rng.hpp"

namespace rpalab {

void RpaConfig::validate() const {
  if (!(tau_align > 0.0)) throw std::invalid_argument("rpa: tau_align must be > 0");
  if (sinkhorn_iters < 1) throw std::invalid_argument("rpa: sinkhorn_iters must be >= 1");
  if (posmix < 0.0 || posmix > 1.0) throw std::invalid_argument("rpa: posmix must lie in [0, 1]");
  if (!(clip > 0.0)) throw std::invalid_argument("rpa: clip must be > 0");
}

PositionalBasis soft_blocks(std::size_t T, std::size_t K) {
  if (T == 0 || K == 0) throw std::invalid_argument("soft_blocks: T and K must be >= 1");
  PositionalBasis pb;
  pb.half_width = std::max(1.0, static_cast<double>(T) / static_cast<double>(K) * 1.5);
  pb.centers.resize(K);
  const double span = static_cast<double>(T - 1);
  for (std::size_t k = 0; k < K; ++k)
    pb.centers[k] = K == 1 ? 0.0 : span * static_cast<double>(k) / static_cast<double>(K - 1);
  pb.phi = Tensor({T, K});
  for (std::size_t t = 0; t < T; ++t) {
    double row = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double dist = std::abs(static_cast<double>(t) - pb.centers[k]) / pb.half_width;
      const double v = dist <= 1.0 ? 0.5 * (1.0 + std::cos(std::clamp(dist, 0.0, 1.0) * std::numbers::pi)) : 0.0;
      pb.phi.at(t, k) = v;
      row += v;
    }
    for (std::size_t k = 0; k < K; ++k) pb.phi.at(t, k) /= row + 1e-6;
  }
  return pb;
}

Tensor pos_distance(std::size_t T) {
  Tensor d({T, T});
  const double denom = std::max(1.0, static_cast<double>(T) - 1.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j)
      d.at(i, j) = std::abs(static_cast<double>(i) - static_cast<double>(j)) / denom;
  return d;
}

Tensor sinkhorn(const Tensor& x, std::size_t iters) {
  if (x.rank() != 2) throw std::invalid_argument("sinkhorn expects a matrix");
  Tensor m = x;
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += m.at(i, j);
      for (std::size_t j = 0; j < cols; ++j) m.at(i, j) /= s + 1e-9;
    }
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i) s += m.at(i, j);
      for (std::size_t i = 0; i < rows; ++i) m.at(i, j) /= s + 1e-9;
    }
  }
  return m;
}

Var sinkhorn(const Var& x, std::size_t iters) {
  Var m = x;
  for (std::size_t it = 0; it < iters; ++it) {
    m = div(m, add(sum_axis(m, 1, true), 1e-9));
    m = div(m, add(sum_axis(m, 0, true), 1e-9));
  }
  return m;
}

Tensor sinkhorn_marginals(const Tensor& x, const std::vector<double>& r, const std::vector<double>& c,
                          std::size_t max_iters, double tol) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (r.size() != rows || c.size() != cols) throw std::invalid_argument("sinkhorn_marginals: marginal sizes");
  Tensor m = x;
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += m.at(i, j);
      for (std::size_t j = 0; j < cols; ++j) m.at(i, j) *= r[i] / s;
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i) s += m.at(i, j);
      for (std::size_t i = 0; i < rows; ++i) m.at(i, j) *= c[j] / s;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += m.at(i, j);
      worst = std::max(worst, std::abs(s - r[i]));
    }
    if (worst <= tol) break;
  }
  return m;
}

AlignmentPlan align_scores(const Var& mu, const Tensor& phi, double tau_align, std::size_t iters, bool detach) {
  if (!(tau_align > 0.0)) throw std::invalid_argument("align_scores: tau_align must be > 0");
  if (mu.value().rank() != 3 || phi.rank() != 2 || phi.dim(0) != mu.dim(1))
    throw std::invalid_argument("align_scores: expected mu [B,T,R] and phi [T,K], got " + shape_str(mu.shape()) +
                                " and " + shape_str(phi.shape()));
  Tape& tape = *mu.tape();
  Var s = mul(contract(mu, tape.constant(phi), "btr,tk->rk"), 1.0 / static_cast<double>(mu.dim(0)));
  if (detach) s = rpalab::detach(s);
  Var k = clamp(exp(mul(s, 1.0 / std::max(1e-6, tau_align))), 1e-9, 1e9);
  return {s, sinkhorn(k, iters)};
}

double warm_scale(std::size_t step, std::size_t warm_steps) {
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, warm_steps)));
}

Var standardize(const Var& x) {
  if (x.value().numel() < 2) return x.tape()->constant(Tensor(x.shape(), 0.0));
  return div(sub(x, mean(x)), add(stddev(x), 1e-6));
}

namespace {

Var finish_bias(const Var& curve, const BiasInputs& in) {
  Var c = nan_to_num(curve, 0.0, in.clip, -in.clip);
  Var tau = clamp(in.tau_att, 0.6, in.tau_max);
  Var b = clamp(div(c, tau), -in.clip, in.clip);
  return mul(b, std::clamp(in.bias_scale, 0.0, 1.0));
}

Var distance_bias(Tape& tape, const Var& pos_beta, std::size_t T) {
  return mul(neg(clamp_min(pos_beta, 0.0)), tape.constant(pos_distance(T)));
}

struct RpaParts {
  Tensor phi;
  AlignmentPlan align;
  Var raw, standardized, bias;
};

RpaParts rpa_parts(const Var& mu, const RpaConfig& cfg, const BiasInputs& in) {
  cfg.validate();
  if (mu.value().rank() != 3 || mu.dim(1) < 1) throw std::invalid_argument("rpa_bias: mu must be [B,T,R] with T >= 1");
  Tape& tape = *mu.tape();
  const std::size_t batch = mu.dim(0), T = mu.dim(1), R = mu.dim(2);
  RpaParts parts;
  parts.phi = soft_blocks(T, cfg.blocks > 0 ? cfg.blocks : R).phi;
  parts.align = align_scores(mu, parts.phi, cfg.tau_align, cfg.sinkhorn_iters, cfg.detach_scores);
  Var routed = contract(mu, parts.align.plan, "btr,rk->btk");
  Var raw = mul(contract(routed, tape.constant(parts.phi), "bsk,tk->st"), 1.0 / static_cast<double>(batch));
  if (cfg.posmix > 0.0)
    raw = add(mul(raw, 1.0 - cfg.posmix), mul(distance_bias(tape, in.pos_beta, T), cfg.posmix));
  parts.raw = raw;
  parts.standardized = standardize(raw);
  parts.bias = finish_bias(parts.standardized, in);
  return parts;
}

}  // namespace

Var rpa_bias(const Var& mu, const RpaConfig& cfg, const BiasInputs& in) { return rpa_parts(mu, cfg, in).bias; }

Var legacy_bias(const Var& mu, const BiasInputs& in) {
  if (mu.value().rank() != 3) throw std::invalid_argument("legacy_bias: mu must be [B,T,R]");
  Tape& tape = *mu.tape();
  const std::size_t batch = mu.dim(0), T = mu.dim(1);
  Var sim = standardize(mul(contract(mu, mu, "btr,bsr->ts"), 1.0 / static_cast<double>(batch)));
  Var k = sigmoid(in.kappa);
  Var curve = add(mul(k, sim), mul(add(neg(k), 1.0), distance_bias(tape, in.pos_beta, T)));
  return finish_bias(curve, in);
}

PriorTrace rpa_trace(const Tensor& mu, const RpaConfig& cfg, double tau_att, double pos_beta, std::size_t step) {
  Tape tape;
  BiasInputs in{tape.constant(Tensor::scalar(tau_att)), tape.constant(Tensor::scalar(pos_beta)),
                tape.constant(Tensor::scalar(0.0)), warm_scale(step, cfg.warm_steps), cfg.tau_max, cfg.clip};
  RpaParts parts = rpa_parts(tape.constant(mu), cfg, in);
  PriorTrace tr;
  tr.phi = parts.phi;
  tr.scores = parts.align.scores.value();
  tr.plan = parts.align.plan.value();
  tr.raw = parts.raw.value();
  tr.standardized = parts.standardized.value();
  tr.prior = {parts.bias.value(), in.bias_scale, cfg.clip, std::clamp(tau_att, 0.6, cfg.tau_max)};
  return tr;
}

PriorBias rpa_bias(const Tensor& mu, const RpaConfig& cfg, double tau_att, double pos_beta, std::size_t step) {
  return rpa_trace(mu, cfg, tau_att, pos_beta, step).prior;
}

PriorBias legacy_bias(const Tensor& mu, double pos_beta, double kappa, double tau_att, double clip, double tau_max) {
  Tape tape;
  BiasInputs in{tape.constant(Tensor::scalar(tau_att)), tape.constant(Tensor::scalar(pos_beta)),
                tape.constant(Tensor::scalar(kappa)), 1.0, tau_max, clip};
  return {legacy_bias(tape.constant(mu), in).value(), 1.0, clip, std::clamp(tau_att, 0.6, tau_max)};
}

std::vector<double> kl_map_attention(const std::vector<double>& z, const std::vector<double>& prior) {
  if (z.size() != prior.size() || z.empty()) throw std::invalid_argument("kl_map_attention: size mismatch");
  for (double p : prior)
    if (!(p > 0.0)) throw std::invalid_argument("kl_map_attention: prior entries must be strictly positive");
  Tensor logits({z.size()});
  for (std::size_t i = 0; i < z.size(); ++i) logits[i] = z[i] + std::log(prior[i]);
  const Tensor a = softmax_rows(logits);
  return {a.data().begin(), a.data().end()};
}

std::vector<double> row_sum_check(const Tensor& a, double tol) {
  if (a.rank() != 2) throw std::invalid_argument("row_sum_check expects a matrix");
  const std::size_t n = a.dim(0), k = a.dim(1);
  const auto rs = row_sums(a), cs = col_sums(a);
  double worst = 0.0;
  std::string where;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::abs(rs[i] - 1.0 / static_cast<double>(n));
    if (e > worst) worst = e, where = "row " + std::to_string(i);
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double e = std::abs(cs[j] - 1.0 / static_cast<double>(k));
    if (e > worst) worst = e, where = "column " + std::to_string(j);
  }
  if (worst > tol) {
    std::ostringstream msg;
    msg << "row_sum_check: marginal violated at " << where << " by " << worst;
    throw std::invalid_argument(msg.str());
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < k; ++c) out[i] += a.at(i, c) * a.at(j, c);
  return out;
}

void write_csv(std::ostream& out, const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 2) throw std::invalid_argument("write_csv: rank 1 or 2 only");
  const std::size_t rows = t.rank() == 2 ? t.dim(0) : 1, cols = t.shape().back();
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out << t[i * cols + j] << (j + 1 == cols ? '\n' : ',');
  out.precision(old);
}

void write_csv(const std::string& path, const Tensor& t) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(f, t);
}

std::optional<Tensor> PriorCache::find(const Key& key) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void PriorCache::store(const Key& key, Tensor bias) {
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(key, std::move(bias));
}

void PriorCache::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

std::size_t PriorCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::uint64_t param_fingerprint(const std::vector<const Parameter*>& params) {
  std::uint64_t h = fnv1a64("");
  for (const Parameter* p : params) {
    h = fnv1a64(p->name, h);
    const auto& d = p->value.storage();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double)), h);
  }
  return h;
}

}  // namespace rpalab
