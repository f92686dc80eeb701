#include "rpalab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace rpalab {

void ModelConfig::validate() const {
  if (vocab == 0 || d_model == 0 || layers == 0 || heads == 0) throw std::invalid_argument("model: zero-sized dimension");
  if (d_model % heads != 0) throw std::invalid_argument("model: d_model must be divisible by heads");
  if (regimes == 0) throw std::invalid_argument("model: regimes must be >= 1");
  if (experts == 0 || top_k == 0 || top_k > experts) throw std::invalid_argument("model: need 1 <= top_k <= experts");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  rpa.validate();
}

ModelConfig ModelConfig::full_preset() {
  ModelConfig c;
  c.vocab = 50257;
  c.d_model = 510;
  c.layers = 12;
  c.heads = 6;
  c.regimes = 4;
  c.dropout = 0.09;
  c.max_len = 1024;
  return c;
}

void Instrumentation::reset() {
  attention_applications = 0;
  bias_adds = 0;
  prior_builds = 0;
  prior_cache_hits = 0;
  controller_mutations = 0;
  schedule_mutations = 0;
}

namespace {

Var dropout(const Var& x, double p, const ForwardOptions& opt) {
  if (!opt.noisy() || p <= 0.0) return x;
  if (opt.rng == nullptr) throw std::logic_error("dropout needs an rng in training mode");
  Tensor mask(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask.data()) m = opt.rng->uniform() < p ? 0.0 : keep;
  return mul(x, x.tape()->constant(std::move(mask)));
}

Parameter scalar_param(const std::string& name, double v) { return Parameter(name, Tensor::scalar(v), false); }

}  // namespace

AttentionParams::AttentionParams(const std::string& name, const ModelConfig& cfg, Rng& rng)
    : wq(name + ".wq", cfg.d_model, cfg.d_model, false, rng),
      wk(name + ".wk", cfg.d_model, cfg.d_model, false, rng),
      wv(name + ".wv", cfg.d_model, cfg.d_model, false, rng),
      wo(name + ".wo", cfg.d_model, cfg.d_model, false, rng),
      value_gamma(name + ".value_gamma", cfg.regimes, cfg.heads, false, rng),
      tau_att(scalar_param(name + ".tau_att", cfg.tau_att_init)),
      kappa(scalar_param(name + ".kappa", cfg.kappa_init)),
      pos_beta(scalar_param(name + ".pos_beta", cfg.pos_beta_init)),
      tau_max(cfg.rpa.tau_max),
      clip(cfg.rpa.clip) {}

void AttentionParams::collect(std::vector<Parameter*>& out) {
  for (Linear* l : {&wq, &wk, &wv, &wo, &value_gamma}) l->collect(out);
  out.push_back(&tau_att);
  out.push_back(&kappa);
  out.push_back(&pos_beta);
}

ExpertParams::ExpertParams(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
    : up(name + ".up", d, hidden, true, rng), down(name + ".down", hidden, d, true, rng) {}

MoeParams::MoeParams(const std::string& name, const ModelConfig& cfg, Rng& rng)
    : gate(name + ".gate", cfg.regimes, cfg.experts, false, rng), top_k(cfg.top_k) {
  experts.reserve(cfg.experts);
  for (std::size_t e = 0; e < cfg.experts; ++e)
    experts.emplace_back(name + ".expert" + std::to_string(e), cfg.d_model, cfg.d_model * cfg.ff_mult, rng);
}

void MoeParams::collect(std::vector<Parameter*>& out) {
  gate.collect(out);
  for (auto& e : experts) {
    e.up.collect(out);
    e.down.collect(out);
  }
}

BlockParams::BlockParams(const std::string& name, const ModelConfig& cfg, Rng& rng)
    : mem(name + ".mem", cfg.d_model, cfg.regimes, rng),
      norm1(name + ".norm1", cfg.d_model),
      norm2(name + ".norm2", cfg.d_model),
      attn(name + ".attn", cfg, rng),
      moe(name + ".moe", cfg, rng),
      res_gate(name + ".res_gate", cfg.regimes, 1, false, rng) {}

void BlockParams::collect(std::vector<Parameter*>& out) {
  mem.collect(out);
  norm1.collect(out);
  norm2.collect(out);
  attn.collect(out);
  moe.collect(out);
  res_gate.collect(out);
}

AttentionOutput biased_attention(Tape& tape, const Var& x, const Var& mu, const Var& bias, AttentionParams& p,
                                 std::size_t heads, bool per_head_gate, double drop, const ForwardOptions& opt) {
  if (x.value().rank() != 3 || x.dim(1) == 0) throw std::invalid_argument("attention expects x [B,T,D] with T >= 1");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2), hd = D / heads;
  auto split = [&](const Var& v) { return permute(reshape(v, {B, T, heads, hd}), {0, 2, 1, 3}); };
  Var q = split(p.wq(tape, x));
  Var k = split(p.wk(tape, x));
  Var v = split(p.wv(tape, x));
  Var scores = mul(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
  scores = add(scores, bias);
  if (opt.counters) ++opt.counters->bias_adds;
  Var weights = softmax_last(scores, true);
  if (opt.counters) ++opt.counters->attention_applications;
  Var ctx = bmm(dropout(weights, drop, opt), v);  // [B,H,T,hd]
  Var gamma = sigmoid(mean_axis(p.value_gamma(tape, mu), 1, true));  // [B,1,H]
  Var out;
  Var gate;
  if (per_head_gate) {
    gate = gamma;
    ctx = mul(ctx, reshape(gamma, {B, heads, 1, 1}));
    out = p.wo(tape, reshape(permute(ctx, {0, 2, 1, 3}), {B, T, D}));
  } else {
    gate = mean_axis(gamma, 2, true);  // [B,1,1]
    out = mul(p.wo(tape, reshape(permute(ctx, {0, 2, 1, 3}), {B, T, D})), gate);
  }
  return {dropout(out, drop, opt), weights, gate};
}

MoeOutput fuzzy_moe(Tape& tape, const Var& x, const Var& mu, MoeParams& p, double drop, const ForwardOptions& opt) {
  const std::size_t E = p.experts.size();
  if (E == 0) throw std::invalid_argument("fuzzy_moe: no experts");
  Var logits = clamp(p.gate(tape, mu), -30.0, 30.0);
  if (opt.noisy()) {
    if (opt.rng == nullptr) throw std::logic_error("gate noise needs an rng in training mode");
    Tensor g(logits.shape());
    for (auto& v : g.data()) v = -std::log(-std::log(std::clamp(opt.rng->uniform(), 1e-6, 1.0 - 1e-6)));
    logits = add(logits, tape.constant(std::move(g)));
  }
  const double huge = std::numeric_limits<double>::max();
  Var y = nan_to_num(softmax_last(mul(logits, 1.0 / 0.5)), 0.0, huge, -huge);
  const std::size_t keep = std::min(p.top_k, E), rows = y.value().numel() / E;
  Tensor mask(y.shape(), 0.0);
  std::vector<std::size_t> order(E);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = y.value().data().data() + r * E;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t i = 0; i < keep; ++i) mask[r * E + order[i]] = 1.0;
  }
  Var kept = mul(y, tape.constant(std::move(mask)));
  y = div(kept, add(sum_axis(kept, kept.value().rank() - 1, true), 1e-6));
  Var out;
  for (std::size_t e = 0; e < E; ++e) {
    ExpertParams& ex = p.experts[e];
    Var h = dropout(gelu(ex.up(tape, x)), drop, opt);
    Var o = dropout(ex.down(tape, h), drop, opt);
    Var term = mul(slice_last(y, e), o);
    out = out.valid() ? add(out, term) : term;
  }
  MoeOutput res{out, y, std::vector<double>(E, 0.0), 0.0};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = 0; e < E; ++e) res.usage[e] += y.value()[r * E + e];
  for (auto& u : res.usage) {
    u /= static_cast<double>(rows);
    res.lb_reg += (u - 1.0 / static_cast<double>(E)) * (u - 1.0 / static_cast<double>(E));
  }
  res.lb_reg /= static_cast<double>(E);
  return res;
}

Var block_prior(Tape& tape, const Var& mu, AttentionParams& p, const ModelConfig& cfg, std::size_t layer,
                const ForwardOptions& opt) {
  const PriorCache::Key key{layer, mu.dim(1), opt.fingerprint};
  if (opt.cache) {
    if (auto hit = opt.cache->find(key)) {
      if (opt.counters) ++opt.counters->prior_cache_hits;
      return tape.constant(std::move(*hit));
    }
  }
  BiasInputs in{tape.param(p.tau_att), tape.param(p.pos_beta), tape.param(p.kappa), p.bias_scale, p.tau_max, p.clip};
  Var bias = cfg.use_rpa ? rpa_bias(mu, cfg.rpa, in) : legacy_bias(mu, in);
  if (opt.counters) ++opt.counters->prior_builds;
  if (opt.cache) opt.cache->store(key, bias.value());
  return bias;
}

BlockOutput block_forward(Tape& tape, const Var& x, BlockParams& p, const ModelConfig& cfg, std::size_t layer,
                          double drop, const ForwardOptions& opt) {
  Var mu = memberships(tape, x, p.mem);
  Var eta = sigmoid(p.res_gate(tape, mu));  // [B,T,1]
  Var bias = block_prior(tape, mu, p.attn, cfg, layer, opt);
  AttentionOutput a = biased_attention(tape, p.norm1(tape, x), mu, bias, p.attn, cfg.heads, cfg.per_head_gate, drop, opt);
  Var h = add(x, mul(eta, dropout(a.out, drop, opt)));
  MoeOutput m = fuzzy_moe(tape, p.norm2(tape, h), mu, p.moe, drop, opt);
  h = add(h, mul(eta, dropout(m.out, drop, opt)));
  BlockOutput out{h, mu, membership_entropy(mu), {}};
  out.stats.tau_att = p.attn.tau_att.value[0];
  out.stats.kappa = p.attn.kappa.value[0];
  out.stats.mu_entropy = out.mu_entropy.value().item();
  out.stats.lb_reg = m.lb_reg;
  out.stats.expert_usage = m.usage;
  out.stats.gate_mean = mean(eta.value());
  out.stats.sat_frac = saturation_fraction(mu.value());
  return out;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      embed_("embed", Tensor({cfg.vocab, cfg.d_model})),
      final_norm_("final_norm", cfg.d_model),
      head_("head", cfg.d_model, cfg.vocab, true, Rng(seed).fork("head")),
      dropout_(cfg.dropout) {
  cfg_.validate();
  Rng rng(seed);
  Rng er = rng.fork("embed");
  embed_.value = er.normal_tensor({cfg.vocab, cfg.d_model});
  // small output weights keep untrained logits near uniform
  Rng hr = rng.fork("head");
  head_.weight.value = hr.normal_tensor({cfg.d_model, cfg.vocab}, 0.02);
  head_.bias->value.fill(0.0);
  blocks_.reserve(cfg.layers);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    Rng br = rng.fork("block" + std::to_string(i));
    blocks_.emplace_back("block" + std::to_string(i), cfg_, br);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&embed_};
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
  if (!cfg_.tie_output) head_.collect(out);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.numel();
  return n;
}

ForwardResult Model::forward(Tape& tape, const std::vector<std::size_t>& tokens, std::size_t batch,
                             std::size_t length, const ForwardOptions& opt) {
  if (length == 0 || batch == 0) throw std::invalid_argument("forward: empty batch");
  if (length > cfg_.max_len)
    throw std::invalid_argument("forward: length " + std::to_string(length) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
  Var table = tape.param(embed_);
  Var h = embedding(table, tokens, {batch, length});
  ForwardResult res;
  BlockStats& agg = res.stats;
  agg.expert_usage.assign(cfg_.experts, 0.0);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    BlockOutput b = block_forward(tape, h, blocks_[i], cfg_, i, dropout_, opt);
    h = b.x;
    res.mu_entropy = res.mu_entropy.valid() ? add(res.mu_entropy, b.mu_entropy) : b.mu_entropy;
    agg.tau_att += b.stats.tau_att;
    agg.kappa += b.stats.kappa;
    agg.lb_reg += b.stats.lb_reg;
    agg.gate_mean += b.stats.gate_mean;
    agg.sat_frac += b.stats.sat_frac;
    for (std::size_t e = 0; e < cfg_.experts; ++e) agg.expert_usage[e] += b.stats.expert_usage[e];
  }
  const double inv = 1.0 / static_cast<double>(blocks_.size());
  res.mu_entropy = mul(res.mu_entropy, inv);
  agg.mu_entropy = res.mu_entropy.value().item();
  agg.tau_att *= inv;
  agg.kappa *= inv;
  agg.lb_reg *= inv;
  agg.gate_mean *= inv;
  agg.sat_frac *= inv;
  for (auto& u : agg.expert_usage) u *= inv;
  h = final_norm_(tape, h);
  res.logits = cfg_.tie_output ? matmul(h, transpose_last2(table)) : head_(tape, h);
  return res;
}

double Model::mean_tau_att() const {
  double s = 0.0;
  for (const auto& b : blocks_) s += b.attn.tau_att.value[0];
  return s / static_cast<double>(blocks_.size());
}

void Model::set_tau_att(std::size_t layer, double v) {
  blocks_.at(layer).attn.tau_att.value[0] = v;
  if (counters_) ++counters_->controller_mutations;
}

void Model::set_bias_scale(double s) {
  for (auto& b : blocks_) b.attn.bias_scale = s;
  if (counters_) ++counters_->schedule_mutations;
}

void Model::set_dropout(double p) {
  dropout_ = p;
  if (counters_) ++counters_->schedule_mutations;
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  for (const Parameter* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::load(const std::vector<Tensor>& values) {
  auto ps = parameters();
  if (values.size() != ps.size()) throw std::invalid_argument("load: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (values[i].shape() != ps[i]->value.shape())
      throw std::invalid_argument("load: shape mismatch for " + ps[i]->name);
    ps[i]->value = values[i];
  }
}

LossResult lm_loss(const Var& logits, const std::vector<std::size_t>& targets, const Var& mu_entropy,
                   const ModelConfig& cfg, double lambda_sat, bool training) {
  const std::size_t V = logits.shape().back(), N = logits.value().numel() / V;
  if (targets.size() != N) throw std::invalid_argument("lm_loss: target count mismatch");
  for (auto t : targets)
    if (t >= V) throw std::out_of_range("lm_loss: target " + std::to_string(t) + " outside vocabulary");
  Var flat = reshape(logits, {N, V});
  LossResult res;
  res.tokens = N;
  res.ce_pure_sum = cross_entropy_sum(flat.value(), targets, 0.0);
  Var loss = cross_entropy_sum(flat, targets, cfg.label_smooth);
  res.ce_smoothed_sum = loss.value().item();
  if (training && cfg.regimes >= 2 && mu_entropy.valid()) {
    const double h_max = std::log(static_cast<double>(std::max<std::size_t>(2, cfg.regimes)));
    Var pen = relu(add(neg(mu_entropy), cfg.ent_floor_eta * h_max));
    res.entropy_penalty = pen.value().item();
    loss = add(loss, mul(pen, cfg.ent_floor_alpha * 0.5 * (1.0 + lambda_sat)));
  }
  res.loss = loss;
  return res;
}

}  // namespace rpalab
