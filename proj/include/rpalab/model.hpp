#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "rpalab/fuzzy.hpp"
#include "rpalab/layers.hpp"
#include "rpalab/rpa_prior.hpp"

namespace rpalab {

struct ModelConfig {
  std::size_t vocab = 256;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t regimes = 4;
  std::size_t experts = 4;
  std::size_t top_k = 2;
  std::size_t ff_mult = 4;
  std::size_t max_len = 1024;
  double dropout = 0.09;
  double tau_att_init = 0.68;
  double pos_beta_init = 0.2;
  double kappa_init = 0.5;
  bool use_rpa = true;
  RpaConfig rpa;
  double label_smooth = 0.015;
  double ent_floor_eta = 0.02;
  double ent_floor_alpha = 1.0;
  bool per_head_gate = false;  // gate each head instead of one scalar per batch
  bool tie_output = false;     // reuse the embedding table as output projection

  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }

  /// Full-size settings of the reference runs (GPT-2 vocabulary).
  static ModelConfig full_preset();
};

/// Event counters read by the inference-neutrality checks.
struct Instrumentation {
  std::atomic<std::uint64_t> attention_applications{0};
  std::atomic<std::uint64_t> bias_adds{0};
  std::atomic<std::uint64_t> prior_builds{0};
  std::atomic<std::uint64_t> prior_cache_hits{0};
  std::atomic<std::uint64_t> controller_mutations{0};
  std::atomic<std::uint64_t> schedule_mutations{0};

  void reset();
};

struct ForwardOptions {
  bool training = false;
  bool deterministic = false;   // no dropout, no gate noise
  Rng* rng = nullptr;           // needed when training outside deterministic mode
  PriorCache* cache = nullptr;  // when set, B(T) is looked up / stored per layer
  std::uint64_t fingerprint = 0;
  Instrumentation* counters = nullptr;

  bool noisy() const { return training && !deterministic; }
};

struct AttentionParams {
  Linear wq, wk, wv, wo;
  Linear value_gamma;  // R -> H
  Parameter tau_att, kappa, pos_beta;
  double bias_scale = 1.0;
  double tau_max = 1.6;
  double clip = 4.0;

  AttentionParams(const std::string& name, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct ExpertParams {
  Linear up, down;
  ExpertParams(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng);
};

struct MoeParams {
  Linear gate;  // R -> E
  std::vector<ExpertParams> experts;
  std::size_t top_k;

  MoeParams(const std::string& name, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct BlockParams {
  FuzzyParams mem;
  LayerNormParams norm1, norm2;
  AttentionParams attn;
  MoeParams moe;
  Linear res_gate;  // R -> 1

  BlockParams(const std::string& name, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct BlockStats {
  double tau_att = 0.0;
  double kappa = 0.0;
  double mu_entropy = 0.0;
  double lb_reg = 0.0;
  std::vector<double> expert_usage;
  double gate_mean = 0.0;  // mean residual gate eta
  double sat_frac = 0.0;
};

/// Scores QK^T/sqrt(hd) + bias (same [T,T] bias for every head), causal softmax, dropout,
/// output projection, value gate, dropout.
struct AttentionOutput {
  Var out;      // [B,T,D]
  Var weights;  // [B,H,T,T]
  Var gate;     // [B,1,1] or [B,1,H]
};
AttentionOutput biased_attention(Tape& tape, const Var& x, const Var& mu, const Var& bias, AttentionParams& p,
                                 std::size_t heads, bool per_head_gate, double dropout, const ForwardOptions& opt);

struct MoeOutput {
  Var out;
  Var routing;  // [B,T,E] after top-k and renormalization
  std::vector<double> usage;
  double lb_reg = 0.0;
};
MoeOutput fuzzy_moe(Tape& tape, const Var& x, const Var& mu, MoeParams& p, double dropout, const ForwardOptions& opt);

/// Prior for one block from its memberships, honoring the evaluation cache.
Var block_prior(Tape& tape, const Var& mu, AttentionParams& p, const ModelConfig& cfg, std::size_t layer,
                const ForwardOptions& opt);

struct BlockOutput {
  Var x;
  Var mu;
  Var mu_entropy;
  BlockStats stats;
};
BlockOutput block_forward(Tape& tape, const Var& x, BlockParams& p, const ModelConfig& cfg, std::size_t layer,
                          double dropout, const ForwardOptions& opt);

struct ForwardResult {
  Var logits;      // [B,T,V]
  Var mu_entropy;  // mean over blocks
  BlockStats stats;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// tokens is row-major [batch, length].
  ForwardResult forward(Tape& tape, const std::vector<std::size_t>& tokens, std::size_t batch, std::size_t length,
                        const ForwardOptions& opt);

  std::size_t layers() const { return blocks_.size(); }
  BlockParams& block(std::size_t i) { return blocks_.at(i); }
  double tau_att(std::size_t layer) const { return blocks_.at(layer).attn.tau_att.value[0]; }
  double mean_tau_att() const;
  void set_tau_att(std::size_t layer, double v);
  double bias_scale() const { return blocks_.front().attn.bias_scale; }
  void set_bias_scale(double s);
  double dropout() const { return dropout_; }
  void set_dropout(double p);
  void attach(Instrumentation* counters) { counters_ = counters; }

  std::vector<Tensor> snapshot() const;
  void load(const std::vector<Tensor>& values);
  std::uint64_t fingerprint() const { return param_fingerprint(parameters()); }

 private:
  ModelConfig cfg_;
  Parameter embed_;
  std::vector<BlockParams> blocks_;
  LayerNormParams final_norm_;
  Linear head_;
  double dropout_;
  Instrumentation* counters_ = nullptr;
};

struct LossResult {
  Var loss;
  double ce_pure_sum = 0.0;
  double ce_smoothed_sum = 0.0;
  std::size_t tokens = 0;
  double entropy_penalty = 0.0;
};

/// Smoothed CE sum, plus (training and R >= 2) alpha/2 (1 + lambda_sat) relu(eta log max(2,R) - H(mu)).
LossResult lm_loss(const Var& logits, const std::vector<std::size_t>& targets, const Var& mu_entropy,
                   const ModelConfig& cfg, double lambda_sat, bool training);

}  // namespace rpalab
