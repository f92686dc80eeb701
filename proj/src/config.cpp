#include "rpalab/config.hpp"

#include <algorithm>
#include <fstream>

namespace rpalab {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RpaConfig, blocks, tau_align, sinkhorn_iters, posmix, detach_scores,
                                                warm_steps, clip, tau_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, vocab, d_model, layers, heads, regimes, experts, top_k,
                                                ff_mult, max_len, dropout, tau_att_init, pos_beta_init, kappa_init,
                                                use_rpa, rpa, label_smooth, ent_floor_eta, ent_floor_alpha,
                                                per_head_gate, tie_output)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticTaskConfig, length, filler, values, min_gap, max_gap,
                                                min_spacing, max_spacing, noise, order, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, source, path, synthetic, val_fraction, test_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GuardianConfig, enable, lr, beta_ramp, lambda_gain, lambda_zone)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GameConfig, enable, contexts, eta, lambda_sat, sat_threshold,
                                                lambda_entropy, probe_windows)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, peak_lr, flat_fraction, floor, decay_fraction, weight_decay, warm_in,
                                                ema, ema_decay, swa, swa_start, swa_min_gain, zone_percentile,
                                                zone_lo, zone_hi, chaos, chaos_fraction, glide)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, name, model, data, guardian, game, schedule, seed,
                                                tokens_per_step, epochs, steps_per_epoch, eval_context, eval_batch,
                                                val_windows, deterministic, metrics_path, checkpoint_path)

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    if (known.at(it.key()).is_object()) reject_unknown(it.value(), known.at(it.key()), path);
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::size_t RunConfig::largest_context() const {
  if (game.contexts.empty()) throw ConfigError("game.contexts must not be empty");
  return *std::max_element(game.contexts.begin(), game.contexts.end());
}

void RunConfig::validate() const {
  try {
    model.validate();
    if (data.source == "synthetic") data.synthetic.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(data.source == "synthetic" || data.source == "file", "data.source must be 'synthetic' or 'file'");
  require(data.source != "file" || !data.path.empty(), "data.path is required for file sources");
  require(data.val_fraction > 0.0 && data.test_fraction >= 0.0 && data.val_fraction + data.test_fraction < 1.0,
          "data fractions must satisfy val > 0, test >= 0, val + test < 1");
  if (data.source == "synthetic")
    require(data.synthetic.vocab() <= model.vocab, "model.vocab is smaller than the synthetic task vocabulary");
  else
    require(model.vocab >= 256, "byte corpora need model.vocab >= 256");
  require(!game.contexts.empty(), "game.contexts must not be empty");
  for (auto c : game.contexts) {
    require(c > 0, "contexts must be positive");
    require(tokens_per_step % c == 0,
            "tokens_per_step (" + std::to_string(tokens_per_step) + ") must be a multiple of every context");
    require(c <= model.max_len, "context " + std::to_string(c) + " exceeds model.max_len");
  }
  require(resolved_eval_context() <= model.max_len, "eval context exceeds model.max_len");
  require(epochs > 0 && steps_per_epoch > 0, "epochs and steps_per_epoch must be positive");
  require(eval_batch > 0, "eval_batch must be positive");
  require(game.eta >= 0.0, "game.eta must be nonnegative");
  require(guardian.beta_ramp >= 0.0 && guardian.beta_ramp <= 1.0, "guardian.beta_ramp must lie in [0, 1]");
  require(schedule.peak_lr > 0.0, "schedule.peak_lr must be positive");
  require(schedule.flat_fraction >= 0.0 && schedule.flat_fraction <= 1.0, "schedule.flat_fraction must lie in [0, 1]");
  require(schedule.decay_fraction > 0.0 && schedule.decay_fraction <= 1.0, "schedule.decay_fraction must lie in (0, 1]");
  require(schedule.floor > 0.0 && schedule.floor < 1.0, "schedule.floor must lie in (0, 1)");
  require(schedule.ema_decay >= 0.0 && schedule.ema_decay <= 1.0, "schedule.ema_decay must lie in [0, 1]");
  require(schedule.swa_start >= 0.0 && schedule.swa_start <= 1.0, "schedule.swa_start must lie in [0, 1]");
  require(schedule.zone_percentile >= 0.0 && schedule.zone_percentile <= 1.0,
          "schedule.zone_percentile must lie in [0, 1]");
  require(schedule.zone_hi == 0.0 || schedule.zone_hi > schedule.zone_lo, "schedule.zone_hi must exceed zone_lo");
  require(schedule.chaos_fraction >= 0.0 && schedule.chaos_fraction <= 1.0,
          "schedule.chaos_fraction must lie in [0, 1]");
}

RunConfig desk_preset() {
  RunConfig c;
  c.name = "desk";
  c.model.vocab = 256;
  c.model.d_model = 64;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.regimes = 4;
  c.model.experts = 4;
  c.model.max_len = 256;
  c.model.rpa.warm_steps = 100;
  c.game.contexts = {32, 64};
  c.tokens_per_step = 2048;
  c.epochs = 10;
  c.steps_per_epoch = 50;
  c.schedule.ema_decay = 0.99;
  c.val_windows = 128;
  return c;
}

RunConfig full_preset() {
  RunConfig c;
  c.name = "full";
  c.model = ModelConfig::full_preset();
  c.model.max_len = 1024;
  c.model.rpa.warm_steps = 1200;
  c.data.source = "file";
  c.game.contexts = {384, 768};
  c.tokens_per_step = 24576;
  c.epochs = 100;
  c.steps_per_epoch = 200;
  c.schedule.swa_start = 0.6;
  return c;
}

RunConfig ablation_preset() {
  RunConfig c;
  c.name = "ablation";
  c.model.vocab = 16;
  c.model.d_model = 32;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.regimes = 2;
  c.model.experts = 2;
  c.model.ff_mult = 2;
  c.model.max_len = 128;
  c.model.rpa.warm_steps = 100;
  c.data.synthetic.length = 120000;
  c.data.synthetic.filler = 8;
  c.data.synthetic.values = 6;
  c.game.contexts = {32, 64};
  c.tokens_per_step = 512;
  c.epochs = 20;
  c.steps_per_epoch = 50;
  c.schedule.ema_decay = 0.99;
  c.val_windows = 64;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full") return full_preset();
  if (name == "ablation") return ablation_preset();
  throw ConfigError("unknown preset '" + name + "' (known: desk, full, ablation)");
}

nlohmann::json to_json(const RunConfig& cfg) { return cfg; }

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig base;
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("'preset' must be a string");
    base = preset(j.at("preset").get<std::string>());
  }
  nlohmann::json known = base;
  nlohmann::json given = j;
  given.erase("preset");
  reject_unknown(given, known, "");
  known.merge_patch(given);
  RunConfig cfg;
  try {
    cfg = known.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rpalab
