#include "rpalab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace rpalab {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<std::size_t> contexts_for(const RunConfig& cfg) {
  if (cfg.game.enable) return cfg.game.contexts;
  return {cfg.largest_context()};
}

std::uint64_t component_seed(std::uint64_t seed, std::string_view label) { return Rng(seed).fork(label).seed(); }

}  // namespace

EvalResult evaluate(Model& model, const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch,
                    std::size_t max_windows, Instrumentation* counters) {
  const auto batches = eval_batches(ids, context, batch, max_windows);
  if (batches.empty())
    throw std::invalid_argument("evaluation split (" + std::to_string(ids.size()) + " tokens) holds no window of " +
                                std::to_string(context));
  PriorCache cache;
  ForwardOptions opt;
  opt.cache = &cache;
  opt.fingerprint = model.fingerprint();
  opt.counters = counters;
  EvalResult r;
  double ce_sum = 0.0;
  for (const auto& b : batches) {
    Tape tape;
    ForwardResult f = model.forward(tape, b.x, b.batch, b.length, opt);
    const std::size_t V = f.logits.shape().back();
    ce_sum += cross_entropy_sum(f.logits.value().reshaped({b.y.size(), V}), b.y, 0.0);
    r.tokens += b.y.size();
    r.windows += b.batch;
    const double w = static_cast<double>(b.batch);
    r.mu_entropy += w * f.stats.mu_entropy;
    r.sat_frac += w * f.stats.sat_frac;
    r.gate_mean += w * f.stats.gate_mean;
  }
  const double nw = static_cast<double>(r.windows);
  r.mu_entropy /= nw;
  r.sat_frac /= nw;
  r.gate_mean /= nw;
  r.ce = ce_sum / static_cast<double>(r.tokens);
  r.ppl = std::exp(r.ce);
  return r;
}

Corpus load_corpus(const DataConfig& cfg) {
  if (cfg.source == "synthetic") return synthetic_long_span(cfg.synthetic);
  if (cfg.source == "file") return load_text_file(cfg.path);
  throw ConfigError("unknown data source '" + cfg.source + "'");
}

Trainer::Trainer(RunConfig cfg, Splits data, MetricsWriter* metrics)
    : cfg_((cfg.validate(), std::move(cfg))),
      data_(std::move(data)),
      metrics_(metrics),
      model_(cfg_.model, cfg_.seed),
      opt_(model_.parameters(), {cfg_.schedule.peak_lr, 0.9, 0.999, 1e-8, cfg_.schedule.weight_decay}),
      lr_{cfg_.schedule.peak_lr, cfg_.schedule.flat_fraction, cfg_.schedule.floor,
          std::max<std::size_t>(1, static_cast<std::size_t>(cfg_.schedule.decay_fraction *
                                                            static_cast<double>(cfg_.total_steps())))},
      mixture_(contexts_for(cfg_), cfg_.game.eta),
      guardian_(component_seed(cfg_.seed, "guardian"), {cfg_.guardian.enable, cfg_.guardian.lr}),
      sampler_(data_.train, Rng(cfg_.seed).fork("data")),
      context_rng_(Rng(cfg_.seed).fork("context")),
      forward_rng_(Rng(cfg_.seed).fork("forward")) {
  if (data_.train.size() <= cfg_.largest_context())
    throw ConfigError("train split is too short for context " + std::to_string(cfg_.largest_context()));
  if (eval_window_count(data_.val.size(), cfg_.resolved_eval_context()) == 0)
    throw ConfigError("validation split is too short for context " + std::to_string(cfg_.resolved_eval_context()));
  if (cfg_.schedule.ema) ema_ = model_.snapshot();
  swa_ = SwaSelect({cfg_.schedule.zone_lo, cfg_.schedule.zone_hi > 0.0 ? cfg_.schedule.zone_hi : 1e300},
                   cfg_.schedule.swa_min_gain);
}

void Trainer::log(nlohmann::json record) {
  if (!metrics_) return;
  record["wall_time"] = wall();
  metrics_->write(record);
}

double Trainer::wall() const { return cfg_.deterministic ? 0.0 : now_seconds() - start_time_; }

void Trainer::train_step(std::size_t epoch) {
  const auto& sc = cfg_.schedule;
  const std::size_t total = cfg_.total_steps();
  const std::size_t context = cfg_.game.enable ? mixture_.sample(context_rng_) : cfg_.largest_context();
  const std::size_t batch = cfg_.tokens_per_step / context;
  const Batch b = sampler_.next(batch, context);

  const bool chaos_on = sc.chaos && static_cast<double>(step_) < sc.chaos_fraction * static_cast<double>(total);
  const double factor = chaos_on ? chaos_.step() : 1.0;
  const double lr = lr_.at(step_) * factor;
  opt_.set_lr(lr);
  const double warm = sc.warm_in ? warm_scale(step_, cfg_.model.rpa.warm_steps) : 1.0;
  model_.set_bias_scale(warm * factor);
  if (sc.glide)
    model_.set_dropout(dropout_glide(cfg_.model.dropout, static_cast<double>(step_) / static_cast<double>(total)));

  ForwardOptions fo;
  fo.training = true;
  fo.rng = &forward_rng_;
  Tape tape;
  ForwardResult f = model_.forward(tape, b.x, b.batch, b.length, fo);
  LossResult loss = lm_loss(f.logits, b.y, f.mu_entropy, cfg_.model, guardian_.lambda_sat(), true);
  const double ce = loss.ce_pure_sum / static_cast<double>(loss.tokens);
  if (!std::isfinite(loss.loss.value().item()) || !std::isfinite(ce)) {
    log({{"kind", "abort"}, {"step", step_}, {"epoch", epoch}, {"loss", loss.loss.value().item()},
         {"ce", ce}, {"lr", lr}, {"tau_att", model_.mean_tau_att()}, {"mu_entropy", f.stats.mu_entropy},
         {"sat_frac", f.stats.sat_frac}, {"context", context}});
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step_) + " (epoch " + std::to_string(epoch) +
                           ", lr " + std::to_string(lr) + ", tau_att " + std::to_string(model_.mean_tau_att()) + ")");
  }
  opt_.zero_grad();
  tape.backward(loss.loss);
  opt_.step();
  if (ema_) {
    std::vector<Tensor> now = model_.snapshot();
    ema_update(*ema_, now, sc.ema_decay);
  }
  log({{"kind", "train"}, {"split", "train"}, {"step", step_}, {"epoch", epoch}, {"ce", ce}, {"ppl", std::exp(ce)},
       {"lr", lr}, {"tau_att", model_.mean_tau_att()}, {"mu_entropy", f.stats.mu_entropy},
       {"sat_frac", f.stats.sat_frac}, {"context", context}, {"bias_scale", model_.bias_scale()},
       {"dropout", model_.dropout()}, {"chaos", factor}});
  ++step_;
}

EvalResult Trainer::validate_epoch(std::size_t epoch, TrainResult& res) {
  const auto& sc = cfg_.schedule;
  const EvalResult val = evaluate(model_, data_.val, cfg_.resolved_eval_context(), cfg_.eval_batch, cfg_.val_windows);
  res.val_history.push_back(val.ce);
  res.best_raw_ce = std::min(res.best_raw_ce, val.ce);
  res.last_raw_ce = val.ce;

  nlohmann::json record{{"kind", "val"}, {"split", "val"}, {"step", step_}, {"epoch", epoch}, {"ce", val.ce},
                        {"ppl", val.ppl}, {"lr", opt_.lr()}, {"mu_entropy", val.mu_entropy},
                        {"sat_frac", val.sat_frac}, {"gate_mean", val.gate_mean}};

  // controller event: score the previous action, then act on the new state
  if (guardian_.enabled()) {
    const double ramp = cfg_.guardian.beta_ramp * static_cast<double>(cfg_.epochs);
    guardian_.set_beta(ramp > 0.0 ? std::min(1.0, static_cast<double>(epoch) / ramp) : 1.0);
    nlohmann::json g{{"beta", guardian_.beta()}};
    if (guardian_.has_sample() && prev_ce_) {
      const auto& z = swa_.zone();
      const double hi = z.hi < 1e299 ? z.hi : percentile(res.val_history, sc.zone_percentile);
      const RewardConfig rc{cfg_.guardian.lambda_gain, cfg_.guardian.lambda_zone, hi,
                            std::max(0.05, 0.25 * (hi - z.lo))};
      const double reward = shaped_reward(val.ce, *prev_ce_, rc);
      guardian_.update(reward);
      g["reward"] = reward;
    }
    const GuardianState state{prev_gate_ ? val.gate_mean - *prev_gate_ : 0.0, val.sat_frac, val.mu_entropy, val.ce};
    const Controls c = guardian_.step(state, model_);
    const auto& a = guardian_.last_sample()->action;
    g["state"] = {state.gate_delta, state.sat_frac, state.mu_entropy, state.val_loss};
    g["action"] = {a.d_tau, a.d_lambda_delta, a.d_lambda_sat};
    g["lambda_delta"] = c.lambda_delta;
    g["lambda_sat"] = c.lambda_sat;
    record["guardian"] = g;
  }
  record["tau_att"] = model_.mean_tau_att();

  if (cfg_.game.enable) {
    const UtilityConfig uc{cfg_.game.lambda_sat, cfg_.game.sat_threshold, cfg_.game.lambda_entropy,
                           std::log(static_cast<double>(std::max<std::size_t>(2, cfg_.model.regimes)))};
    std::vector<double> u;
    for (auto c : mixture_.contexts()) {
      const EvalResult probe = evaluate(model_, data_.val, c, cfg_.eval_batch, cfg_.game.probe_windows);
      u.push_back(context_utility(probe.ce, probe.sat_frac, probe.mu_entropy, uc));
    }
    mixture_.update(u);
    record["utilities"] = u;
  }
  record["contexts"] = mixture_.contexts();
  record["q"] = mixture_.q();

  if (sc.swa && static_cast<double>(epoch) >= sc.swa_start * static_cast<double>(cfg_.epochs)) {
    if (!swa_open_) {
      // the zone and the entry CE are frozen from the history before this epoch
      swa_open_ = true;
      swa_entry_ce_ = prev_ce_ ? *prev_ce_ : val.ce;
      if (sc.zone_hi <= 0.0) {
        std::vector<double> before(res.val_history.begin(), res.val_history.end() - 1);
        if (before.empty()) before.push_back(val.ce);
        swa_.set_zone({sc.zone_lo, percentile(before, sc.zone_percentile)});
      }
    }
    record["swa_admitted"] = swa_.consider(val.ce, *swa_entry_ce_, model_.snapshot());
    record["swa_entry_ce"] = *swa_entry_ce_;
    record["swa_zone"] = {swa_.zone().lo, swa_.zone().hi};
    if (swa_.count() > 0) res.best_admitted_ce = swa_.best_admitted();
  }
  record["swa_count"] = swa_.count();
  log(record);
  prev_ce_ = val.ce;
  prev_gate_ = val.gate_mean;
  return val;
}

TrainResult Trainer::run() {
  start_time_ = now_seconds();
  TrainResult res;
  log({{"kind", "header"}, {"config", to_json(cfg_)}, {"parameters", model_.parameter_count()},
       {"train_tokens", data_.train.size()}, {"val_tokens", data_.val.size()}, {"test_tokens", data_.test.size()}});
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (std::size_t s = 0; s < cfg_.steps_per_epoch; ++s) train_step(epoch);
    validate_epoch(epoch, res);
  }
  res.steps = step_;
  res.swa_count = swa_.count();

  const Checkpoint ck = checkpoint();
  auto [weights, which] = select_eval_weights(ck, model_);
  const std::vector<Tensor> raw = model_.snapshot();
  model_.load(weights);
  const EvalResult fin = evaluate(model_, data_.val, cfg_.resolved_eval_context(), cfg_.eval_batch, cfg_.val_windows);
  model_.load(raw);
  res.final_ce = fin.ce;
  res.eval_weights = which;
  log({{"kind", "final"}, {"split", "val"}, {"step", step_}, {"epoch", cfg_.epochs}, {"ce", fin.ce},
       {"ppl", fin.ppl}, {"weights", which}, {"swa_count", res.swa_count}, {"best_raw_ce", res.best_raw_ce},
       {"best_admitted_ce", std::isfinite(res.best_admitted_ce) ? nlohmann::json(res.best_admitted_ce) : nlohmann::json()},
       {"tau_att", model_.mean_tau_att()}, {"q", mixture_.q()}});
  if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path, ck);
  return res;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.header = nlohmann::json{{"config", to_json(cfg_)}, {"step", step_}, {"swa_count", swa_.count()},
                              {"bias_scale", model_.bias_scale()}}.dump();
  const auto params = model_.parameters();
  const auto raw = model_.snapshot();
  for (std::size_t i = 0; i < params.size(); ++i) ck.add(params[i]->name, raw[i]);
  if (ema_)
    for (std::size_t i = 0; i < params.size(); ++i) ck.add("ema." + params[i]->name, (*ema_)[i]);
  if (swa_.count() > 0)
    for (std::size_t i = 0; i < params.size(); ++i) ck.add("swa." + params[i]->name, swa_.mean()[i]);
  return ck;
}

std::pair<std::vector<Tensor>, std::string> select_eval_weights(const Checkpoint& ck, const Model& model) {
  const auto params = model.parameters();
  for (const std::string prefix : {"swa.", "ema.", ""}) {
    if (!prefix.empty() && !ck.has_prefix(prefix)) continue;
    std::vector<Tensor> out;
    for (const auto* p : params) {
      const Tensor* t = ck.find(prefix + p->name);
      if (!t) throw std::runtime_error("checkpoint lacks array '" + prefix + p->name + "'");
      if (t->shape() != p->value.shape())
        throw std::runtime_error("checkpoint array '" + prefix + p->name + "' has shape " + shape_str(t->shape()) +
                                 ", model expects " + shape_str(p->value.shape()));
      out.push_back(*t);
    }
    return {std::move(out), prefix.empty() ? "raw" : prefix.substr(0, 3)};
  }
  throw std::logic_error("unreachable");
}

LoadedRun load_run(const std::string& checkpoint_path, const std::string& weights) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const auto header = nlohmann::json::parse(ck.header, nullptr, false);
  if (header.is_discarded() || !header.contains("config"))
    throw std::runtime_error("checkpoint '" + checkpoint_path + "' has no config header");
  LoadedRun run;
  run.cfg = config_from_json(header.at("config"));
  run.model = std::make_unique<Model>(run.cfg.model, run.cfg.seed);
  run.model->set_bias_scale(header.value("bias_scale", 1.0));
  if (weights == "auto") {
    auto [w, which] = select_eval_weights(ck, *run.model);
    run.model->load(w);
    run.weights = which;
    return run;
  }
  if (weights != "raw" && weights != "ema" && weights != "swa")
    throw ConfigError("weights must be one of auto, raw, ema, swa");
  const std::string prefix = weights == "raw" ? "" : weights + ".";
  std::vector<Tensor> w;
  for (const auto* p : run.model->parameters()) {
    const Tensor* t = ck.find(prefix + p->name);
    if (!t) throw std::runtime_error("checkpoint holds no " + weights + " weights");
    if (t->shape() != p->value.shape()) throw std::runtime_error("checkpoint array '" + prefix + p->name + "' has the wrong shape");
    w.push_back(*t);
  }
  run.model->load(w);
  run.weights = weights;
  return run;
}

Tensor prior_for(Model& model, const std::vector<std::size_t>& ids, std::size_t length, std::size_t layer) {
  if (layer >= model.layers()) throw std::invalid_argument("layer " + std::to_string(layer) + " does not exist");
  if (ids.size() < length) throw std::invalid_argument("not enough tokens for length " + std::to_string(length));
  PriorCache cache;
  ForwardOptions opt;
  opt.cache = &cache;
  opt.fingerprint = model.fingerprint();
  Tape tape;
  model.forward(tape, std::vector<std::size_t>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(length)), 1,
                length, opt);
  auto hit = cache.find({layer, length, opt.fingerprint});
  if (!hit) throw std::logic_error("prior was not cached");
  return *hit;
}

const std::vector<std::string>& ablation_stages() {
  static const std::vector<std::string> stages{"baseline", "align", "guardian", "swa"};
  return stages;
}

RunConfig stage_config(const RunConfig& base, const std::string& stage) {
  const auto& all = ablation_stages();
  const auto it = std::find(all.begin(), all.end(), stage);
  if (it == all.end()) throw ConfigError("unknown ablation stage '" + stage + "' (known: baseline, align, guardian, swa)");
  const auto level = static_cast<std::size_t>(it - all.begin());
  RunConfig c = base;
  c.model.use_rpa = level >= 1;
  c.game.enable = level >= 1;
  c.guardian.enable = level >= 2;
  c.schedule.ema = level >= 2;
  c.schedule.chaos = level >= 2;
  c.schedule.glide = level >= 2;
  c.schedule.swa = level >= 3;
  c.name = base.name + "/" + stage;
  return c;
}

double AblationReport::median_ce(std::size_t stage) const {
  std::vector<double> v;
  for (const auto& r : runs.at(stage)) v.push_back(r.final_ce);
  return percentile(v, 0.5);
}

AblationVerdict judge_ablation(const AblationReport& rep) {
  AblationVerdict v;
  auto index = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(rep.stages.begin(), rep.stages.end(), name);
    if (it == rep.stages.end()) return std::nullopt;
    return static_cast<std::size_t>(it - rep.stages.begin());
  };
  std::ostringstream d;
  const auto base = index("baseline"), align = index("align"), swa = index("swa");
  if (base && align) {
    v.has_direction = true;
    const double b = rep.median_ce(*base), a = rep.median_ce(*align);
    v.direction = a < b;
    d << "median val CE baseline " << b << " -> align " << a << "; ";
  }
  if (swa) {
    v.has_swa = true;
    v.swa = true;
    for (std::size_t s = 0; s < rep.seeds.size(); ++s) {
      const auto& r = rep.runs[*swa][s];
      const bool ok = r.swa_count > 0 && r.final_ce <= r.best_admitted_ce;
      v.swa = v.swa && ok;
      d << "seed " << rep.seeds[s] << ": swa " << r.final_ce << " over " << r.swa_count << " snapshots vs best admitted "
        << r.best_admitted_ce << (ok ? "" : " (fail)") << "; ";
    }
  }
  v.detail = d.str();
  return v;
}

AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& stages,
                            const std::vector<std::uint64_t>& seeds, MetricsWriter* metrics) {
  const double t0 = now_seconds();
  const Corpus corpus = load_corpus(base.data);
  const Splits splits = split_corpus(corpus, base.data.val_fraction, base.data.test_fraction);
  AblationReport rep;
  rep.stages = stages;
  rep.seeds = seeds;
  for (const auto& stage : stages) {
    rep.runs.emplace_back();
    for (auto seed : seeds) {
      RunConfig c = stage_config(base, stage);
      c.seed = seed;
      c.checkpoint_path.clear();
      Trainer t(c, splits, metrics);
      rep.runs.back().push_back(t.run());
    }
  }
  rep.seconds = now_seconds() - t0;
  return rep;
}

}  // namespace rpalab
