#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "rpalab/checkpoint.hpp"
#include "rpalab/config.hpp"
#include "rpalab/metrics.hpp"
#include "rpalab/trainer.hpp"
#include "rpalab/verify.hpp"
#include "test_util.hpp"

using namespace rpalab;
using rpalab::testing::values;

namespace {

std::string temp_path(const std::string& name) { return ::testing::TempDir() + name; }

RunConfig tiny_run(std::uint64_t seed = 1) {
  RunConfig cfg = ablation_preset();
  cfg.seed = seed;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 3;
  cfg.tokens_per_step = 128;
  cfg.val_windows = 6;
  cfg.game.probe_windows = 2;
  cfg.data.synthetic.length = 12000;
  cfg.deterministic = true;
  return cfg;
}

Splits splits_for(const RunConfig& cfg) {
  return split_corpus(load_corpus(cfg.data), cfg.data.val_fraction, cfg.data.test_fraction);
}

}  // namespace

TEST(Config, PresetsValidate) {
  for (const char* name : {"desk", "full", "ablation"}) {
    RunConfig cfg = preset(name);
    if (cfg.data.source == "file") cfg.data.path = "corpus.txt";
    EXPECT_NO_THROW(cfg.validate()) << name;
  }
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig cfg = desk_preset();
  cfg.seed = 42;
  cfg.game.contexts = {16, 32, 64};
  cfg.schedule.peak_lr = 1e-3;
  const RunConfig back = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(Config, PresetKeyWithOverrides) {
  const RunConfig cfg = config_from_json({{"preset", "ablation"}, {"epochs", 7}, {"schedule", {{"peak_lr", 0.01}}}});
  EXPECT_EQ(cfg.epochs, 7u);
  EXPECT_DOUBLE_EQ(cfg.schedule.peak_lr, 0.01);
  EXPECT_EQ(cfg.model.d_model, ablation_preset().model.d_model);
  EXPECT_DOUBLE_EQ(cfg.schedule.floor, ablation_preset().schedule.floor);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(config_from_json({{"epoch", 3}}), ConfigError);
  EXPECT_THROW(config_from_json({{"schedule", {{"peak_LR", 0.1}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"model", {{"rpa", {{"sinkhorn", 3}}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, InconsistentValuesRejected) {
  EXPECT_THROW(config_from_json({{"epochs", 0}}), ConfigError);
  EXPECT_THROW(config_from_json({{"game", {{"contexts", nlohmann::json::array()}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"tokens_per_step", 100}}), ConfigError);
  EXPECT_THROW(config_from_json({{"schedule", {{"floor", 0.0}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"data", {{"source", "file"}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"epochs", "three"}}), ConfigError);
  EXPECT_THROW(load_config(temp_path("rpalab_no_such_config.json")), ConfigError);
}

TEST(Metrics, WritesAndParsesLines) {
  const std::string path = temp_path("rpalab_metrics.jsonl");
  {
    MetricsWriter w(path);
    w.write({{"kind", "train"}, {"ce", 1.5}});
    w.write({{"kind", "val"}, {"ce", 1.25}});
    EXPECT_EQ(w.lines().size(), 2u);
  }
  const auto records = read_metrics(path);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1]["kind"], "val");
  EXPECT_DOUBLE_EQ(records[0]["ce"].get<double>(), 1.5);
  {
    std::ofstream out(path, std::ios::app);
    out << "not json\n";
  }
  EXPECT_THROW(read_metrics(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck;
  ck.header = R"({"step": 3})";
  Tensor a({2, 3});
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = std::sin(static_cast<double>(i)) / 3.0;
  ck.add("w", a);
  ck.add("ema.w", Tensor({1}, 0.1));
  const std::string path = temp_path("rpalab_ck.bin");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.header, ck.header);
  EXPECT_EQ(back.names, ck.names);
  ASSERT_NE(back.find("w"), nullptr);
  EXPECT_EQ(back.find("w")->shape(), a.shape());
  EXPECT_EQ(values(*back.find("w")), values(a));
  EXPECT_TRUE(back.has_prefix("ema."));
  EXPECT_FALSE(back.has_prefix("swa."));
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string path = temp_path("rpalab_bad.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT and more bytes";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  Checkpoint ck;
  ck.add("w", Tensor({64}, 1.0));
  save_checkpoint(path, ck);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() - 8);
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(Evaluate, PriorBuiltOnceThenCached) {
  RunConfig cfg = tiny_run();
  const Splits s = splits_for(cfg);
  Model model(cfg.model, 3);
  Instrumentation counters;
  const auto r = evaluate(model, s.val, 32, 4, 12, &counters);
  EXPECT_EQ(r.windows, 12u);
  EXPECT_EQ(r.tokens, 12u * 32u);
  EXPECT_TRUE(std::isfinite(r.ce));
  EXPECT_NEAR(r.ppl, std::exp(r.ce), 1e-12);
  EXPECT_EQ(counters.prior_builds.load(), model.layers());
  EXPECT_EQ(counters.prior_cache_hits.load(), 2 * model.layers());
  EXPECT_EQ(counters.bias_adds.load(), counters.attention_applications.load());
  // a fresh cache per call, so repeated evaluation is exact
  EXPECT_EQ(evaluate(model, s.val, 32, 4, 12).ce, r.ce);
  EXPECT_THROW(evaluate(model, std::vector<std::size_t>(10, 0), 32, 4), std::invalid_argument);
}

TEST(Trainer, TinyRunLogsEveryStepAndEpoch) {
  const RunConfig cfg = tiny_run();
  MetricsWriter metrics;
  Trainer trainer(cfg, splits_for(cfg), &metrics);
  const TrainResult r = trainer.run();
  EXPECT_EQ(r.steps, cfg.total_steps());
  EXPECT_TRUE(std::isfinite(r.final_ce));
  EXPECT_EQ(r.val_history.size(), cfg.epochs);
  std::size_t train = 0, val = 0, final_records = 0;
  for (const auto& line : metrics.lines()) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["wall_time"].get<double>(), 0.0);
    const std::string kind = j["kind"];
    train += kind == "train";
    val += kind == "val";
    final_records += kind == "final";
  }
  EXPECT_EQ(train, cfg.total_steps());
  EXPECT_EQ(val, cfg.epochs);
  EXPECT_EQ(final_records, 1u);
  // uniform prediction over the task vocabulary bounds a sane early model from above
  EXPECT_LT(r.final_ce, std::log(static_cast<double>(cfg.model.vocab)) + 0.5);
}

TEST(Trainer, CheckpointReloadGivesIdenticalEval) {
  RunConfig cfg = tiny_run(2);
  cfg.schedule.swa = false;
  const Splits s = splits_for(cfg);
  Trainer trainer(cfg, s);
  trainer.run();
  const std::string path = temp_path("rpalab_run.ckpt");
  save_checkpoint(path, trainer.checkpoint());
  const std::size_t ctx = cfg.resolved_eval_context();
  const double raw_ce = evaluate(trainer.model(), s.val, ctx, cfg.eval_batch, 8).ce;

  LoadedRun raw = load_run(path, "raw");
  EXPECT_EQ(raw.weights, "raw");
  EXPECT_EQ(evaluate(*raw.model, s.val, ctx, cfg.eval_batch, 8).ce, raw_ce);

  LoadedRun best = load_run(path, "auto");
  EXPECT_EQ(best.weights, "ema");
  EXPECT_THROW(load_run(path, "swa"), std::runtime_error);
  EXPECT_THROW(load_run(path, "best"), ConfigError);
  std::remove(path.c_str());
}

TEST(Ablation, StagesAreCumulative) {
  const RunConfig base = ablation_preset();
  const RunConfig b = stage_config(base, "baseline"), a = stage_config(base, "align");
  const RunConfig g = stage_config(base, "guardian"), w = stage_config(base, "swa");
  EXPECT_FALSE(b.model.use_rpa || b.game.enable || b.guardian.enable || b.schedule.ema || b.schedule.swa);
  EXPECT_TRUE(a.model.use_rpa && a.game.enable);
  EXPECT_FALSE(a.guardian.enable || a.schedule.ema || a.schedule.chaos || a.schedule.swa);
  EXPECT_TRUE(g.guardian.enable && g.schedule.ema && g.schedule.chaos && g.schedule.glide && !g.schedule.swa);
  // the last stage differs from the one before only by SWA-select
  nlohmann::json jg = to_json(g), jw = to_json(w);
  jg["name"] = jw["name"] = "";
  jw["schedule"]["swa"] = false;
  EXPECT_EQ(jg, jw);
  EXPECT_THROW(stage_config(base, "everything"), ConfigError);
}

TEST(Ablation, VerdictFollowsMediansAndSwaBound) {
  AblationReport rep;
  rep.stages = {"baseline", "align", "swa"};
  rep.seeds = {1, 2, 3};
  auto run = [](double ce, std::size_t count = 0, double admitted = INFINITY) {
    TrainResult r;
    r.final_ce = ce;
    r.swa_count = count;
    r.best_admitted_ce = admitted;
    return r;
  };
  rep.runs = {{run(1.0), run(1.1), run(0.9)}, {run(0.95), run(1.2), run(0.8)}, {run(0.9, 2, 0.91), run(0.9, 1, 0.9), run(0.8, 3, 0.85)}};
  EXPECT_DOUBLE_EQ(rep.median_ce(0), 1.0);
  AblationVerdict v = judge_ablation(rep);
  EXPECT_TRUE(v.direction);
  EXPECT_TRUE(v.swa);
  EXPECT_TRUE(v.pass());

  rep.runs[1][0] = run(1.0);  // tie is not a strict decrease
  EXPECT_FALSE(judge_ablation(rep).direction);
  rep.runs[1][0] = run(0.95);
  rep.runs[2][1] = run(0.9, 0);  // nothing admitted
  EXPECT_FALSE(judge_ablation(rep).swa);
  rep.runs[2][1] = run(0.95, 2, 0.94);
  EXPECT_FALSE(judge_ablation(rep).swa);
  EXPECT_FALSE(judge_ablation(rep).pass());
}

TEST(Verify, SuiteNamesAndUnknown) {
  EXPECT_EQ(verify_suites().size(), 8u);
  const auto one = run_verify("rowsum");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(one[0].pass);
  EXPECT_EQ(one[0].to_json()["suite"], "rowsum");
  EXPECT_THROW(run_verify("nope"), std::invalid_argument);
}
