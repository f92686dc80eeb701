#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rpalab/config.hpp"
#include "rpalab/trainer.hpp"
#include "rpalab/verify.hpp"

using namespace rpalab;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;

RunConfig resolve_config(const std::string& path, const std::string& preset_name) {
  if (!path.empty()) return load_config(path);
  RunConfig cfg = preset(preset_name);
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_train(const std::string& config, const std::string& preset_name, bool deterministic,
              const std::string& metrics, const std::string& ckpt) {
  RunConfig cfg = resolve_config(config, preset_name);
  if (deterministic) cfg.deterministic = true;
  if (!metrics.empty()) cfg.metrics_path = metrics;
  if (!ckpt.empty()) cfg.checkpoint_path = ckpt;
  const Corpus corpus = load_corpus(cfg.data);
  MetricsWriter writer(cfg.metrics_path);
  Trainer trainer(cfg, split_corpus(corpus, cfg.data.val_fraction, cfg.data.test_fraction), &writer);
  const TrainResult r = trainer.run();
  std::cout << std::setprecision(6) << "trained " << r.steps << " steps; val ce " << r.final_ce << " (ppl "
            << std::exp(r.final_ce) << ", " << r.eval_weights << " weights), best raw " << r.best_raw_ce
            << ", swa snapshots " << r.swa_count << "\n";
  if (!cfg.checkpoint_path.empty()) std::cout << "checkpoint " << cfg.checkpoint_path << "\n";
  if (!cfg.metrics_path.empty()) std::cout << "metrics " << cfg.metrics_path << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& split, const std::string& weights) {
  LoadedRun run = load_run(ckpt, weights);
  const Corpus corpus = load_corpus(run.cfg.data);
  const Splits s = split_corpus(corpus, run.cfg.data.val_fraction, run.cfg.data.test_fraction);
  const auto& ids = split == "test" ? s.test : s.val;
  const EvalResult r = evaluate(*run.model, ids, run.cfg.resolved_eval_context(), run.cfg.eval_batch);
  nlohmann::json out{{"split", split},     {"ce", r.ce},           {"ppl", r.ppl},
                     {"tokens", r.tokens}, {"windows", r.windows}, {"weights", run.weights}};
  std::cout << out.dump() << "\n";
  return kOk;
}

int cmd_verify(const std::string& suite, bool json) {
  const auto reports = run_verify(suite);
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.pass;
    if (json) {
      std::cout << r.to_json().dump() << "\n";
    } else {
      std::cout << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(9) << r.name << " measured "
                << std::setprecision(4) << r.measured << " tolerance " << r.tolerance << "  " << r.detail << "\n";
    }
  }
  return ok ? kOk : kVerifyFailed;
}

int cmd_ablate(const std::string& stages_arg, const std::string& config, const std::string& preset_name,
               const std::string& seeds_arg, const std::string& metrics) {
  const RunConfig base = resolve_config(config, preset_name);
  const auto stages = split_list(stages_arg);
  if (stages.empty()) throw ConfigError("--stages is empty");
  for (const auto& s : stages) stage_config(base, s);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + s + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  std::unique_ptr<MetricsWriter> writer;
  if (!metrics.empty()) writer = std::make_unique<MetricsWriter>(metrics);
  const AblationReport rep = run_ablation(base, stages, seeds, writer.get());
  std::cout << std::left << std::setw(10) << "stage" << std::setw(12) << "median ce";
  for (auto s : seeds) std::cout << std::setw(12) << ("seed " + std::to_string(s));
  std::cout << "weights\n" << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    std::cout << std::setw(10) << stages[i] << std::setw(12) << rep.median_ce(i);
    for (const auto& r : rep.runs[i]) std::cout << std::setw(12) << r.final_ce;
    std::cout << rep.runs[i].front().eval_weights << "\n";
  }
  const AblationVerdict v = judge_ablation(rep);
  std::cout << std::defaultfloat << std::setprecision(6) << "runtime " << rep.seconds << " s\n" << v.detail << "\n";
  if (v.has_direction) std::cout << (v.direction ? "PASS" : "FAIL") << " align beats baseline\n";
  if (v.has_swa) std::cout << (v.swa ? "PASS" : "FAIL") << " swa within best admitted\n";
  return v.pass() ? kOk : kVerifyFailed;
}

int cmd_dump_prior(const std::string& ckpt, std::size_t length, std::size_t layer, const std::string& out) {
  LoadedRun run = load_run(ckpt);
  if (length == 0 || length > run.cfg.model.max_len)
    throw ConfigError("--T must lie in [1, " + std::to_string(run.cfg.model.max_len) + "]");
  const Corpus corpus = load_corpus(run.cfg.data);
  const Splits s = split_corpus(corpus, run.cfg.data.val_fraction, run.cfg.data.test_fraction);
  const Tensor bias = prior_for(*run.model, s.val, length, layer);
  if (out.empty() || out == "-") {
    write_csv(std::cout, bias);
  } else {
    write_csv(out, bias);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-prior training laboratory"};
  app.require_subcommand(1);

  std::string config, preset_name = "desk", metrics, ckpt, split = "val", weights = "auto", suite, stages, seeds = "1,2,3",
                      out;
  bool deterministic = false, json = false;
  std::size_t length = 0, layer = 0;

  auto* train = app.add_subcommand("train", "train a model and write metrics / checkpoint");
  train->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
  train->add_option("--preset", preset_name, "preset when no config is given (desk, ablation, full)");
  train->add_flag("--deterministic", deterministic, "bit-reproducible metrics (wall time recorded as 0)");
  train->add_option("--metrics", metrics, "metrics JSONL path (overrides config)");
  train->add_option("--ckpt", ckpt, "checkpoint path (overrides config)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));
  eval->add_option("--weights", weights, "auto, raw, ema or swa")->check(CLI::IsMember({"auto", "raw", "ema", "swa"}));

  auto* verify = app.add_subcommand("verify", "run oracle suites");
  verify->add_option("suite", suite, "klmap, sinkhorn, rowsum, shift, grad, signgain, ascent, nash or all")->required();
  verify->add_flag("--json", json, "one JSON object per suite");

  auto* ablate = app.add_subcommand("ablate", "staged ablation over several seeds");
  ablate->add_option("--stages", stages, "comma-separated stages")->default_str("baseline,align,guardian,swa");
  ablate->add_option("--config", config, "JSON base config")->check(CLI::ExistingFile);
  ablate->add_option("--preset", preset_name, "preset when no config is given")->default_str("ablation");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");
  ablate->add_option("--metrics", metrics, "metrics JSONL path");

  auto* dump = app.add_subcommand("dump-prior", "write a layer's cached prior as CSV");
  dump->add_option("--ckpt", ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  dump->add_option("--T", length, "sequence length")->required();
  dump->add_option("--layer", layer, "block index");
  dump->add_option("--out", out, "CSV path, '-' for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(config, preset_name, deterministic, metrics, ckpt);
    if (*eval) return cmd_eval(ckpt, split, weights);
    if (*verify) return cmd_verify(suite, json);
    if (*ablate) {
      if (stages.empty()) stages = "baseline,align,guardian,swa";
      if (ablate->count("--preset") == 0) preset_name = "ablation";
      return cmd_ablate(stages, config, preset_name, seeds, metrics);
    }
    if (*dump) return cmd_dump_prior(ckpt, length, layer, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return *verify ? kConfigError : kVerifyFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  }
  return kOk;
}
