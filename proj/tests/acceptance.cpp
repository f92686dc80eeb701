// One PASS/FAIL line per acceptance criterion. Exit code is the number of failures.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rpalab/config.hpp"
#include "rpalab/trainer.hpp"
#include "rpalab/verify.hpp"

using namespace rpalab;

namespace {

constexpr double kAblationBudgetSeconds = 900.0;

struct Line {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print(const Line& l) {
  std::printf("%s  %-22s %7.1fs  %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.seconds, l.detail.c_str());
  std::fflush(stdout);
}

Line from_suite(const std::string& label, const std::string& suite) {
  const SuiteReport r = run_verify(suite).front();
  std::ostringstream d;
  d << "measured " << r.measured << " (tol " << r.tolerance << "); " << r.detail;
  return {label, r.pass, d.str(), r.seconds};
}

RunConfig small_run(std::uint64_t seed) {
  RunConfig cfg = ablation_preset();
  cfg.seed = seed;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 4;
  cfg.tokens_per_step = 256;
  cfg.val_windows = 8;
  cfg.game.probe_windows = 2;
  cfg.data.synthetic.length = 20000;
  cfg.deterministic = true;
  cfg.validate();
  return cfg;
}

Splits splits_for(const RunConfig& cfg) {
  return split_corpus(load_corpus(cfg.data), cfg.data.val_fraction, cfg.data.test_fraction);
}

Line neutrality() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = small_run(11);
  Trainer trainer(cfg, splits_for(cfg));
  trainer.run();
  Model& model = trainer.model();
  Instrumentation counters;
  model.attach(&counters);
  const std::size_t context = cfg.resolved_eval_context();
  const std::size_t windows = 20, batch = 4;
  const std::size_t batches = eval_batches(trainer.data().val, context, batch, windows).size();
  evaluate(model, trainer.data().val, context, batch, windows, &counters);
  model.attach(nullptr);

  const std::uint64_t apps = counters.attention_applications, adds = counters.bias_adds;
  const std::uint64_t ctrl = counters.controller_mutations, sched = counters.schedule_mutations;
  const std::uint64_t builds = counters.prior_builds, hits = counters.prior_cache_hits;
  const std::uint64_t L = model.layers();
  const bool pass = batches > 1 && apps == L * batches && adds == apps && ctrl == 0 && sched == 0 && builds == L &&
                    hits == L * (batches - 1);
  std::ostringstream d;
  d << "attention " << apps << ", bias adds " << adds << ", controller mutations " << ctrl
    << ", schedule mutations " << sched << ", prior builds " << builds << ", cache hits " << hits;
  return {"inference-neutrality", pass, d.str(), since(t0)};
}

Line determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  auto stream = [] {
    RunConfig cfg = small_run(5);
    MetricsWriter metrics;
    Trainer trainer(cfg, splits_for(cfg), &metrics);
    trainer.run();
    return metrics.text();
  };
  const std::string a = stream(), b = stream();
  std::ostringstream d;
  d << a.size() << " bytes per stream, " << (a == b ? "identical" : "different");
  return {"determinism", !a.empty() && a == b, d.str(), since(t0)};
}

std::vector<Line> ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const AblationReport rep = run_ablation(ablation_preset(), {"baseline", "align", "swa"}, {1, 2, 3});
  const AblationVerdict v = judge_ablation(rep);
  const double secs = since(t0);
  std::ostringstream d1;
  d1 << "median val CE baseline " << rep.median_ce(0) << " -> align " << rep.median_ce(1) << "; total " << secs
     << " s (budget " << kAblationBudgetSeconds << " s)";
  Line dir{"ablation-direction", v.has_direction && v.direction && secs < kAblationBudgetSeconds, d1.str(), secs};
  std::ostringstream d2;
  for (std::size_t s = 0; s < rep.seeds.size(); ++s) {
    const TrainResult& r = rep.runs[2][s];
    d2 << "seed " << rep.seeds[s] << ": " << r.final_ce << " over " << r.swa_count << " vs " << r.best_admitted_ce
       << "; ";
  }
  Line swa{"ablation-swa-select", v.has_swa && v.swa && secs < kAblationBudgetSeconds, d2.str(), secs};
  return {dir, swa};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  bool fast = false;
  app.add_flag("--fast", fast, "skip the directional ablation");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](const Line& l) {
    print(l);
    if (!l.pass) ++failures;
  };
  try {
    report(from_suite("klmap-oracle", "klmap"));
    report(from_suite("rowsum", "rowsum"));
    report(from_suite("shift-invariance", "shift"));
    report(from_suite("sinkhorn", "sinkhorn"));
    report(from_suite("gradient", "grad"));
    report(from_suite("noisy-sign-gain", "signgain"));
    report(from_suite("noisy-ascent", "ascent"));
    report(from_suite("context-game", "nash"));
    if (fast) {
      std::printf("SKIP  ablation-direction / ablation-swa-select (--fast)\n");
    } else {
      for (const Line& l : ablation()) report(l);
    }
    report(neutrality());
    report(determinism());
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
    return 100;
  }
  std::printf("%d failed\n", failures);
  return failures;
}
