#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rpalab/checkpoint.hpp"
#include "rpalab/config.hpp"
#include "rpalab/context_game.hpp"
#include "rpalab/data.hpp"
#include "rpalab/guardian.hpp"
#include "rpalab/metrics.hpp"
#include "rpalab/model.hpp"
#include "rpalab/optim.hpp"
#include "rpalab/schedules.hpp"

namespace rpalab {

struct EvalResult {
  double ce = 0.0;  // unsmoothed, per token
  double ppl = 0.0;
  std::size_t tokens = 0;
  std::size_t windows = 0;
  double mu_entropy = 0.0;
  double sat_frac = 0.0;
  double gate_mean = 0.0;
  std::string weights = "raw";
};

/// Sequential windows in eval mode. Each layer's prior is built from the first batch and
/// reused for the rest through a fresh cache.
EvalResult evaluate(Model& model, const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch,
                    std::size_t max_windows = 0, Instrumentation* counters = nullptr);

/// Diverged loss; carries the step and the last finite statistics.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  double final_ce = 0.0;  // validation CE with the selected eval weights
  std::string eval_weights = "raw";
  double last_raw_ce = 0.0;
  double best_raw_ce = std::numeric_limits<double>::infinity();
  double best_admitted_ce = std::numeric_limits<double>::infinity();
  std::size_t swa_count = 0;
  std::vector<double> val_history;
  std::size_t steps = 0;
};

/// Corpus for a config: the synthetic task or a byte-level file.
Corpus load_corpus(const DataConfig& cfg);

class Trainer {
 public:
  Trainer(RunConfig cfg, Splits data, MetricsWriter* metrics = nullptr);

  TrainResult run();

  Model& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  const Splits& data() const { return data_; }
  /// Raw weights plus whatever EMA / SWA copies exist, with the config echoed in the header.
  Checkpoint checkpoint() const;

 private:
  void log(nlohmann::json record);
  double wall() const;
  void train_step(std::size_t epoch);
  EvalResult validate_epoch(std::size_t epoch, TrainResult& res);

  RunConfig cfg_;
  Splits data_;
  MetricsWriter* metrics_;
  Model model_;
  AdamW opt_;
  LrSchedule lr_;
  Chaos chaos_;
  ContextMixture mixture_;
  Guardian guardian_;
  SwaSelect swa_;
  std::optional<std::vector<Tensor>> ema_;
  TrainSampler sampler_;
  Rng context_rng_, forward_rng_;
  std::size_t step_ = 0;
  std::optional<double> prev_ce_, prev_gate_, swa_entry_ce_;
  bool swa_open_ = false;
  double start_time_ = 0.0;
};

/// Weights used for evaluation: SWA mean if anything was admitted, else EMA, else raw.
std::pair<std::vector<Tensor>, std::string> select_eval_weights(const Checkpoint& ck, const Model& model);

/// A trained model restored from a checkpoint, with the weights chosen for evaluation.
struct LoadedRun {
  RunConfig cfg;
  std::unique_ptr<Model> model;
  std::string weights;
};

/// `weights` is "auto" (SWA, then EMA, then raw), "raw", "ema" or "swa".
LoadedRun load_run(const std::string& checkpoint_path, const std::string& weights = "auto");

/// The cached additive prior [T, T] of one layer, built from the first T tokens of `ids`.
Tensor prior_for(Model& model, const std::vector<std::size_t>& ids, std::size_t length, std::size_t layer);

/// Cumulative stages: baseline, align (+prior alignment, context game), guardian (+controller,
/// EMA, chaos, dropout glide), swa (+SWA-select).
RunConfig stage_config(const RunConfig& base, const std::string& stage);
const std::vector<std::string>& ablation_stages();

struct AblationReport {
  std::vector<std::string> stages;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<TrainResult>> runs;  // [stage][seed]
  double seconds = 0.0;

  double median_ce(std::size_t stage) const;
};

/// Checks on an ablation report: the aligned stage beats the baseline on median val CE, and
/// in the SWA stage every seed's averaged weights are no worse than its best admitted epoch.
struct AblationVerdict {
  bool has_direction = false;
  bool direction = false;
  bool has_swa = false;
  bool swa = false;
  std::string detail;

  bool pass() const { return (!has_direction || direction) && (!has_swa || swa); }
};
AblationVerdict judge_ablation(const AblationReport& rep);

AblationReport run_ablation(const RunConfig& base, const std::vector<std::string>& stages,
                            const std::vector<std::uint64_t>& seeds, MetricsWriter* metrics = nullptr);

}  // namespace rpalab
