#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpalab/data.hpp"
#include "rpalab/model.hpp"

namespace rpalab {

/// Raised for malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "file"
  std::string path;
  SyntheticTaskConfig synthetic;
  double val_fraction = 0.05;
  double test_fraction = 0.05;
};

struct GuardianConfig {
  bool enable = true;
  double lr = 1e-3;
  double beta_ramp = 0.1;  // fraction of epochs over which beta climbs 0 -> 1
  double lambda_gain = 1.0;
  double lambda_zone = 0.5;
};

struct GameConfig {
  bool enable = true;
  std::vector<std::size_t> contexts{32, 64};
  double eta = 0.5;
  double lambda_sat = 1.0;
  double sat_threshold = 0.9;
  double lambda_entropy = 0.2;
  std::size_t probe_windows = 8;  // validation windows per candidate per epoch
};

struct ScheduleConfig {
  double peak_lr = 3e-3;
  double flat_fraction = 0.3;
  double floor = 0.08;
  double decay_fraction = 1.0;  // cosine reaches the floor at this fraction of training
  double weight_decay = 0.01;
  bool warm_in = true;  // ramp the prior scale over rpa.warm_steps
  bool ema = true;
  double ema_decay = 0.999;
  bool swa = true;
  double swa_start = 0.6;  // fraction of epochs before SWA-select opens
  double swa_min_gain = 0.01;
  double zone_percentile = 0.5;  // auto zone upper edge, quantile of the val CE history
  double zone_lo = 0.0;
  double zone_hi = 0.0;  // 0: derive the zone when SWA opens
  bool chaos = true;
  double chaos_fraction = 0.2;
  bool glide = true;
};

struct RunConfig {
  std::string name = "desk";
  ModelConfig model;
  DataConfig data;
  GuardianConfig guardian;
  GameConfig game;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;
  std::size_t tokens_per_step = 2048;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 50;
  std::size_t eval_context = 0;  // 0: largest candidate context
  std::size_t eval_batch = 16;
  std::size_t val_windows = 0;  // 0: the whole split
  bool deterministic = false;
  std::string metrics_path;
  std::string checkpoint_path;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
  std::size_t largest_context() const;
  std::size_t resolved_eval_context() const { return eval_context ? eval_context : largest_context(); }
  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

RunConfig desk_preset();
/// Reference-scale settings; shipped for completeness, far beyond a desk budget.
RunConfig full_preset();
/// Small model and task used by the ablation suite.
RunConfig ablation_preset();
RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

}  // namespace rpalab
