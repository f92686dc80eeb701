#pragma once

#include <cstddef>
#include <vector>

#include "rpalab/tensor.hpp"

namespace rpalab {

/// Flat prelude at the peak, then cosine decay to floor * peak at `total`.
struct LrSchedule {
  double peak = 3e-3;
  double flat_fraction = 0.3;
  double floor = 0.08;
  std::size_t total = 1000;

  double at(std::size_t t) const;
};

/// shadow <- decay * shadow + (1 - decay) * params, tensor by tensor.
void ema_update(std::vector<Tensor>& shadow, const std::vector<Tensor>& params, double decay);

/// Averages only snapshots whose CE lies in [zone_lo, zone_hi] and improves on the
/// entry CE by at least min_gain (relative).
class SwaSelect {
 public:
  struct Zone {
    double lo = 0.0;
    double hi = 1e300;
  };

  SwaSelect() = default;
  SwaSelect(Zone zone, double min_gain) : zone_(zone), min_gain_(min_gain) {}

  bool admits(double ce, double entry_ce) const;
  /// Adds the snapshot to the running mean when admitted; returns whether it was.
  bool consider(double ce, double entry_ce, const std::vector<Tensor>& params);

  std::size_t count() const { return count_; }
  const std::vector<Tensor>& mean() const { return mean_; }
  const Zone& zone() const { return zone_; }
  void set_zone(Zone z) { zone_ = z; }
  double min_gain() const { return min_gain_; }
  /// Lowest CE among admitted snapshots (infinity before the first).
  double best_admitted() const { return best_; }

 private:
  Zone zone_;
  double min_gain_ = 0.01;
  std::size_t count_ = 0;
  std::vector<Tensor> mean_;
  double best_ = 1e300;
};

/// Logistic-map perturbation with exponentially decaying amplitude.
class Chaos {
 public:
  explicit Chaos(double r = 3.9, double x0 = 0.721, double amp = 0.25, double decay = 5e-4)
      : r_(r), x_(x0), amp0_(amp), decay_(decay) {}

  /// Advances the map and returns (1 - a) + a * x with a = amp * exp(-decay * t).
  double step();
  double factor() const { return last_; }
  double amplitude() const;
  double temp(double max_extra = 0.3) const { return 1.0 + max_extra * amplitude(); }
  double x() const { return x_; }
  std::size_t t() const { return t_; }

 private:
  double r_, x_, amp0_, decay_;
  std::size_t t_ = 0;
  double last_ = 1.0;
};

/// 0.08 + (base - 0.08) * max(0, 1 - phase / 0.6) when base >= 0.08, else base.
double dropout_glide(double base_p, double phase);

/// Empirical quantile (linear interpolation) of a sample.
double percentile(std::vector<double> values, double q);

}  // namespace rpalab
