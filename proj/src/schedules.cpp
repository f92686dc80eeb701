#include "rpalab/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rpalab {

double LrSchedule::at(std::size_t t) const {
  const double flat_end = flat_fraction * static_cast<double>(total);
  const double tt = static_cast<double>(std::min(t, total));
  if (tt < flat_end) return peak;
  const double span = static_cast<double>(total) - flat_end;
  const double u = span > 0.0 ? (tt - flat_end) / span : 1.0;
  return peak * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * u)));
}

void ema_update(std::vector<Tensor>& shadow, const std::vector<Tensor>& params, double decay) {
  if (shadow.size() != params.size()) throw std::invalid_argument("ema_update: size mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (shadow[k].shape() != params[k].shape()) throw std::invalid_argument("ema_update: shape mismatch");
    for (std::size_t i = 0; i < params[k].numel(); ++i)
      shadow[k][i] = decay * shadow[k][i] + (1.0 - decay) * params[k][i];
  }
}

bool SwaSelect::admits(double ce, double entry_ce) const {
  if (!(ce >= zone_.lo && ce <= zone_.hi)) return false;
  return (entry_ce - ce) / entry_ce >= min_gain_;
}

bool SwaSelect::consider(double ce, double entry_ce, const std::vector<Tensor>& params) {
  if (!admits(ce, entry_ce)) return false;
  ++count_;
  if (count_ == 1) {
    mean_ = params;
  } else {
    // incremental mean: m += (x - m) / n
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].numel(); ++i) mean_[k][i] += (params[k][i] - mean_[k][i]) * inv;
  }
  best_ = std::min(best_, ce);
  return true;
}

double Chaos::amplitude() const { return amp0_ * std::exp(-decay_ * static_cast<double>(t_)); }

double Chaos::step() {
  x_ = r_ * x_ * (1.0 - x_);
  ++t_;
  const double a = amplitude();
  last_ = (1.0 - a) + a * x_;
  return last_;
}

double dropout_glide(double base_p, double phase) {
  if (base_p < 0.08) return base_p;
  const double tail = std::max(0.0, 1.0 - phase / 0.60);
  return 0.08 + (base_p - 0.08) * tail;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace rpalab
