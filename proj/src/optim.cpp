#include "rpalab/optim.hpp"

#include <cmath>

namespace rpalab {

AdamW::AdamW(std::vector<Parameter*> params, Options opt) : params_(std::move(params)), opt_(opt) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    const bool decay = p.decay && p.value.rank() >= 2 && opt_.weight_decay > 0.0;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      if (decay) p.value[i] *= 1.0 - opt_.lr * opt_.weight_decay;
      m_[k][i] = opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * g;
      v_[k][i] = opt_.beta2 * v_[k][i] + (1.0 - opt_.beta2) * g * g;
      p.value[i] -= opt_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + opt_.eps);
    }
  }
}

}  // namespace rpalab
