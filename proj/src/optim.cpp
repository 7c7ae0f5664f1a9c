#include "rwmlab/optim.hpp"

#include <cmath>

namespace rwmlab {

AdamW::AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  if (lr <= 0.0) throw ConfigError("AdamW: learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("AdamW: weight decay must be nonnegative");
  for (const auto* p : params_) {
    m_.push_back(Array::zeros(p->value.shape));
    v_.push_back(Array::zeros(p->value.shape));
  }
}

void AdamW::set_lr(double lr) {
  if (lr <= 0.0) throw ConfigError("AdamW: learning rate must be positive");
  lr_ = lr;
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, t_);
  const double bc2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Array& m = m_[k];
    Array& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      m.data[i] = b1_ * m.data[i] + (1.0 - b1_) * g;
      v.data[i] = b2_ * v.data[i] + (1.0 - b2_) * g * g;
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      // Decay is decoupled from the adaptive update.
      p.value.data[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + wd_ * p.value.data[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace rwmlab
