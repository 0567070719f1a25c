#include "training/adamw.hpp"

#include <cmath>

namespace training {

using numerics::NumericError;
using numerics::Tensor;

void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                double lr, const OptimHparams& hp) {
  numerics::require_same_shape(param, grad, "adamw_step");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  double* p = param.data();
  const double* g = grad.data();
  double* mp = m.data();
  double* vp = v.data();
  for (std::size_t i = 0; i < param.numel(); ++i) {
    mp[i] = hp.beta1 * mp[i] + (1.0 - hp.beta1) * g[i];
    vp[i] = hp.beta2 * vp[i] + (1.0 - hp.beta2) * g[i] * g[i];
    const double mhat = mp[i] / bc1;
    const double vhat = vp[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * p[i]);
  }
}

double lr_schedule(std::size_t step, const OptimHparams& hp) {
  double scale = 1.0;
  if (hp.warmup_steps > 0 && step <= hp.warmup_steps) {
    scale = static_cast<double>(step) / static_cast<double>(hp.warmup_steps);
  } else if (hp.total_steps > hp.warmup_steps) {
    const double progress =
        static_cast<double>(step - hp.warmup_steps) /
        static_cast<double>(hp.total_steps - hp.warmup_steps);
    const double clamped = std::min(1.0, std::max(0.0, progress));
    scale = hp.lr_min_ratio +
            (1.0 - hp.lr_min_ratio) * 0.5 * (1.0 + std::cos(M_PI * clamped));
  }
  return hp.lr * scale;
}

AdamW::AdamW(std::vector<numerics::Param*> params, OptimHparams hp)
    : params_(std::move(params)), hp_(hp) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

double AdamW::clip_gradients(const std::vector<std::string>& names) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (double g : params_[i]->grad.values()) {
      if (!std::isfinite(g)) {
        throw NumericError("adamw: non-finite gradient in " +
                           (i < names.size() ? names[i] : std::to_string(i)));
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (hp_.clip_norm > 0.0 && norm > hp_.clip_norm) {
    const double scale = hp_.clip_norm / norm;
    for (auto* p : params_) p->grad.scale_(scale);
  }
  return norm;
}

void AdamW::step() {
  ++t_;
  const double lr = lr_schedule(t_, hp_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adamw_step(params_[i]->value, params_[i]->grad, m_[i], v_[i], t_, lr, hp_);
  }
}

}  // namespace training
