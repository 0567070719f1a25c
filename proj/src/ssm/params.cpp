#include "ssm/params.hpp"

#include <cmath>

namespace ssm {

using numerics::ContractError;
using numerics::ShapeError;

std::vector<double> init_s4d_real(std::size_t n) {
  if (n == 0) throw ContractError("init_s4d_real: state size must be >= 1");
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = -static_cast<double>(i + 1);
  return a;
}

double inv_softplus(double y) {
  if (y <= 0.0) throw ContractError("inv_softplus: argument must be positive");
  // log(exp(y) - 1), stable for small y via expm1 and for large y directly.
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

void SsmParams::validate() const {
  const std::size_t n = a_diag.extent(0);
  if (a_diag.rank() != 1 || n == 0) {
    throw ShapeError("SsmParams: a_diag must be a nonempty vector");
  }
  if (selective) {
    if (w_b.rank() != 2 || w_c.rank() != 2 || w_delta.rank() != 2) {
      throw ShapeError("SsmParams: selection weights must be matrices");
    }
    const std::size_t d = w_b.extent(1);
    if (w_b.extent(0) != n || w_c.extent(0) != n || w_c.extent(1) != d ||
        w_delta.extent(0) != 1 || w_delta.extent(1) != d) {
      throw ShapeError("SsmParams: inconsistent N/D across selection weights");
    }
  } else {
    if (b_fixed.extent(0) != n || c_fixed.extent(0) != n || width_hint == 0) {
      throw ShapeError("SsmParams: fixed variant needs b_fixed/c_fixed of size N");
    }
  }
  if (delta_bias.numel() != 1) {
    throw ShapeError("SsmParams: delta_bias must be scalar");
  }
}

SsmParams make_ssm_params(std::size_t n_state, std::size_t width, bool selective,
                          numerics::Rng& rng, double delta_min, double delta_max) {
  SsmParams p;
  p.a_diag = Tensor({n_state}, std::span<const double>(init_s4d_real(n_state)));
  p.selective = selective;
  p.width_hint = width;
  const double target = rng.uniform(delta_min, delta_max);
  p.delta_bias = Tensor::scalar(inv_softplus(target));
  if (selective) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    p.w_b = Tensor({n_state, width});
    p.w_c = Tensor({n_state, width});
    p.w_delta = Tensor({1, width});
    for (auto& v : p.w_b.values()) v = rng.uniform(-bound, bound);
    for (auto& v : p.w_c.values()) v = rng.uniform(-bound, bound);
    for (auto& v : p.w_delta.values()) v = rng.uniform(-bound, bound);
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_state));
    p.b_fixed = Tensor({n_state});
    p.c_fixed = Tensor({n_state});
    for (auto& v : p.b_fixed.values()) v = rng.uniform(-bound, bound);
    for (auto& v : p.c_fixed.values()) v = rng.uniform(-bound, bound);
  }
  return p;
}

Selection select(std::span<const double> x_t, const SsmParams& p) {
  const std::size_t n = p.state_size();
  Selection out;
  if (!p.selective) {
    out.b = p.b_fixed;
    out.c = p.c_fixed;
    out.delta = numerics::softplus(p.delta_bias[0]);
    return out;
  }
  const std::size_t d = p.w_b.extent(1);
  if (x_t.size() != d) {
    throw ShapeError("select: input width " + std::to_string(x_t.size()) +
                     " does not match W_B width " + std::to_string(d));
  }
  out.b = Tensor({n});
  out.c = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) {
    double sb = 0.0, sc = 0.0;
    const double* wb = p.w_b.data() + i * d;
    const double* wc = p.w_c.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      sb += wb[j] * x_t[j];
      sc += wc[j] * x_t[j];
    }
    out.b[i] = sb;
    out.c[i] = sc;
  }
  double s = p.delta_bias[0];
  for (std::size_t j = 0; j < d; ++j) s += p.w_delta[j] * x_t[j];
  out.delta = numerics::softplus(s);
  return out;
}

Discretized discretize(const Tensor& a_diag, const Tensor& b_t, double delta_t) {
  if (delta_t <= 0.0) {
    throw ContractError("discretize: delta must be positive, got " +
                        std::to_string(delta_t));
  }
  numerics::require_same_shape(a_diag, b_t, "discretize");
  const std::size_t n = a_diag.numel();
  Discretized out{Tensor({n}), Tensor({n})};
  for (std::size_t i = 0; i < n; ++i) {
    out.abar[i] = std::exp(delta_t * a_diag[i]);
    out.bbar[i] = delta_t * b_t[i];
  }
  return out;
}

}  // namespace ssm
