#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numerics/rng.hpp"
#include "numerics/tensor.hpp"

namespace ssm {

using numerics::Tensor;

// a_diag[n'] = -(n'+1), the real diagonal initialization; every mode decays.
std::vector<double> init_s4d_real(std::size_t n);

// Inverse of softplus: returns s with softplus(s) == y (y > 0).
double inv_softplus(double y);

// Continuous-time parameters and selection weights of the diagonal selective
// SSM over width D with state size N. In selective mode B_t, C_t and the step
// size come from the input via w_b, w_c, w_delta; the fixed (non-selective)
// variant replaces them with learned constants b_fixed/c_fixed and a constant
// step softplus(delta_bias).
struct SsmParams {
  Tensor a_diag;      // {N}
  Tensor w_b;         // {N, D}
  Tensor w_c;         // {N, D}
  Tensor w_delta;     // {1, D}
  Tensor delta_bias;  // {1}
  bool selective = true;
  Tensor b_fixed;  // {N}, fixed variant only
  Tensor c_fixed;  // {N}, fixed variant only

  std::size_t state_size() const { return a_diag.extent(0); }
  std::size_t width() const { return selective ? w_b.extent(1) : width_hint; }
  std::size_t width_hint = 0;  // set for the fixed variant

  void validate() const;
};

// delta_min/delta_max bound softplus(delta_bias) at initialization.
SsmParams make_ssm_params(std::size_t n_state, std::size_t width, bool selective,
                          numerics::Rng& rng, double delta_min = 0.001,
                          double delta_max = 0.1);

struct Selection {
  Tensor b;  // {N}
  Tensor c;  // {N}
  double delta = 0.0;
};

// Per-timestep selection: b_t = W_B x_t, c_t = W_C x_t,
// delta_t = softplus(W_delta x_t + delta_bias). Fixed variant returns the
// learned constants.
Selection select(std::span<const double> x_t, const SsmParams& p);

struct Discretized {
  Tensor abar;  // {N}
  Tensor bbar;  // {N}
};

// Approximated discretization: abar = exp(delta * a), bbar = delta * b.
Discretized discretize(const Tensor& a_diag, const Tensor& b_t, double delta_t);

}  // namespace ssm
