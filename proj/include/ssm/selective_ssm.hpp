#pragma once

#include "numerics/tape.hpp"
#include "ssm/params.hpp"
#include "ssm/scan.hpp"

namespace ssm {

// Saved forward context consumed by ssm_backward. c_t is deliberately not
// stored; the backward pass recomputes it from x.
struct SsmTrace {
  Tensor x;      // L x D
  Tensor delta;  // {L}
  Tensor abar;   // L x N
  Tensor h;      // L x D x N
  bool valid() const { return h.numel() > 0; }
};

// Full selective-SSM pipeline over a sequence: selection, approximated
// discretization, per-channel linear recurrence (parallel scan by default),
// readout y_{t,d} = c_t . h_{t,d}. Causal: y_t depends on x_{1..t} only.
Tensor ssm_forward(const Tensor& x, const SsmParams& p, const ScanExec& exec = {});
Tensor ssm_forward_traced(const Tensor& x, const SsmParams& p, const ScanExec& exec,
                          SsmTrace& trace);

struct SsmGrads {
  Tensor x;
  Tensor w_b, w_c, w_delta, delta_bias, a_diag;
  Tensor b_fixed, c_fixed;  // fixed variant only
};

// Reverse-time adjoint of the recurrence: the state adjoint obeys
// g_t = local_t + abar_{t+1} ⊙ g_{t+1} and is computed as a reverse scan
// with the same kernel family as the forward.
SsmGrads ssm_backward(const Tensor& upstream, const SsmTrace& trace, const SsmParams& p,
                      const ScanExec& exec = {});

// Tape integration. Leaves for inactive fields may be invalid handles.
struct SsmLeafVars {
  numerics::Var a_diag, w_b, w_c, w_delta, delta_bias, b_fixed, c_fixed;
};

numerics::Var apply_ssm(numerics::Tape& tape, numerics::Var x, SsmParams p,
                        const SsmLeafVars& leaves, const ScanExec& exec);

}  // namespace ssm
