#include "ssm/selective_ssm.hpp"

#include <cmath>
#include <cstring>
#include <memory>

#include "numerics/parallel.hpp"

namespace ssm {

using numerics::ContractError;
using numerics::require_finite;
using numerics::ShapeError;
using numerics::Tape;
using numerics::Var;

namespace {

struct Dims {
  std::size_t len, width, state;
};

Dims check_forward_args(const Tensor& x, const SsmParams& p) {
  p.validate();
  if (x.rank() != 2) {
    throw ShapeError("ssm_forward: input must be L x D, got " +
                     numerics::shape_str(x.shape()));
  }
  const Dims d{x.extent(0), x.extent(1), p.state_size()};
  if (d.width != p.width()) {
    throw ShapeError("ssm_forward: input width " + std::to_string(d.width) +
                     " does not match parameter width " + std::to_string(p.width()));
  }
  return d;
}

// Selection over the whole sequence: B, C as L x N, delta as {L}.
void run_selection(const Tensor& x, const SsmParams& p, const Dims& d, Tensor& bmat,
                   Tensor& cmat, Tensor& delta) {
  delta = Tensor({d.len});
  if (p.selective) {
    matmul_abt_into(bmat, x, p.w_b);
    matmul_abt_into(cmat, x, p.w_c);
    Tensor svec;
    matmul_abt_into(svec, x, p.w_delta);  // L x 1
    const double bias = p.delta_bias[0];
    for (std::size_t t = 0; t < d.len; ++t) {
      delta[t] = numerics::softplus(svec[t] + bias);
    }
  } else {
    bmat = Tensor({d.len, d.state});
    cmat = Tensor({d.len, d.state});
    for (std::size_t t = 0; t < d.len; ++t) {
      std::memcpy(bmat.data() + t * d.state, p.b_fixed.data(), d.state * sizeof(double));
      std::memcpy(cmat.data() + t * d.state, p.c_fixed.data(), d.state * sizeof(double));
    }
    const double dv = numerics::softplus(p.delta_bias[0]);
    delta.fill(dv);
  }
}

// h[t,d,n] = abar[t,n] * h[t-1,d,n] + bbar[t,n] * x[t,d], h[-1] = 0.
Tensor batched_state_scan(const Tensor& abar, const Tensor& bbar, const Tensor& x,
                          const ScanExec& exec) {
  const std::size_t len = x.extent(0), width = x.extent(1), state = abar.extent(1);
  Tensor h({len, width, state});
  if (len == 0) return h;
  if (!exec.parallel) {
    numerics::parallel_for(
        width, exec.threads, [&](std::size_t d0, std::size_t d1, std::size_t) {
          for (std::size_t t = 0; t < len; ++t) {
            const double* at = abar.data() + t * state;
            const double* bt = bbar.data() + t * state;
            const double* xt = x.data() + t * width;
            for (std::size_t d = d0; d < d1; ++d) {
              const double xv = xt[d];
              double* ht = h.data() + (t * width + d) * state;
              if (t == 0) {
                for (std::size_t n = 0; n < state; ++n) ht[n] = bt[n] * xv;
              } else {
                const double* hp = h.data() + ((t - 1) * width + d) * state;
                for (std::size_t n = 0; n < state; ++n) ht[n] = at[n] * hp[n] + bt[n] * xv;
              }
            }
          }
        });
    return h;
  }
  numerics::parallel_for(
      width, exec.threads, [&](std::size_t d0, std::size_t d1, std::size_t) {
        std::vector<double> decay(len * state), load(len * state);
        for (std::size_t d = d0; d < d1; ++d) {
          std::memcpy(decay.data(), abar.data(), len * state * sizeof(double));
          for (std::size_t t = 0; t < len; ++t) {
            const double xv = x[t * width + d];
            const double* bt = bbar.data() + t * state;
            double* lt = load.data() + t * state;
            for (std::size_t n = 0; n < state; ++n) lt[n] = bt[n] * xv;
          }
          detail::scan_compose_blelloch(len, state, decay.data(), load.data(), exec.chunk,
                                        1);
          for (std::size_t t = 0; t < len; ++t) {
            std::memcpy(h.data() + (t * width + d) * state, load.data() + t * state,
                        state * sizeof(double));
          }
        }
      });
  return h;
}

// phi[t,d,n] = local[t,d,n] + abar[t+1,n] * phi[t+1,d,n], phi[L] = 0,
// with local[t,d,n] = upstream[t,d] * cmat[t,n]. Runs as a scan over
// reversed time with decays shifted by one step.
Tensor batched_adjoint_scan(const Tensor& abar, const Tensor& cmat,
                            const Tensor& upstream, const ScanExec& exec) {
  const std::size_t len = upstream.extent(0), width = upstream.extent(1),
                    state = abar.extent(1);
  Tensor phi({len, width, state});
  if (len == 0) return phi;
  if (!exec.parallel) {
    numerics::parallel_for(
        width, exec.threads, [&](std::size_t d0, std::size_t d1, std::size_t) {
          for (std::size_t ti = 0; ti < len; ++ti) {
            const std::size_t t = len - 1 - ti;
            const double* ct = cmat.data() + t * state;
            const double* an = abar.data() + (t + 1) * state;  // used when t+1 < len
            for (std::size_t d = d0; d < d1; ++d) {
              const double g = upstream[t * width + d];
              double* pt = phi.data() + (t * width + d) * state;
              if (t + 1 == len) {
                for (std::size_t n = 0; n < state; ++n) pt[n] = g * ct[n];
              } else {
                const double* pn = phi.data() + ((t + 1) * width + d) * state;
                for (std::size_t n = 0; n < state; ++n) pt[n] = g * ct[n] + an[n] * pn[n];
              }
            }
          }
        });
    return phi;
  }
  // reversed decay sequence: position s corresponds to t = len-1-s and its
  // decay is abar[t+1] (unused identity for s = 0)
  Tensor decay_rev({len, state});
  for (std::size_t n = 0; n < state; ++n) decay_rev[n] = 1.0;
  for (std::size_t s = 1; s < len; ++s) {
    std::memcpy(decay_rev.data() + s * state, abar.data() + (len - s) * state,
                state * sizeof(double));
  }
  numerics::parallel_for(
      width, exec.threads, [&](std::size_t d0, std::size_t d1, std::size_t) {
        std::vector<double> decay(len * state), load(len * state);
        for (std::size_t d = d0; d < d1; ++d) {
          std::memcpy(decay.data(), decay_rev.data(), len * state * sizeof(double));
          for (std::size_t s = 0; s < len; ++s) {
            const std::size_t t = len - 1 - s;
            const double g = upstream[t * width + d];
            const double* ct = cmat.data() + t * state;
            double* ls = load.data() + s * state;
            for (std::size_t n = 0; n < state; ++n) ls[n] = g * ct[n];
          }
          detail::scan_compose_blelloch(len, state, decay.data(), load.data(), exec.chunk,
                                        1);
          for (std::size_t s = 0; s < len; ++s) {
            std::memcpy(phi.data() + ((len - 1 - s) * width + d) * state,
                        load.data() + s * state, state * sizeof(double));
          }
        }
      });
  return phi;
}

}  // namespace

Tensor ssm_forward_traced(const Tensor& x, const SsmParams& p, const ScanExec& exec,
                          SsmTrace& trace) {
  const Dims d = check_forward_args(x, p);
  require_finite(x, "ssm input");

  Tensor bmat, cmat, delta;
  run_selection(x, p, d, bmat, cmat, delta);
  require_finite(bmat, "ssm selection (B)");
  require_finite(cmat, "ssm selection (C)");
  require_finite(delta, "ssm selection (delta)");

  Tensor abar({d.len, d.state});
  Tensor bbar({d.len, d.state});
  for (std::size_t t = 0; t < d.len; ++t) {
    const double dt = delta[t];
    const double* a = p.a_diag.data();
    double* at = abar.data() + t * d.state;
    double* bt = bbar.data() + t * d.state;
    const double* bm = bmat.data() + t * d.state;
    for (std::size_t n = 0; n < d.state; ++n) {
      at[n] = std::exp(dt * a[n]);
      bt[n] = dt * bm[n];
    }
  }
  require_finite(abar, "ssm discretization (abar)");
  require_finite(bbar, "ssm discretization (bbar)");

  Tensor h = batched_state_scan(abar, bbar, x, exec);
  require_finite(h, "ssm recurrence");

  Tensor y({d.len, d.width});
  for (std::size_t t = 0; t < d.len; ++t) {
    const double* ct = cmat.data() + t * d.state;
    double* yt = y.data() + t * d.width;
    const double* ht = h.data() + t * d.width * d.state;
    for (std::size_t dd = 0; dd < d.width; ++dd) {
      double s = 0.0;
      const double* hd = ht + dd * d.state;
      for (std::size_t n = 0; n < d.state; ++n) s += ct[n] * hd[n];
      yt[dd] = s;
    }
  }
  require_finite(y, "ssm readout");

  trace.x = x;
  trace.delta = std::move(delta);
  trace.abar = std::move(abar);
  trace.h = std::move(h);
  return y;
}

Tensor ssm_forward(const Tensor& x, const SsmParams& p, const ScanExec& exec) {
  SsmTrace trace;
  return ssm_forward_traced(x, p, exec, trace);
}

SsmGrads ssm_backward(const Tensor& upstream, const SsmTrace& trace, const SsmParams& p,
                      const ScanExec& exec) {
  if (!trace.valid()) {
    throw ContractError("ssm_backward: missing saved forward context");
  }
  const Dims d = check_forward_args(trace.x, p);
  numerics::require_same_shape(upstream, trace.x, "ssm_backward upstream");

  // c_t recomputed from saved x; b_t needed for d(delta) through bbar.
  Tensor bmat, cmat, delta_unused;
  run_selection(trace.x, p, d, bmat, cmat, delta_unused);
  Tensor bbar({d.len, d.state});
  for (std::size_t t = 0; t < d.len; ++t) {
    const double dt = trace.delta[t];
    for (std::size_t n = 0; n < d.state; ++n) {
      bbar[t * d.state + n] = dt * bmat[t * d.state + n];
    }
  }

  const Tensor phi = batched_adjoint_scan(trace.abar, cmat, upstream, exec);

  Tensor dabar({d.len, d.state});
  Tensor dbbar({d.len, d.state});
  Tensor dcmat({d.len, d.state});
  Tensor dx(trace.x.shape());
  numerics::parallel_for(
      d.len, exec.threads, [&](std::size_t t0, std::size_t t1, std::size_t) {
        for (std::size_t t = t0; t < t1; ++t) {
          double* dat = dabar.data() + t * d.state;
          double* dbt = dbbar.data() + t * d.state;
          double* dct = dcmat.data() + t * d.state;
          const double* bbt = bbar.data() + t * d.state;
          for (std::size_t dd = 0; dd < d.width; ++dd) {
            const double xv = trace.x[t * d.width + dd];
            const double g = upstream[t * d.width + dd];
            const double* pt = phi.data() + (t * d.width + dd) * d.state;
            const double* ht = trace.h.data() + (t * d.width + dd) * d.state;
            const double* hprev =
                t > 0 ? trace.h.data() + ((t - 1) * d.width + dd) * d.state : nullptr;
            double acc_dx = 0.0;
            for (std::size_t n = 0; n < d.state; ++n) {
              const double pv = pt[n];
              if (hprev) dat[n] += pv * hprev[n];
              dbt[n] += pv * xv;
              dct[n] += g * ht[n];
              acc_dx += pv * bbt[n];
            }
            dx[t * d.width + dd] = acc_dx;
          }
        }
      });

  // step-size and diagonal gradients
  Tensor ddelta({d.len});
  Tensor da({d.state});
  for (std::size_t t = 0; t < d.len; ++t) {
    const double dt = trace.delta[t];
    const double* at = trace.abar.data() + t * d.state;
    const double* dat = dabar.data() + t * d.state;
    const double* dbt = dbbar.data() + t * d.state;
    const double* bm = bmat.data() + t * d.state;
    double s = 0.0;
    for (std::size_t n = 0; n < d.state; ++n) {
      s += dat[n] * p.a_diag[n] * at[n];  // d(abar)/d(delta) = a * abar
      s += dbt[n] * bm[n];                // d(bbar)/d(delta) = b
      da[n] += dat[n] * dt * at[n];       // d(abar)/d(a) = delta * abar
    }
    ddelta[t] = s;
  }
  // d(bmat) = delta * d(bbar)
  Tensor dbmat({d.len, d.state});
  for (std::size_t t = 0; t < d.len; ++t) {
    const double dt = trace.delta[t];
    for (std::size_t n = 0; n < d.state; ++n) {
      dbmat[t * d.state + n] = dt * dbbar[t * d.state + n];
    }
  }
  // sigmoid of the pre-softplus value, recovered from delta itself:
  // sigma(s) = 1 - exp(-softplus(s)).
  Tensor ds({d.len});
  double dbias = 0.0;
  for (std::size_t t = 0; t < d.len; ++t) {
    ds[t] = ddelta[t] * (-std::expm1(-trace.delta[t]));
    dbias += ds[t];
  }

  SsmGrads out;
  out.x = std::move(dx);
  out.a_diag = std::move(da);
  out.delta_bias = Tensor::scalar(dbias);
  if (p.selective) {
    matmul_atb_into(out.w_b, dbmat, trace.x);
    matmul_atb_into(out.w_c, dcmat, trace.x);
    Tensor ds_col({d.len, 1}, ds.values());
    matmul_atb_into(out.w_delta, ds_col, trace.x);
    matmul_into(out.x, dbmat, p.w_b, /*acc=*/true);
    matmul_into(out.x, dcmat, p.w_c, /*acc=*/true);
    for (std::size_t t = 0; t < d.len; ++t) {
      const double dst = ds[t];
      if (dst == 0.0) continue;
      double* dxt = out.x.data() + t * d.width;
      const double* wd = p.w_delta.data();
      for (std::size_t dd = 0; dd < d.width; ++dd) dxt[dd] += dst * wd[dd];
    }
  } else {
    out.b_fixed = Tensor({d.state});
    out.c_fixed = Tensor({d.state});
    for (std::size_t t = 0; t < d.len; ++t) {
      for (std::size_t n = 0; n < d.state; ++n) {
        out.b_fixed[n] += dbmat[t * d.state + n];
        out.c_fixed[n] += dcmat[t * d.state + n];
      }
    }
  }
  require_finite(out.x, "ssm backward (dx)");
  return out;
}

Var apply_ssm(Tape& tape, Var x, SsmParams p, const SsmLeafVars& leaves,
              const ScanExec& exec) {
  auto params = std::make_shared<SsmParams>(std::move(p));
  auto trace = std::make_shared<SsmTrace>();
  Tensor y = ssm_forward_traced(tape.value(x), *params, exec, *trace);
  const std::vector<Var> inputs = {x,           leaves.a_diag,  leaves.w_b,
                                   leaves.w_c,  leaves.w_delta, leaves.delta_bias,
                                   leaves.b_fixed, leaves.c_fixed};
  return tape.push(
      std::move(y), std::span<const Var>(inputs),
      [x, leaves, params, trace, exec](Tape& t, const Tensor& up) {
        SsmGrads g = ssm_backward(up, *trace, *params, exec);
        t.accumulate_grad(x, std::move(g.x));
        if (leaves.a_diag.valid()) t.accumulate_grad(leaves.a_diag, std::move(g.a_diag));
        if (leaves.delta_bias.valid()) {
          t.accumulate_grad(leaves.delta_bias, std::move(g.delta_bias));
        }
        if (params->selective) {
          if (leaves.w_b.valid()) t.accumulate_grad(leaves.w_b, std::move(g.w_b));
          if (leaves.w_c.valid()) t.accumulate_grad(leaves.w_c, std::move(g.w_c));
          if (leaves.w_delta.valid()) {
            t.accumulate_grad(leaves.w_delta, std::move(g.w_delta));
          }
        } else {
          if (leaves.b_fixed.valid()) t.accumulate_grad(leaves.b_fixed, std::move(g.b_fixed));
          if (leaves.c_fixed.valid()) t.accumulate_grad(leaves.c_fixed, std::move(g.c_fixed));
        }
      });
}

}  // namespace ssm
