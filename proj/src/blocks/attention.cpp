#include "blocks/attention.hpp"

#include <cmath>
#include <memory>

namespace blocks {

using numerics::require_finite;
using numerics::ShapeError;

Var multihead_sdpa_op(Tape& t, Var q, Var k, Var v, std::size_t n_heads) {
  const Tensor& qv = t.value(q);
  const Tensor& kv = t.value(k);
  const Tensor& vv = t.value(v);
  if (qv.rank() != 2 || kv.rank() != 2 || !kv.same_shape(vv) ||
      qv.extent(1) != kv.extent(1)) {
    throw ShapeError("sdpa: q " + numerics::shape_str(qv.shape()) + ", k " +
                     numerics::shape_str(kv.shape()));
  }
  const std::size_t lq = qv.extent(0), lk = kv.extent(0), width = qv.extent(1);
  if (n_heads == 0 || width % n_heads != 0) {
    throw ShapeError("sdpa: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = width / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // attention weights per head, saved for the backward pass
  auto probs = std::make_shared<Tensor>(Tensor({n_heads, lq, lk}));
  Tensor out({lq, width});
  Tensor scores({lq, lk});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < lq; ++i) {
      const double* qr = qv.data() + i * width + off;
      double* sr = scores.data() + i * lk;
      for (std::size_t j = 0; j < lk; ++j) {
        const double* kr = kv.data() + j * width + off;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += qr[c] * kr[c];
        sr[j] = s * scale;
      }
    }
    Tensor p = softmax_rows(scores);
    std::copy_n(p.data(), lq * lk, probs->data() + h * lq * lk);
    for (std::size_t i = 0; i < lq; ++i) {
      double* orow = out.data() + i * width + off;
      const double* pr = p.data() + i * lk;
      for (std::size_t j = 0; j < lk; ++j) {
        const double pij = pr[j];
        const double* vr = vv.data() + j * width + off;
        for (std::size_t c = 0; c < hd; ++c) orow[c] += pij * vr[c];
      }
    }
  }
  require_finite(out, "attention");

  return t.push(
      std::move(out), {q, k, v},
      [q, k, v, probs, n_heads, hd, scale](Tape& tp, const Tensor& up) {
        const Tensor& qv = tp.value(q);
        const Tensor& kv = tp.value(k);
        const Tensor& vv = tp.value(v);
        const std::size_t lq = qv.extent(0), lk = kv.extent(0), width = qv.extent(1);
        Tensor dq(qv.shape()), dk(kv.shape()), dv(vv.shape());
        std::vector<double> dp(lk), dscore(lk);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * hd;
          const double* p = probs->data() + h * lq * lk;
          for (std::size_t i = 0; i < lq; ++i) {
            const double* urow = up.data() + i * width + off;
            const double* prow = p + i * lk;
            // dV += P^T dO ; dP = dO V^T
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
              const double* vr = vv.data() + j * width + off;
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) s += urow[c] * vr[c];
              dp[j] = s;
              dot += s * prow[j];
              double* dvr = dv.data() + j * width + off;
              const double pij = prow[j];
              for (std::size_t c = 0; c < hd; ++c) dvr[c] += pij * urow[c];
            }
            // softmax backward: dS = P ⊙ (dP - (dP·P))
            for (std::size_t j = 0; j < lk; ++j) {
              dscore[j] = prow[j] * (dp[j] - dot) * scale;
            }
            double* dqr = dq.data() + i * width + off;
            const double* qr = qv.data() + i * width + off;
            for (std::size_t j = 0; j < lk; ++j) {
              const double dsj = dscore[j];
              if (dsj == 0.0) continue;
              const double* kr = kv.data() + j * width + off;
              double* dkr = dk.data() + j * width + off;
              for (std::size_t c = 0; c < hd; ++c) {
                dqr[c] += dsj * kr[c];
                dkr[c] += dsj * qr[c];
              }
            }
          }
        }
        tp.accumulate_grad(q, std::move(dq));
        tp.accumulate_grad(k, std::move(dk));
        tp.accumulate_grad(v, std::move(dv));
      });
}

void CrossAttention::init(std::size_t width, std::size_t heads, Rng& rng) {
  n_heads = heads;
  wq.init(width, width, rng);
  wk.init(width, width, rng);
  wv.init(width, width, rng);
  wo.init(width, width, rng, /*zero_init=*/true);
}

Var CrossAttention::forward(Tape& t, Var q_in, Var enc) {
  Var q = wq.forward(t, q_in);
  Var k = wk.forward(t, enc);
  Var v = wv.forward(t, enc);
  Var attn = multihead_sdpa_op(t, q, k, v, n_heads);
  return wo.forward(t, attn);
}

void CrossAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  wq.visit(prefix + ".wq", fn);
  wk.visit(prefix + ".wk", fn);
  wv.visit(prefix + ".wv", fn);
  wo.visit(prefix + ".wo", fn);
}

Tensor cross_attention_forward(const Tensor& q_in, const Tensor& enc, CrossAttention& ca) {
  Tape tape;
  Var q = tape.input(q_in);
  Var e = tape.input(enc);
  Var out = ca.forward(tape, q, e);
  return tape.value(out);
}

}  // namespace blocks
