#pragma once

#include "blocks/ops.hpp"

namespace blocks {

// Multi-head scaled dot-product over precomputed projections. No positional
// encoding anywhere; position information comes from the SSM path.
Var multihead_sdpa_op(Tape& t, Var q, Var k, Var v, std::size_t n_heads);

struct CrossAttention {
  std::size_t n_heads = 4;
  Linear wq, wk, wv, wo;  // all width x width, wo zero-initialized

  void init(std::size_t width, std::size_t heads, Rng& rng);
  // q_in: L_q x D queries, enc: L_k x D encoder states.
  Var forward(Tape& t, Var q_in, Var enc);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Untraced convenience used by tests and probes.
Tensor cross_attention_forward(const Tensor& q_in, const Tensor& enc, CrossAttention& ca);

}  // namespace blocks
