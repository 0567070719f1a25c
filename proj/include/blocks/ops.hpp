#pragma once

#include <functional>
#include <string>
#include <vector>

#include "numerics/rng.hpp"
#include "numerics/tape.hpp"

namespace blocks {

using numerics::Param;
using numerics::Rng;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class RunMode { train, eval };

using ParamVisitor = std::function<void(const std::string&, numerics::Param&)>;

// Row-wise softmax; rows sum to 1 within 1e-12.
Tensor softmax_rows(const Tensor& x);

// Depthwise causal convolution, zero-padded on the left:
// out[t,c] = sum_k w[k,c] * u[t-k,c] + bias[c].
Tensor causal_conv1d(const Tensor& u, const Tensor& w, const Tensor& bias);

// --- traced ops ---
Var layer_norm_op(Tape& t, Var x, Var gamma, Var beta, double eps);
Var causal_conv1d_op(Tape& t, Var u, Var w, Var bias);
// Inverted dropout: scales kept entries by 1/(1-p) during training, identity
// in eval mode.
Var dropout_op(Tape& t, Var x, double p, RunMode mode, Rng* rng);
Var embedding_op(Tape& t, Var table, const std::vector<int>& ids);
// Mean cross-entropy of logits rows against integer targets.
Var cross_entropy_mean_op(Tape& t, Var logits, const std::vector<int>& targets);

// --- parameterized building blocks ---
struct LayerNorm {
  Param gamma, beta;
  double eps = 1e-5;
  void init(std::size_t width);
  Var forward(Tape& t, Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Linear {
  Param w;     // out x in
  Param bias;  // {out} when has_bias
  bool has_bias = false;
  void init(std::size_t out, std::size_t in, Rng& rng, bool zero_init = false,
            bool with_bias = false);
  Var forward(Tape& t, Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct CausalConv1d {
  Param w;     // K x C
  Param bias;  // {C}
  void init(std::size_t k, std::size_t channels, Rng& rng);
  Var forward(Tape& t, Var u);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Embedding {
  Param table;  // vocab x width
  void init(std::size_t vocab, std::size_t width, Rng& rng);
  Var forward(Tape& t, const std::vector<int>& ids);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace blocks
