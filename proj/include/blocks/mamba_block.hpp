#pragma once

#include "blocks/attention.hpp"
#include "blocks/ops.hpp"
#include "ssm/selective_ssm.hpp"

namespace blocks {

enum class Variant { unidirectional, bidirectional, decoder };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct BlockConfig {
  std::size_t d_in = 64;
  std::size_t n_state = 16;
  std::size_t expand = 4;
  std::size_t conv_width = 4;
  double dropout_p = 0.2;
  Variant variant = Variant::unidirectional;
  std::size_t n_heads = 4;  // decoder cross-attention only
  bool selective = true;
  ssm::ScanExec scan{};

  std::size_t inner_width() const { return expand * d_in; }
  void validate() const;
};

// Selection/state parameters held as trainable Params, mirrored into an
// ssm::SsmParams snapshot per forward call.
struct SsmLayer {
  Param a_diag, w_b, w_c, w_delta, delta_bias;
  Param b_fixed, c_fixed;  // fixed (non-selective) variant
  bool selective = true;
  ssm::ScanExec exec;

  void init(std::size_t n_state, std::size_t width, bool sel, const ssm::ScanExec& ex,
            Rng& rng);
  ssm::SsmParams snapshot() const;
  Var forward(Tape& t, Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  std::size_t width_hint_ = 0;
};

// Fig-1(a)-style block: pre-norm, input projection to two branches, causal
// conv + SSM on one, silu gate from the other, output projection back to
// d_in, residual around everything. out_proj starts at zero so a freshly
// initialized block is the identity map.
struct MambaBlock {
  BlockConfig cfg;
  LayerNorm norm;
  Linear in_proj;      // 2*E*d_in x d_in
  CausalConv1d conv;   // conv_width x E*d_in
  SsmLayer ssm;
  Linear out_proj;     // d_in x E*d_in

  void init(const BlockConfig& c, Rng& rng);
  // Branch output before the residual add.
  Var forward_inner(Tape& t, Var x, RunMode mode, Rng* drop_rng);
  Var forward(Tape& t, Var x, RunMode mode, Rng* drop_rng);
  Tensor apply(const Tensor& x);  // eval-mode convenience
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Bidirectional encoder layer: one block runs forward in time, the other on
// the reversed sequence; branch outputs are summed before a shared residual.
struct BiMambaLayer {
  MambaBlock fwd, bwd;

  void init(const BlockConfig& c, Rng& rng);
  Var forward(Tape& t, Var x, RunMode mode, Rng* drop_rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Decoder block: causal Mamba block, then a pre-normed cross-attention
// sublayer over the encoder output with its own residual.
struct DecoderBlock {
  MambaBlock mamba;
  LayerNorm ca_norm;
  CrossAttention ca;
  double dropout_p = 0.2;

  void init(const BlockConfig& c, Rng& rng);
  Var forward(Tape& t, Var y, Var enc, RunMode mode, Rng* drop_rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Untraced, eval-mode entry points.
Tensor mamba_block_forward(const Tensor& x, MambaBlock& blk);
Tensor bimamba_encoder_forward(const Tensor& x, MambaBlock& fwd, MambaBlock& bwd);
Tensor decoder_block_forward(const Tensor& y_in, const Tensor& enc, DecoderBlock& blk);

}  // namespace blocks
