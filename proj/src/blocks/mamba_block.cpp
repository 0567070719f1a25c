#include "blocks/mamba_block.hpp"

namespace blocks {

using numerics::ContractError;
using numerics::NumericError;
using numerics::ShapeError;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::unidirectional: return "unidirectional";
    case Variant::bidirectional: return "bidirectional";
    case Variant::decoder: return "decoder";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "unidirectional") return Variant::unidirectional;
  if (name == "bidirectional") return Variant::bidirectional;
  if (name == "decoder") return Variant::decoder;
  throw ContractError("unknown block variant '" + name + "'");
}

void BlockConfig::validate() const {
  if (expand < 1) throw ContractError("BlockConfig: expand must be >= 1");
  if (d_in == 0 || n_state == 0) throw ContractError("BlockConfig: zero width");
  if (conv_width < 1) throw ContractError("BlockConfig: conv_width must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw ContractError("BlockConfig: dropout_p must lie in [0, 1)");
  }
  if (variant == Variant::decoder && (n_heads == 0 || d_in % n_heads != 0)) {
    throw ContractError("BlockConfig: d_in must be divisible by n_heads");
  }
}

void SsmLayer::init(std::size_t n_state, std::size_t width, bool sel,
                    const ssm::ScanExec& ex, Rng& rng) {
  selective = sel;
  exec = ex;
  ssm::SsmParams p = ssm::make_ssm_params(n_state, width, sel, rng);
  a_diag.reset(std::move(p.a_diag));
  delta_bias.reset(std::move(p.delta_bias));
  if (sel) {
    w_b.reset(std::move(p.w_b));
    w_c.reset(std::move(p.w_c));
    w_delta.reset(std::move(p.w_delta));
  } else {
    b_fixed.reset(std::move(p.b_fixed));
    c_fixed.reset(std::move(p.c_fixed));
  }
  width_hint_ = width;
}

ssm::SsmParams SsmLayer::snapshot() const {
  ssm::SsmParams p;
  p.a_diag = a_diag.value;
  p.delta_bias = delta_bias.value;
  p.selective = selective;
  p.width_hint = width_hint_;
  if (selective) {
    p.w_b = w_b.value;
    p.w_c = w_c.value;
    p.w_delta = w_delta.value;
  } else {
    p.b_fixed = b_fixed.value;
    p.c_fixed = c_fixed.value;
  }
  return p;
}

Var SsmLayer::forward(Tape& t, Var x) {
  ssm::SsmLeafVars lv;
  lv.a_diag = t.leaf(a_diag);
  lv.delta_bias = t.leaf(delta_bias);
  if (selective) {
    lv.w_b = t.leaf(w_b);
    lv.w_c = t.leaf(w_c);
    lv.w_delta = t.leaf(w_delta);
  } else {
    lv.b_fixed = t.leaf(b_fixed);
    lv.c_fixed = t.leaf(c_fixed);
  }
  return ssm::apply_ssm(t, x, snapshot(), lv, exec);
}

void SsmLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".a_diag", a_diag);
  fn(prefix + ".delta_bias", delta_bias);
  if (selective) {
    fn(prefix + ".w_b", w_b);
    fn(prefix + ".w_c", w_c);
    fn(prefix + ".w_delta", w_delta);
  } else {
    fn(prefix + ".b_fixed", b_fixed);
    fn(prefix + ".c_fixed", c_fixed);
  }
}

void MambaBlock::init(const BlockConfig& c, Rng& rng) {
  c.validate();
  cfg = c;
  const std::size_t inner = c.inner_width();
  norm.init(c.d_in);
  in_proj.init(2 * inner, c.d_in, rng);
  conv.init(c.conv_width, inner, rng);
  ssm.init(c.n_state, inner, c.selective, c.scan, rng);
  out_proj.init(c.d_in, inner, rng, /*zero_init=*/true);
}

Var MambaBlock::forward_inner(Tape& t, Var x, RunMode mode, Rng* drop_rng) {
  const std::size_t inner = cfg.inner_width();
  Var normed = norm.forward(t, x);
  Var proj = dropout_op(t, in_proj.forward(t, normed), cfg.dropout_p, mode, drop_rng);
  Var u = t.slice_cols(proj, 0, inner);
  Var z = t.slice_cols(proj, inner, 2 * inner);
  Var conved = t.silu(conv.forward(t, u));
  Var s = ssm.forward(t, conved);
  Var gated = t.mul(s, t.silu(z));
  return out_proj.forward(t, dropout_op(t, gated, cfg.dropout_p, mode, drop_rng));
}

Var MambaBlock::forward(Tape& t, Var x, RunMode mode, Rng* drop_rng) {
  return t.add(x, forward_inner(t, x, mode, drop_rng));
}

Tensor MambaBlock::apply(const Tensor& x) {
  Tape tape;
  Var out = forward(tape, tape.input(x), RunMode::eval, nullptr);
  return tape.value(out);
}

void MambaBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm.visit(prefix + ".norm", fn);
  in_proj.visit(prefix + ".in_proj", fn);
  conv.visit(prefix + ".conv", fn);
  ssm.visit(prefix + ".ssm", fn);
  out_proj.visit(prefix + ".out_proj", fn);
}

void BiMambaLayer::init(const BlockConfig& c, Rng& rng) {
  fwd.init(c, rng);
  bwd.init(c, rng);
}

Var BiMambaLayer::forward(Tape& t, Var x, RunMode mode, Rng* drop_rng) {
  Var f = fwd.forward_inner(t, x, mode, drop_rng);
  Var xr = t.reverse_rows(x);
  Var r = t.reverse_rows(bwd.forward_inner(t, xr, mode, drop_rng));
  return t.add(x, t.add(f, r));
}

void BiMambaLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fwd.visit(prefix + ".fwd", fn);
  bwd.visit(prefix + ".bwd", fn);
}

void DecoderBlock::init(const BlockConfig& c, Rng& rng) {
  BlockConfig mc = c;
  mc.variant = Variant::decoder;
  mc.validate();
  mamba.init(mc, rng);
  ca_norm.init(c.d_in);
  ca.init(c.d_in, c.n_heads, rng);
  dropout_p = c.dropout_p;
}

Var DecoderBlock::forward(Tape& t, Var y, Var enc, RunMode mode, Rng* drop_rng) {
  Var z = mamba.forward(t, y, mode, drop_rng);
  Var attn = ca.forward(t, ca_norm.forward(t, z), enc);
  return t.add(z, dropout_op(t, attn, dropout_p, mode, drop_rng));
}

void DecoderBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  mamba.visit(prefix + ".mamba", fn);
  ca_norm.visit(prefix + ".ca_norm", fn);
  ca.visit(prefix + ".ca", fn);
}

Tensor mamba_block_forward(const Tensor& x, MambaBlock& blk) {
  try {
    return blk.apply(x);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (in mamba block)");
  }
}

Tensor bimamba_encoder_forward(const Tensor& x, MambaBlock& fwd, MambaBlock& bwd) {
  Tape tape;
  Var xv = tape.input(x);
  Var f = fwd.forward_inner(tape, xv, RunMode::eval, nullptr);
  Var xr = tape.reverse_rows(xv);
  Var r = tape.reverse_rows(bwd.forward_inner(tape, xr, RunMode::eval, nullptr));
  Var out = tape.add(xv, tape.add(f, r));
  return tape.value(out);
}

Tensor decoder_block_forward(const Tensor& y_in, const Tensor& enc, DecoderBlock& blk) {
  Tape tape;
  Var out = blk.forward(tape, tape.input(y_in), tape.input(enc), RunMode::eval, nullptr);
  return tape.value(out);
}

}  // namespace blocks
