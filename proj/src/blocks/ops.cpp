#include "blocks/ops.hpp"

#include <cmath>
#include <memory>

namespace blocks {

using numerics::ContractError;
using numerics::require_finite;
using numerics::ShapeError;

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows expects a matrix");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* in = x.data() + i * cols;
    double* o = out.data() + i * cols;
    double m = in[0];
    for (std::size_t j = 1; j < cols; ++j) m = std::max(m, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) o[j] *= inv;
  }
  return out;
}

Tensor causal_conv1d(const Tensor& u, const Tensor& w, const Tensor& bias) {
  if (u.rank() != 2 || w.rank() != 2 || u.extent(1) != w.extent(1) ||
      bias.numel() != u.extent(1)) {
    throw ShapeError("causal_conv1d: u " + numerics::shape_str(u.shape()) + ", w " +
                     numerics::shape_str(w.shape()));
  }
  const std::size_t len = u.extent(0), ch = u.extent(1), k = w.extent(0);
  if (k < 1) throw ContractError("causal_conv1d: kernel width must be >= 1");
  Tensor out({len, ch});
  for (std::size_t t = 0; t < len; ++t) {
    double* o = out.data() + t * ch;
    for (std::size_t c = 0; c < ch; ++c) o[c] = bias[c];
    const std::size_t kmax = std::min(k, t + 1);
    for (std::size_t j = 0; j < kmax; ++j) {
      const double* wr = w.data() + j * ch;
      const double* ur = u.data() + (t - j) * ch;
      for (std::size_t c = 0; c < ch; ++c) o[c] += wr[c] * ur[c];
    }
  }
  return out;
}

Var layer_norm_op(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor& in = t.value(x);
  if (in.rank() != 2) throw ShapeError("layer_norm expects a matrix");
  const std::size_t rows = in.extent(0), cols = in.extent(1);
  const Tensor& g = t.value(gamma);
  const Tensor& b = t.value(beta);
  if (g.numel() != cols || b.numel() != cols) {
    throw ShapeError("layer_norm: parameter width mismatch");
  }
  // save normalized activations and inverse stddev for the backward pass
  auto xhat = std::make_shared<Tensor>(in.shape());
  auto inv_std = std::make_shared<Tensor>(Tensor({rows}));
  Tensor out(in.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = in.data() + i * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    double* xh = xhat->data() + i * cols;
    double* o = out.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      xh[j] = (row[j] - mean) * is;
      o[j] = g[j] * xh[j] + b[j];
    }
  }
  require_finite(out, "layer_norm");
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std](Tape& tp, const Tensor& up) {
                  const std::size_t rows = up.extent(0), cols = up.extent(1);
                  const Tensor& g = tp.value(gamma);
                  if (tp.needs_grad(gamma)) {
                    Tensor dg({cols});
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < cols; ++j) {
                        dg[j] += up[i * cols + j] * (*xhat)[i * cols + j];
                      }
                    }
                    tp.accumulate_grad(gamma, std::move(dg));
                  }
                  if (tp.needs_grad(beta)) {
                    Tensor db({cols});
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < cols; ++j) db[j] += up[i * cols + j];
                    }
                    tp.accumulate_grad(beta, std::move(db));
                  }
                  if (tp.needs_grad(x)) {
                    Tensor dx({rows, cols});
                    const double n = static_cast<double>(cols);
                    for (std::size_t i = 0; i < rows; ++i) {
                      const double* xh = xhat->data() + i * cols;
                      const double is = (*inv_std)[i];
                      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) {
                        const double dxh = up[i * cols + j] * g[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                      }
                      for (std::size_t j = 0; j < cols; ++j) {
                        const double dxh = up[i * cols + j] * g[j];
                        dx[i * cols + j] =
                            is * (dxh - sum_dxh / n - xh[j] * (sum_dxh_xh / n));
                      }
                    }
                    tp.accumulate_grad(x, std::move(dx));
                  }
                });
}

Var causal_conv1d_op(Tape& t, Var u, Var w, Var bias) {
  Tensor out = causal_conv1d(t.value(u), t.value(w), t.value(bias));
  require_finite(out, "causal_conv1d");
  return t.push(std::move(out), {u, w, bias}, [u, w, bias](Tape& tp, const Tensor& up) {
    const Tensor& uval = tp.value(u);
    const Tensor& wval = tp.value(w);
    const std::size_t len = uval.extent(0), ch = uval.extent(1), k = wval.extent(0);
    if (tp.needs_grad(u)) {
      // du[t,c] = sum_j w[j,c] * up[t+j,c]
      Tensor du(uval.shape());
      for (std::size_t t0 = 0; t0 < len; ++t0) {
        double* d = du.data() + t0 * ch;
        const std::size_t jmax = std::min(k, len - t0);
        for (std::size_t j = 0; j < jmax; ++j) {
          const double* wr = wval.data() + j * ch;
          const double* ur = up.data() + (t0 + j) * ch;
          for (std::size_t c = 0; c < ch; ++c) d[c] += wr[c] * ur[c];
        }
      }
      tp.accumulate_grad(u, std::move(du));
    }
    if (tp.needs_grad(w)) {
      Tensor dw(wval.shape());
      for (std::size_t j = 0; j < k; ++j) {
        double* d = dw.data() + j * ch;
        for (std::size_t t0 = j; t0 < len; ++t0) {
          const double* ur = uval.data() + (t0 - j) * ch;
          const double* gr = up.data() + t0 * ch;
          for (std::size_t c = 0; c < ch; ++c) d[c] += gr[c] * ur[c];
        }
      }
      tp.accumulate_grad(w, std::move(dw));
    }
    if (tp.needs_grad(bias)) {
      Tensor db({ch});
      for (std::size_t t0 = 0; t0 < len; ++t0) {
        const double* gr = up.data() + t0 * ch;
        for (std::size_t c = 0; c < ch; ++c) db[c] += gr[c];
      }
      tp.accumulate_grad(bias, std::move(db));
    }
  });
}

Var dropout_op(Tape& t, Var x, double p, RunMode mode, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (mode == RunMode::eval || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: training mode needs an rng");
  const Tensor& in = t.value(x);
  auto mask = std::make_shared<Tensor>(in.shape());
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < in.numel(); ++i) {
    (*mask)[i] = rng->bernoulli(p) ? 0.0 : scale;
  }
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] * (*mask)[i];
  return t.push(std::move(out), {x}, [x, mask](Tape& tp, const Tensor& up) {
    Tensor g(up.shape());
    for (std::size_t i = 0; i < up.numel(); ++i) g[i] = up[i] * (*mask)[i];
    tp.accumulate_grad(x, std::move(g));
  });
}

Var embedding_op(Tape& t, Var table, const std::vector<int>& ids) {
  const Tensor& tb = t.value(table);
  if (tb.rank() != 2) throw ShapeError("embedding table must be vocab x width");
  const std::size_t vocab = tb.extent(0), width = tb.extent(1);
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ContractError("embedding: token id " + std::to_string(id) +
                          " outside vocab of " + std::to_string(vocab));
    }
    std::copy_n(tb.data() + static_cast<std::size_t>(id) * width, width,
                out.data() + i * width);
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return t.push(std::move(out), {table}, [table, ids_copy](Tape& tp, const Tensor& up) {
    const Tensor& tb = tp.value(table);
    const std::size_t width = tb.extent(1);
    Tensor dt(tb.shape());
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      const std::size_t id = static_cast<std::size_t>((*ids_copy)[i]);
      double* row = dt.data() + id * width;
      const double* g = up.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) row[j] += g[j];
    }
    tp.accumulate_grad(table, std::move(dt));
  });
}

Var cross_entropy_mean_op(Tape& t, Var logits, const std::vector<int>& targets) {
  const Tensor& lg = t.value(logits);
  if (lg.rank() != 2 || lg.extent(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + numerics::shape_str(lg.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = lg.extent(0), cols = lg.extent(1);
  auto probs = std::make_shared<Tensor>(softmax_rows(lg));
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int tgt = targets[i];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= cols) {
      throw ContractError("cross_entropy: target " + std::to_string(tgt) +
                          " outside class count " + std::to_string(cols));
    }
    total -= std::log(std::max((*probs)[i * cols + tgt], 1e-300));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(rows));
  require_finite(out, "cross_entropy");
  auto tgts = std::make_shared<std::vector<int>>(targets);
  return t.push(std::move(out), {logits}, [logits, probs, tgts](Tape& tp, const Tensor& up) {
    const std::size_t rows = probs->extent(0), cols = probs->extent(1);
    const double scale = up[0] / static_cast<double>(rows);
    Tensor dl(probs->shape());
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t tgt = static_cast<std::size_t>((*tgts)[i]);
      for (std::size_t j = 0; j < cols; ++j) {
        dl[i * cols + j] = scale * ((*probs)[i * cols + j] - (j == tgt ? 1.0 : 0.0));
      }
    }
    tp.accumulate_grad(logits, std::move(dl));
  });
}

void LayerNorm::init(std::size_t width) {
  gamma.reset(Tensor::full({width}, 1.0));
  beta.reset(Tensor({width}));
}

Var LayerNorm::forward(Tape& t, Var x) {
  return layer_norm_op(t, x, t.leaf(gamma), t.leaf(beta), eps);
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

void Linear::init(std::size_t out, std::size_t in, Rng& rng, bool zero_init,
                  bool with_bias) {
  Tensor wt({out, in});
  if (!zero_init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : wt.values()) v = rng.uniform(-bound, bound);
  }
  w.reset(std::move(wt));
  has_bias = with_bias;
  if (with_bias) bias.reset(Tensor({out}));
}

Var Linear::forward(Tape& t, Var x) {
  Var y = t.matmul_bt(x, t.leaf(w));
  if (has_bias) y = t.add_row_broadcast(y, t.leaf(bias));
  return y;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  if (has_bias) fn(prefix + ".bias", bias);
}

void CausalConv1d::init(std::size_t k, std::size_t channels, Rng& rng) {
  Tensor wt({k, channels});
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  for (auto& v : wt.values()) v = rng.uniform(-bound, bound);
  w.reset(std::move(wt));
  bias.reset(Tensor({channels}));
}

Var CausalConv1d::forward(Tape& t, Var u) {
  return causal_conv1d_op(t, u, t.leaf(w), t.leaf(bias));
}

void CausalConv1d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  fn(prefix + ".bias", bias);
}

void Embedding::init(std::size_t vocab, std::size_t width, Rng& rng) {
  Tensor tb({vocab, width});
  for (auto& v : tb.values()) v = rng.normal(0.0, 0.02);
  table.reset(std::move(tb));
}

Var Embedding::forward(Tape& t, const std::vector<int>& ids) {
  return embedding_op(t, t.leaf(table), ids);
}

void Embedding::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".table", table);
}

}  // namespace blocks
