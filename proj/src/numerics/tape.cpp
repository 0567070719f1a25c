#include "numerics/tape.hpp"

#include <cmath>

namespace numerics {

void Tape::check(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("tape: invalid var handle");
  }
}

int Tape::push_node(Tensor value, bool needs_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::any_needs_grad(std::initializer_list<Var> inputs) const {
  for (Var v : inputs) {
    check(v);
    if (nodes_[v.id].needs_grad) return true;
  }
  return false;
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool ng = false;
  for (Var v : inputs) {
    if (!v.valid()) continue;
    check(v);
    ng = ng || nodes_[v.id].needs_grad;
  }
  return {push_node(std::move(value), ng, ng ? std::move(fn) : nullptr)};
}

Var Tape::input(Tensor value, bool needs_grad) {
  return {push_node(std::move(value), needs_grad, nullptr)};
}

Var Tape::leaf(Param& p) {
  for (const auto& [param, var] : leaves_) {
    if (param == &p) return var;
  }
  Var v{push_node(p.value, true, nullptr)};
  leaves_.emplace_back(&p, v);
  return v;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  const bool ng = any_needs_grad(inputs);
  return {push_node(std::move(value), ng, ng ? std::move(fn) : nullptr)};
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const Tensor& Tape::grad(Var v) const {
  check(v);
  if (grads_.size() != nodes_.size()) {
    throw ContractError("tape: grad read before backward");
  }
  return grads_[v.id].numel() > 0 ? grads_[v.id] : empty_;
}

bool Tape::has_grad(Var v) const {
  check(v);
  return grads_.size() == nodes_.size() && grads_[v.id].numel() > 0;
}

bool Tape::needs_grad(Var v) const {
  check(v);
  return nodes_[v.id].needs_grad;
}

void Tape::accumulate_grad(Var v, Tensor&& g) {
  check(v);
  if (!nodes_[v.id].needs_grad) return;
  require_same_shape(nodes_[v.id].value, g, "accumulate_grad");
  if (grads_[v.id].numel() == 0) {
    grads_[v.id] = std::move(g);
  } else {
    grads_[v.id].add_(g);
  }
}

void Tape::accumulate_grad(Var v, const Tensor& g) {
  check(v);
  if (!nodes_[v.id].needs_grad) return;
  require_same_shape(nodes_[v.id].value, g, "accumulate_grad");
  if (grads_[v.id].numel() == 0) {
    grads_[v.id] = g;
  } else {
    grads_[v.id].add_(g);
  }
}

void Tape::backward(Var loss) {
  check(loss);
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(nodes_[loss.id].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id] = Tensor(nodes_[loss.id].value.shape(), {1.0});
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || grads_[id].numel() == 0) continue;
    if (n.backward) n.backward(*this, grads_[id]);
  }
}

void Tape::flush_param_grads() {
  for (const auto& [param, var] : leaves_) {
    if (has_grad(var)) param->grad.add_(grad(var));
  }
}

// --- primitive ops ---

Var Tape::matmul(Var a, Var b) {
  Tensor out = numerics::matmul(value(a), value(b));
  return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& up) {
    if (t.needs_grad(a)) {
      Tensor da;
      matmul_abt_into(da, up, t.value(b));
      t.accumulate_grad(a, std::move(da));
    }
    if (t.needs_grad(b)) {
      Tensor db;
      matmul_atb_into(db, t.value(a), up);
      t.accumulate_grad(b, std::move(db));
    }
  });
}

Var Tape::matmul_bt(Var a, Var b) {
  Tensor out;
  matmul_abt_into(out, value(a), value(b));
  require_finite(out, "matmul_bt");
  return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& up) {
    if (t.needs_grad(a)) {
      Tensor da;
      matmul_into(da, up, t.value(b));
      t.accumulate_grad(a, std::move(da));
    }
    if (t.needs_grad(b)) {
      Tensor db;
      matmul_atb_into(db, up, t.value(a));
      t.accumulate_grad(b, std::move(db));
    }
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  out.add_(value(b));
  return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& up) {
    t.accumulate_grad(a, up);
    t.accumulate_grad(b, up);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const double* bp = value(b).data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bp[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& up) {
    t.accumulate_grad(a, up);
    if (t.needs_grad(b)) {
      Tensor g = up;
      g.scale_(-1.0);
      t.accumulate_grad(b, std::move(g));
    }
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const double* bp = value(b).data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bp[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& up) {
    if (t.needs_grad(a)) {
      Tensor g = up;
      const double* o = t.value(b).data();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= o[i];
      t.accumulate_grad(a, std::move(g));
    }
    if (t.needs_grad(b)) {
      Tensor g = up;
      const double* o = t.value(a).data();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= o[i];
      t.accumulate_grad(b, std::move(g));
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  out.scale_(s);
  return push(std::move(out), {a}, [a, s](Tape& t, const Tensor& up) {
    Tensor g = up;
    g.scale_(s);
    t.accumulate_grad(a, std::move(g));
  });
}

Var Tape::add_row_broadcast(Var m, Var rowv) {
  const Tensor& mat = value(m);
  const Tensor& r = value(rowv);
  if (mat.rank() != 2 || r.rank() != 1 || mat.extent(1) != r.extent(0)) {
    throw ShapeError("add_row_broadcast: " + shape_str(mat.shape()) + " vs " +
                     shape_str(r.shape()));
  }
  Tensor out = mat;
  const std::size_t rows = mat.extent(0), cols = mat.extent(1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += r[j];
  }
  return push(std::move(out), {m, rowv}, [m, rowv](Tape& t, const Tensor& up) {
    t.accumulate_grad(m, up);
    if (t.needs_grad(rowv)) {
      const std::size_t rows = up.extent(0), cols = up.extent(1);
      Tensor g({cols});
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) g[j] += up[i * cols + j];
      }
      t.accumulate_grad(rowv, std::move(g));
    }
  });
}

Var Tape::softplus(Var x) {
  Tensor out = numerics::softplus(value(x));
  return push(std::move(out), {x}, [x](Tape& t, const Tensor& up) {
    Tensor g = up;
    const double* in = t.value(x).data();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= sigmoid(in[i]);
    t.accumulate_grad(x, std::move(g));
  });
}

Var Tape::silu(Var x) {
  Tensor out(value(x).shape());
  const double* in = value(x).data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = numerics::silu(in[i]);
  require_finite(out, "silu");
  return push(std::move(out), {x}, [x](Tape& t, const Tensor& up) {
    Tensor g = up;
    const double* in = t.value(x).data();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double s = sigmoid(in[i]);
      g[i] *= s * (1.0 + in[i] * (1.0 - s));
    }
    t.accumulate_grad(x, std::move(g));
  });
}

Var Tape::sum(Var x) {
  Tensor out = Tensor::scalar(value(x).sum());
  return push(std::move(out), {x}, [x](Tape& t, const Tensor& up) {
    t.accumulate_grad(x, Tensor::full(t.value(x).shape(), up[0]));
  });
}

Var Tape::mean(Var x) {
  const double n = static_cast<double>(value(x).numel());
  Tensor out = Tensor::scalar(value(x).sum() / n);
  return push(std::move(out), {x}, [x, n](Tape& t, const Tensor& up) {
    t.accumulate_grad(x, Tensor::full(t.value(x).shape(), up[0] / n));
  });
}

Var Tape::slice_cols(Var x, std::size_t c0, std::size_t c1) {
  const Tensor& in = value(x);
  if (in.rank() != 2 || c0 >= c1 || c1 > in.extent(1)) {
    throw ShapeError("slice_cols[" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") on " + shape_str(in.shape()));
  }
  const std::size_t rows = in.extent(0), cols = in.extent(1), w = c1 - c0;
  Tensor out({rows, w});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = in[i * cols + c0 + j];
  }
  return push(std::move(out), {x}, [x, c0, w](Tape& t, const Tensor& up) {
    const Tensor& in = t.value(x);
    const std::size_t rows = in.extent(0), cols = in.extent(1);
    Tensor g(in.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * cols + c0 + j] = up[i * w + j];
    }
    t.accumulate_grad(x, std::move(g));
  });
}

Var Tape::row(Var x, std::size_t r) {
  const Tensor& in = value(x);
  if (in.rank() != 2 || r >= in.extent(0)) {
    throw ShapeError("row(" + std::to_string(r) + ") on " + shape_str(in.shape()));
  }
  const std::size_t cols = in.extent(1);
  Tensor out({1, cols}, std::span<const double>(in.data() + r * cols, cols));
  return push(std::move(out), {x}, [x, r](Tape& t, const Tensor& up) {
    const Tensor& in = t.value(x);
    const std::size_t cols = in.extent(1);
    Tensor g(in.shape());
    for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] = up[j];
    t.accumulate_grad(x, std::move(g));
  });
}

Var Tape::reshape(Var x, Shape shape) {
  const Tensor& in = value(x);
  Tensor out(shape, in.values());
  return push(std::move(out), {x}, [x](Tape& t, const Tensor& up) {
    t.accumulate_grad(x, Tensor(t.value(x).shape(), up.values()));
  });
}

Var Tape::reverse_rows(Var x) {
  const Tensor& in = value(x);
  if (in.rank() != 2) {
    throw ShapeError("reverse_rows on " + shape_str(in.shape()));
  }
  const std::size_t rows = in.extent(0), cols = in.extent(1);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* src = in.data() + (rows - 1 - i) * cols;
    double* dst = out.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] = src[j];
  }
  return push(std::move(out), {x}, [x](Tape& t, const Tensor& up) {
    const std::size_t rows = up.extent(0), cols = up.extent(1);
    Tensor g(up.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      const double* src = up.data() + (rows - 1 - i) * cols;
      double* dst = g.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] = src[j];
    }
    t.accumulate_grad(x, std::move(g));
  });
}

}  // namespace numerics
