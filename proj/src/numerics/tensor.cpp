#include "numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace numerics {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {
std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  if (values.size() != shape_numel(shape_)) {
    throw ShapeError("tensor init: " + shape_str(shape_) + " expects " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

std::size_t Tensor::extent(std::size_t dim) const {
  if (dim >= shape_.size()) {
    throw ShapeError("extent(" + std::to_string(dim) + ") on rank-" +
                     std::to_string(shape_.size()) + " tensor");
  }
  return shape_[dim];
}

double& Tensor::at(std::size_t i) { return data_[i]; }
double Tensor::at(std::size_t i) const { return data_[i]; }

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  require_same_shape(*this, other, "add_");
  const double* src = other.data();
  double* dst = data();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += src[i];
}

void Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

double Tensor::max_abs_diff(const Tensor& other) const {
  require_same_shape(*this, other, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    m = std::max(m, std::abs(data_[i] - other.data_[i]));
  }
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_finite(const Tensor& t, std::string_view op) {
  if (!t.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
}

namespace {
void check_matmul_shapes(const Tensor& a, const Tensor& b, std::size_t a_rows,
                         std::size_t a_cols, std::size_t b_rows, std::string_view what) {
  if (a.rank() != 2 || b.rank() != 2 || a_cols != b_rows) {
    throw ShapeError(std::string(what) + ": incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  (void)a_rows;
}

void prepare_out(Tensor& out, std::size_t rows, std::size_t cols, bool acc,
                 std::string_view what) {
  if (out.rank() != 2 || out.extent(0) != rows || out.extent(1) != cols) {
    if (acc) {
      throw ShapeError(std::string(what) + ": accumulation target has shape " +
                       shape_str(out.shape()));
    }
    out = Tensor({rows, cols});
  } else if (!acc) {
    out.fill(0.0);
  }
}
}  // namespace

void matmul_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc) {
  check_matmul_shapes(a, b, a.extent(0), a.extent(1), b.extent(0), "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  prepare_out(out, m, n, acc, "matmul");
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    const double* arow = ap + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = bp + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_abt_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1)) {
    throw ShapeError("matmul_abt: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  prepare_out(out, m, n, acc, "matmul_abt");
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = ap + i * k;
    double* crow = cp + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bp + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
      crow[j] += s;
    }
  }
}

void matmul_atb_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
    throw ShapeError("matmul_atb: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  prepare_out(out, m, n, acc, "matmul_atb");
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = out.data();
  for (std::size_t l = 0; l < k; ++l) {
    const double* arow = ap + l * m;
    const double* brow = bp + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out;
  matmul_into(out, a, b);
  require_finite(out, "matmul");
  return out;
}

double softplus(double x) {
  // Overflow-safe: max(x, 0) + log1p(exp(-|x|)).
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

Tensor softplus(const Tensor& x) {
  Tensor out(x.shape());
  const double* in = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = softplus(in[i]);
  require_finite(out, "softplus");
  return out;
}

}  // namespace numerics
