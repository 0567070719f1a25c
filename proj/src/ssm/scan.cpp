#include "ssm/scan.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "numerics/parallel.hpp"

namespace ssm {

using numerics::ContractError;
using numerics::require_same_shape;
using numerics::ShapeError;

ScanElement scan_identity(std::size_t n) {
  return {std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
}

ScanElement scan_combine(const ScanElement& e1, const ScanElement& e2) {
  if (e1.decay.size() != e2.decay.size() || e1.load.size() != e1.decay.size() ||
      e2.load.size() != e2.decay.size()) {
    throw ShapeError("scan_combine: element sizes differ");
  }
  const std::size_t n = e1.decay.size();
  ScanElement out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.decay[i] = e1.decay[i] * e2.decay[i];
    out.load[i] = e2.decay[i] * e1.load[i] + e2.load[i];
  }
  return out;
}

namespace detail {

namespace {

// rhs := lhs ∘ rhs (lhs earlier in time), lane arrays of length `lanes`.
inline void combine_into_right(const double* lhs_decay, const double* lhs_load,
                               double* rhs_decay, double* rhs_load, std::size_t lanes) {
  for (std::size_t i = 0; i < lanes; ++i) {
    rhs_load[i] = rhs_decay[i] * lhs_load[i] + rhs_load[i];
    rhs_decay[i] = lhs_decay[i] * rhs_decay[i];
  }
}

std::size_t next_pow2(std::size_t v) { return std::bit_ceil(v); }

struct ChunkScratch {
  std::vector<double> decay, load;
  void resize(std::size_t n) {
    decay.assign(n, 1.0);
    load.assign(n, 0.0);
  }
};

// Blelloch sweep over one chunk. On entry, work points at the chunk's
// elements (n_valid of them, lane-major rows). On exit the chunk holds its
// inclusive scan and `total` holds the chunk's full composition.
void blelloch_chunk(double* work_decay, double* work_load, std::size_t n_valid,
                    std::size_t lanes, ChunkScratch& scratch, double* total_decay,
                    double* total_load) {
  const std::size_t width = next_pow2(std::max<std::size_t>(n_valid, 1));
  scratch.resize(width * lanes);
  double* sd = scratch.decay.data();
  double* sl = scratch.load.data();
  std::memcpy(sd, work_decay, n_valid * lanes * sizeof(double));
  std::memcpy(sl, work_load, n_valid * lanes * sizeof(double));
  // positions >= n_valid stay identity (1, 0) from resize

  // up-sweep: right node absorbs its left sibling
  for (std::size_t step = 1; step < width; step <<= 1) {
    for (std::size_t i = 2 * step - 1; i < width; i += 2 * step) {
      combine_into_right(sd + (i - step) * lanes, sl + (i - step) * lanes, sd + i * lanes,
                         sl + i * lanes, lanes);
    }
  }
  std::memcpy(total_decay, sd + (width - 1) * lanes, lanes * sizeof(double));
  std::memcpy(total_load, sl + (width - 1) * lanes, lanes * sizeof(double));

  // down-sweep: root takes identity, producing exclusive prefixes
  std::fill(sd + (width - 1) * lanes, sd + width * lanes, 1.0);
  std::fill(sl + (width - 1) * lanes, sl + width * lanes, 0.0);
  for (std::size_t step = width >> 1; step >= 1; step >>= 1) {
    for (std::size_t i = 2 * step - 1; i < width; i += 2 * step) {
      double* left_d = sd + (i - step) * lanes;
      double* left_l = sl + (i - step) * lanes;
      double* right_d = sd + i * lanes;
      double* right_l = sl + i * lanes;
      for (std::size_t k = 0; k < lanes; ++k) {
        const double td = left_d[k];
        const double tl = left_l[k];
        // left child inherits the parent's prefix; right child gets
        // prefix ∘ left-subtree-sum
        left_d[k] = right_d[k];
        left_l[k] = right_l[k];
        right_l[k] = td * right_l[k] + tl;
        right_d[k] = right_d[k] * td;
      }
    }
  }

  // inclusive[i] = exclusive[i] ∘ element[i], written back over the input
  for (std::size_t i = 0; i < n_valid; ++i) {
    combine_into_right(sd + i * lanes, sl + i * lanes, work_decay + i * lanes,
                       work_load + i * lanes, lanes);
  }
}

}  // namespace

void scan_compose_sequential(std::size_t len, std::size_t lanes, double* decay,
                             double* load) {
  for (std::size_t t = 1; t < len; ++t) {
    double* d = decay + t * lanes;
    double* l = load + t * lanes;
    const double* pd = decay + (t - 1) * lanes;
    const double* pl = load + (t - 1) * lanes;
    for (std::size_t k = 0; k < lanes; ++k) {
      l[k] = d[k] * pl[k] + l[k];
      d[k] = pd[k] * d[k];
    }
  }
}

void scan_compose_blelloch(std::size_t len, std::size_t lanes, double* decay,
                           double* load, std::size_t chunk, std::size_t threads) {
  if (chunk == 0) throw ContractError("scan: chunk size must be >= 1");
  if (len == 0) return;
  const std::size_t n_chunks = (len + chunk - 1) / chunk;
  std::vector<double> totals_decay(n_chunks * lanes);
  std::vector<double> totals_load(n_chunks * lanes);

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n_chunks));
  std::vector<ChunkScratch> scratch(workers);

  numerics::parallel_for(
      n_chunks, workers, [&](std::size_t c0, std::size_t c1, std::size_t w) {
        for (std::size_t c = c0; c < c1; ++c) {
          const std::size_t begin = c * chunk;
          const std::size_t n_valid = std::min(chunk, len - begin);
          blelloch_chunk(decay + begin * lanes, load + begin * lanes, n_valid, lanes,
                         scratch[w], totals_decay.data() + c * lanes,
                         totals_load.data() + c * lanes);
        }
      });

  if (n_chunks == 1) return;

  // sequential fix-up: exclusive prefixes over chunk totals, in place
  // (totals[c] becomes the composition of chunks 0..c-1)
  std::vector<double> carry_decay(lanes, 1.0), carry_load(lanes, 0.0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    double* td = totals_decay.data() + c * lanes;
    double* tl = totals_load.data() + c * lanes;
    for (std::size_t k = 0; k < lanes; ++k) {
      const double nd = carry_decay[k] * td[k];
      const double nl = td[k] * carry_load[k] + tl[k];
      td[k] = carry_decay[k];
      tl[k] = carry_load[k];
      carry_decay[k] = nd;
      carry_load[k] = nl;
    }
  }

  numerics::parallel_for(
      n_chunks - 1, workers, [&](std::size_t c0, std::size_t c1, std::size_t) {
        for (std::size_t ci = c0; ci < c1; ++ci) {
          const std::size_t c = ci + 1;  // chunk 0 keeps its identity prefix
          const std::size_t begin = c * chunk;
          const std::size_t n_valid = std::min(chunk, len - begin);
          const double* pd = totals_decay.data() + c * lanes;
          const double* pl = totals_load.data() + c * lanes;
          for (std::size_t i = 0; i < n_valid; ++i) {
            combine_into_right(pd, pl, decay + (begin + i) * lanes,
                               load + (begin + i) * lanes, lanes);
          }
        }
      });
}

}  // namespace detail

namespace {
void check_recurrence_args(const Tensor& abar, const Tensor& bbar_x) {
  if (abar.rank() != 2) {
    throw ShapeError("recurrence: abar must be L x N, got " + numerics::shape_str(abar.shape()));
  }
  require_same_shape(abar, bbar_x, "recurrence");
}
}  // namespace

Tensor recurrence_sequential(const Tensor& abar, const Tensor& bbar_x) {
  check_recurrence_args(abar, bbar_x);
  const std::size_t len = abar.extent(0), lanes = abar.extent(1);
  Tensor h(abar.shape());
  const double* a = abar.data();
  const double* u = bbar_x.data();
  double* hp = h.data();
  for (std::size_t k = 0; k < lanes; ++k) hp[k] = u[k];
  for (std::size_t t = 1; t < len; ++t) {
    const double* at = a + t * lanes;
    const double* ut = u + t * lanes;
    const double* prev = hp + (t - 1) * lanes;
    double* cur = hp + t * lanes;
    for (std::size_t k = 0; k < lanes; ++k) cur[k] = at[k] * prev[k] + ut[k];
  }
  return h;
}

Tensor recurrence_parallel(const Tensor& abar, const Tensor& bbar_x, std::size_t chunk,
                           std::size_t threads) {
  check_recurrence_args(abar, bbar_x);
  if (chunk == 0) throw ContractError("recurrence_parallel: chunk size must be >= 1");
  const std::size_t len = abar.extent(0), lanes = abar.extent(1);
  Tensor decay = abar;
  Tensor h = bbar_x;
  detail::scan_compose_blelloch(len, lanes, decay.data(), h.data(), chunk, threads);
  return h;
}

}  // namespace ssm
