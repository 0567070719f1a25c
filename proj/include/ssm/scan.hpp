#pragma once

#include <cstddef>
#include <vector>

#include "numerics/tensor.hpp"

namespace ssm {

using numerics::Tensor;

// One step of the recurrence h_t = decay ⊙ h_{t-1} + load, viewed as an
// element of the associative composition monoid:
//   (e1 ∘ e2).decay = e1.decay ⊙ e2.decay
//   (e1 ∘ e2).load  = e2.decay ⊙ e1.load + e2.load
// where e1 acts earlier in time. Identity is (decay = 1, load = 0).
struct ScanElement {
  std::vector<double> decay;
  std::vector<double> load;
};

ScanElement scan_identity(std::size_t n);
ScanElement scan_combine(const ScanElement& e1, const ScanElement& e2);

// How the recurrence is evaluated. threads only affects the parallel path;
// results are deterministic for a fixed (parallel, chunk) pair.
struct ScanExec {
  bool parallel = true;
  std::size_t chunk = 64;
  std::size_t threads = 1;
};

// Plain-loop oracle: h_t = abar_t ⊙ h_{t-1} + bbar_x_t, h_0 = 0.
// abar, bbar_x: L x N. Returns h: L x N.
Tensor recurrence_sequential(const Tensor& abar, const Tensor& bbar_x);

// Same recurrence as an inclusive prefix scan of ScanElements: Blelloch
// up-sweep/down-sweep within chunks (padded to a power of two with identity
// elements, stripped on output), sequential fix-up across chunks. Matches
// recurrence_sequential within 1e-10 max-abs for L <= 4096.
Tensor recurrence_parallel(const Tensor& abar, const Tensor& bbar_x, std::size_t chunk,
                           std::size_t threads = 1);

namespace detail {

// In-place inclusive composition over t: on return (decay, load)[t] holds
// e_1 ∘ ... ∘ e_t per lane, so load[t] is h_t for a zero initial state.
void scan_compose_sequential(std::size_t len, std::size_t lanes, double* decay,
                             double* load);
void scan_compose_blelloch(std::size_t len, std::size_t lanes, double* decay,
                           double* load, std::size_t chunk, std::size_t threads);

}  // namespace detail

}  // namespace ssm
