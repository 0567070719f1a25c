#pragma once

#include <atomic>
#include <cstddef>
#include <new>

namespace numerics {

// Process-wide counters over tensor payload allocations. The benchmark
// harness reads these to report peak transient allocation of a kernel call;
// everything else can ignore them (one relaxed atomic op per alloc/free).
namespace memstat {

std::size_t live_bytes() noexcept;
std::size_t peak_bytes() noexcept;

// Collapses the peak back to the current live figure. Call right before a
// measured region; after it, peak_bytes() - live-at-reset is the region's
// transient high-water mark.
void reset_peak() noexcept;

void on_alloc(std::size_t bytes) noexcept;
void on_free(std::size_t bytes) noexcept;

}  // namespace memstat

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    memstat::on_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memstat::on_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace numerics
