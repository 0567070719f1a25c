#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "oracles.hpp"
#include "ssm/scan.hpp"

using namespace ssm;
using numerics::Rng;
using numerics::Tensor;

namespace {

ScanElement random_element(std::size_t n, Rng& rng) {
  ScanElement e{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    e.decay[i] = rng.uniform(0.0, 0.99);
    e.load[i] = rng.normal();
  }
  return e;
}

// Stable random instance: decays strictly inside (0,1), loads O(1).
void random_instance(std::size_t len, std::size_t lanes, Rng& rng, Tensor& abar,
                     Tensor& bx) {
  abar = Tensor({len, lanes});
  bx = Tensor({len, lanes});
  for (std::size_t i = 0; i < len * lanes; ++i) {
    abar[i] = rng.uniform(0.01, 0.99);
    bx[i] = rng.normal();
  }
}

}  // namespace

TEST_CASE("scan_combine identity element") {
  Rng rng(5);
  const std::size_t n = 16;
  ScanElement e = random_element(n, rng);
  ScanElement id = scan_identity(n);
  ScanElement left = scan_combine(id, e);
  ScanElement right = scan_combine(e, id);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(left.decay[i] == e.decay[i]);
    CHECK(left.load[i] == e.load[i]);
    CHECK(right.decay[i] == e.decay[i]);
    CHECK(right.load[i] == e.load[i]);
  }
}

TEST_CASE("scan_combine associativity on random elements") {
  Rng rng(6);
  const std::size_t n = 16;
  for (int trial = 0; trial < 50; ++trial) {
    ScanElement e1 = random_element(n, rng);
    ScanElement e2 = random_element(n, rng);
    ScanElement e3 = random_element(n, rng);
    ScanElement left = scan_combine(scan_combine(e1, e2), e3);
    ScanElement right = scan_combine(e1, scan_combine(e2, e3));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(left.decay[i] - right.decay[i]) < 1e-12);
      CHECK(std::abs(left.load[i] - right.load[i]) < 1e-12);
    }
  }
}

TEST_CASE("two-step combine equals two sequential recurrence steps") {
  Rng rng(7);
  const std::size_t n = 8;
  ScanElement e1 = random_element(n, rng);
  ScanElement e2 = random_element(n, rng);
  ScanElement combined = scan_combine(e1, e2);
  for (std::size_t i = 0; i < n; ++i) {
    // h1 = load1 (from zero state), h2 = decay2 * h1 + load2
    const double h2 = e2.decay[i] * e1.load[i] + e2.load[i];
    CHECK(combined.load[i] == doctest::Approx(h2).epsilon(1e-15));
    CHECK(combined.decay[i] == doctest::Approx(e1.decay[i] * e2.decay[i]).epsilon(1e-15));
  }
}

TEST_CASE("recurrence_sequential: decay-free accumulation is a running sum") {
  const std::size_t len = 10, lanes = 4;
  Tensor abar = Tensor::full({len, lanes}, 1.0);
  Tensor bx = Tensor::full({len, lanes}, 1.0);
  Tensor h = recurrence_sequential(abar, bx);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t k = 0; k < lanes; ++k) {
      CHECK(h.at(t, k) == doctest::Approx(static_cast<double>(t + 1)).epsilon(1e-15));
    }
  }
}

TEST_CASE("recurrence_sequential: single step from zero state") {
  Rng rng(8);
  Tensor abar, bx;
  random_instance(1, 6, rng, abar, bx);
  Tensor h = recurrence_sequential(abar, bx);
  CHECK(h.max_abs_diff(bx) == 0.0);
}

TEST_CASE("recurrence_parallel equals sequential exhaustively for L in 1..64") {
  Rng rng(9);
  const std::size_t lanes = 3;
  for (std::size_t len = 1; len <= 64; ++len) {
    Tensor abar, bx;
    random_instance(len, lanes, rng, abar, bx);
    Tensor want = recurrence_sequential(abar, bx);
    for (std::size_t chunk : {std::size_t(1), std::size_t(2), std::size_t(7),
                              std::size_t(64), len}) {
      Tensor got = recurrence_parallel(abar, bx, chunk);
      CHECK(got.max_abs_diff(want) < 1e-10);
    }
  }
}

TEST_CASE("recurrence_parallel on non-power-of-two lengths and threads") {
  Rng rng(10);
  const std::size_t lanes = 16;
  for (std::size_t len : {std::size_t(3), std::size_t(100), std::size_t(1000)}) {
    Tensor abar, bx;
    random_instance(len, lanes, rng, abar, bx);
    Tensor want = recurrence_sequential(abar, bx);
    for (std::size_t chunk : {std::size_t(1), std::size_t(7), std::size_t(64), len}) {
      for (std::size_t threads : {std::size_t(1), std::size_t(4)}) {
        Tensor got = recurrence_parallel(abar, bx, chunk, threads);
        CHECK(got.max_abs_diff(want) < 1e-10);
      }
    }
  }
}

TEST_CASE("recurrence_parallel: chunk >= L follows the single-chunk path") {
  Rng rng(11);
  Tensor abar, bx;
  random_instance(33, 5, rng, abar, bx);
  Tensor full = recurrence_parallel(abar, bx, 33);
  Tensor bigger = recurrence_parallel(abar, bx, 64);
  // both are one padded Blelloch chunk; padding with identity keeps them equal
  CHECK(full.max_abs_diff(bigger) == 0.0);
}

TEST_CASE("recurrence_parallel: zero chunk size is a contract error") {
  Tensor abar({2, 2});
  Tensor bx({2, 2});
  CHECK_THROWS_AS(recurrence_parallel(abar, bx, 0), numerics::ContractError);
}

TEST_CASE("parallel prefix is bit-invariant under suffix changes") {
  Rng rng(12);
  const std::size_t len = 100, lanes = 4, cut = 40;
  Tensor abar, bx;
  random_instance(len, lanes, rng, abar, bx);
  Tensor base = recurrence_parallel(abar, bx, 16);
  Tensor abar2 = abar;
  Tensor bx2 = bx;
  for (std::size_t t = cut; t < len; ++t) {
    for (std::size_t k = 0; k < lanes; ++k) {
      abar2.at(t, k) = rng.uniform(0.01, 0.99);
      bx2.at(t, k) = rng.normal();
    }
  }
  Tensor changed = recurrence_parallel(abar2, bx2, 16);
  for (std::size_t t = 0; t < cut; ++t) {
    for (std::size_t k = 0; k < lanes; ++k) {
      CHECK(changed.at(t, k) == base.at(t, k));
    }
  }
}
