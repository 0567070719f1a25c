#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "training/adamw.hpp"

using namespace training;
using numerics::Param;
using numerics::Tensor;

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  OptimHparams hp;
  hp.weight_decay = 0.0;
  Tensor p({4}, {1.0, -2.0, 0.5, 3.0});
  const Tensor keep = p;
  Tensor g({4}), m({4}), v({4});
  adamw_step(p, g, m, v, 1, hp.lr, hp);
  CHECK(p.max_abs_diff(keep) == 0.0);
}

TEST_CASE("adamw: zero gradient with decay scales parameters by (1 - lr*wd)") {
  OptimHparams hp;
  hp.weight_decay = 0.05;
  const double lr = 0.01;
  Tensor p({3}, {
                    2.0,
                    -4.0,
                    0.25,
                });
  Tensor g({3}), m({3}), v({3});
  adamw_step(p, g, m, v, 1, lr, hp);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - lr * 0.05)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-4.0 * (1.0 - lr * 0.05)).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(0.25 * (1.0 - lr * 0.05)).epsilon(1e-15));
}

TEST_CASE("adamw: converges on a single-parameter quadratic within 500 steps") {
  // loss = 0.5*(x - 3)^2, gradient x - 3
  Param x(Tensor({1}, {-5.0}));
  OptimHparams hp;
  hp.lr = 0.05;
  hp.weight_decay = 0.0;
  hp.warmup_steps = 0;
  hp.total_steps = 500;
  hp.lr_min_ratio = 1.0;  // constant lr
  hp.clip_norm = 0.0;
  AdamW opt({&x}, hp);
  for (int step = 0; step < 500; ++step) {
    x.grad[0] = x.value[0] - 3.0;
    opt.step();
  }
  CHECK(std::abs(x.value[0] - 3.0) < 1e-3);
}

TEST_CASE("adamw: non-finite gradient aborts with the parameter name") {
  Param x(Tensor({2}));
  x.grad[1] = std::nan("");
  OptimHparams hp;
  AdamW opt({&x}, hp);
  try {
    opt.clip_gradients({"layer.w"});
    FAIL("expected NumericError");
  } catch (const numerics::NumericError& e) {
    CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
  }
}

TEST_CASE("adamw: global-norm clipping rescales exactly to the threshold") {
  Param a(Tensor({2}, {3.0, 0.0}));
  Param b(Tensor({1}, {4.0}));
  a.grad = Tensor({2}, {3.0, 0.0});
  b.grad = Tensor({1}, {4.0});
  OptimHparams hp;
  hp.clip_norm = 1.0;
  AdamW opt({&a, &b}, hp);
  const double norm = opt.clip_gradients({"a", "b"});
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
  const double clipped =
      std::sqrt(a.grad[0] * a.grad[0] + a.grad[1] * a.grad[1] + b.grad[0] * b.grad[0]);
  CHECK(clipped == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lr schedule: warmup then cosine decay") {
  OptimHparams hp;
  hp.lr = 1.0;
  hp.warmup_steps = 100;
  hp.total_steps = 1100;
  hp.lr_min_ratio = 0.0;
  CHECK(lr_schedule(1, hp) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr_schedule(50, hp) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_schedule(100, hp) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_schedule(600, hp) == doctest::Approx(0.5).epsilon(1e-9));  // cosine midpoint
  CHECK(lr_schedule(1100, hp) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_schedule(5000, hp) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("adamw: moments give bias-corrected first step") {
  // first step with constant gradient g: update is exactly lr * g/(|g| + eps)
  OptimHparams hp;
  hp.weight_decay = 0.0;
  hp.eps = 1e-8;
  Tensor p({1}, {1.0});
  Tensor g({1}, {0.3});
  Tensor m({1}), v({1});
  adamw_step(p, g, m, v, 1, 0.1, hp);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (0.3 / (0.3 + 1e-8))).epsilon(1e-12));
}
