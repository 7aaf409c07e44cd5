#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "stgdat/rng.hpp"

using stgdat::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.normal() == d.normal());
    CHECK(c.uniform() == d.uniform());
  }
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("uniform stays in range") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-3.0, 5.0);
    CHECK(u >= -3.0);
    CHECK(u < 5.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
  }
}

TEST_CASE("normal variates have roughly standard moments") {
  Rng rng(123);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("derived streams ignore parent consumption") {
  Rng a(99);
  Rng b(99);
  // Consume different amounts from the parents before deriving.
  for (int i = 0; i < 17; ++i) a.next_u64();
  Rng da = a.derive("child");
  Rng db = b.derive("child");
  for (int i = 0; i < 100; ++i) {
    CHECK(da.next_u64() == db.next_u64());
  }
}

TEST_CASE("derived streams with different labels differ") {
  Rng a(99);
  Rng x = a.derive("one");
  Rng y = a.derive("two");
  Rng z = a.derive(std::uint64_t{3});
  int same_xy = 0, same_xz = 0;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t vx = x.next_u64();
    if (vx == y.next_u64()) ++same_xy;
    if (vx == z.next_u64()) ++same_xz;
  }
  CHECK(same_xy == 0);
  CHECK(same_xz == 0);
}
