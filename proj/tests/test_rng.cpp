#include <map>

#include "doctest.h"
#include "midnet/rng.hpp"

using midnet::Rng;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forked streams differ from parent and each other") {
  Rng r(7);
  Rng f1 = r.fork(1), f2 = r.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("uniform stays in [0,1) and has sane mean") {
  Rng r(3);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("normal moments") {
  Rng r(11);
  double s = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(0.03));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("beta(a,a) symmetry and support") {
  Rng r(5);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.beta(0.75, 0.75);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("uniform_int covers the range without bias") {
  Rng r(9);
  std::map<std::int64_t, int> counts;
  for (int i = 0; i < 30000; ++i) ++counts[r.uniform_int(5)];
  for (std::int64_t k = 0; k < 5; ++k) CHECK(counts[k] == doctest::Approx(6000).epsilon(0.1));
}

TEST_CASE("non-identity permutation never returns identity for n > 1") {
  Rng r(13);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = r.non_identity_permutation(2);
    CHECK((p[0] == 1 && p[1] == 0));
  }
  auto p1 = r.non_identity_permutation(1);
  CHECK(p1[0] == 0);
}

TEST_SUITE_END();
