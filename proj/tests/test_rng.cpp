#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "liquidbench/rng.hpp"

using liquidbench::Rng;

TEST_CASE("identical seed and split path reproduce the stream") {
  Rng a = Rng(42).split("init").split(std::uint64_t{7});
  Rng b = Rng(42).split("init").split(std::uint64_t{7});
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("splits by different labels or indices are distinct streams") {
  Rng root(123);
  Rng a = root.split("shuffle");
  Rng b = root.split("dropout");
  Rng c = root.split(std::uint64_t{0});
  Rng d = root.split(std::uint64_t{1});
  std::set<std::uint64_t> firsts = {a.next_u64(), b.next_u64(), c.next_u64(),
                                    d.next_u64(), root.next_u64()};
  CHECK(firsts.size() == 5);
}

TEST_CASE("splitting does not perturb the parent stream") {
  Rng a(9);
  Rng b(9);
  (void)a.split("child");
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in range with a sane mean") {
  Rng rng(7);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / 20000 - 0.5) < 0.01);
}

TEST_CASE("normal has roughly unit variance and zero mean") {
  Rng rng(8);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::fabs(sum / n) < 0.03);
  CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

TEST_CASE("below covers [0, n) without bias at small n") {
  Rng rng(17);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) CHECK(std::fabs(c / 50000.0 - 0.2) < 0.01);
}

TEST_CASE("shuffle is a permutation and deterministic") {
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  Rng(3).shuffle(v1);
  Rng(3).shuffle(v2);
  CHECK(v1 == v2);
  std::set<int> s(v1.begin(), v1.end());
  CHECK(s.size() == 8);
}
