#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "bd/common.hpp"

using namespace bd;

TEST_CASE("rng streams are reproducible per seed") {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xa, xb, xc;
  for (int i = 0; i < 16; ++i) {
    xa.push_back(a.next());
    xb.push_back(b.next());
    xc.push_back(c.next());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);
}

TEST_CASE("uniform draws stay in range") {
  Rng rng(7);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const auto k = rng.uniform_int(-3, 3);
    CHECK((k >= -3 && k <= 3));
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
  CHECK(rng.uniform_int(5, 5) == 5);
}

TEST_CASE("normal moments and truncation") {
  Rng rng(11);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  for (int i = 0; i < 2000; ++i) CHECK(std::abs(rng.truncated_normal(0.1)) <= 0.2);
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto a = v, b = v;
  Rng(3).shuffle(a);
  Rng(3).shuffle(b);
  CHECK(a == b);
  CHECK(a != v);
  std::sort(a.begin(), a.end());
  CHECK(a == v);
}

TEST_CASE("mix_seed separates streams") {
  std::set<std::uint64_t> out;
  for (std::uint64_t s = 0; s < 10; ++s) {
    for (std::uint64_t k = 0; k < 10; ++k) out.insert(mix_seed(s, k));
  }
  CHECK(out.size() == 100);
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("errors carry their code") {
  const Error e(ErrorCode::format, "bad bytes");
  CHECK(e.code() == ErrorCode::format);
  CHECK(std::string(e.what()).find("bad bytes") != std::string::npos);
  CHECK(to_string(ErrorCode::format) == "format");
}

TEST_CASE("image indexing is row-major HWC") {
  Image img(2, 3, 2);
  img.at(1, 2, 1) = 9;
  CHECK(img.pixels[(1 * 3 + 2) * 2 + 1] == 9);
  CHECK(img.shape() == Shape3{2, 3, 2});
}
