#include <filesystem>

#include "doctest.h"
#include "hapax/stats.hpp"

using namespace hapax;

TEST_CASE("mcnemar worked values") {
  // Identical vectors: p = 1.
  std::vector<std::uint8_t> a{1, 0, 1, 1, 0};
  CHECK(mcnemar_p(a, a) == 1.0);

  // Discordant (10, 2): exact two-sided binomial 2 * 79 / 4096.
  std::vector<std::uint8_t> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(1);
    y.push_back(0);
  }
  for (int i = 0; i < 2; ++i) {
    x.push_back(0);
    y.push_back(1);
  }
  for (int i = 0; i < 30; ++i) {
    x.push_back(1);
    y.push_back(1);
  }
  double p = mcnemar_p(x, y);
  CHECK(p == doctest::Approx(0.03857421875).epsilon(1e-9));
  CHECK(mcnemar_p(y, x) == doctest::Approx(p).epsilon(1e-12));  // symmetry

  // Zero discordant pairs but unequal totals is impossible; all-concordant
  // vectors give p = 1.
  std::vector<std::uint8_t> c1{1, 1, 0}, c2{1, 1, 0};
  CHECK(mcnemar_p(c1, c2) == 1.0);

  // Large-sample path (40, 20): continuity-corrected chi-squared.
  std::vector<std::uint8_t> u, v;
  for (int i = 0; i < 40; ++i) {
    u.push_back(1);
    v.push_back(0);
  }
  for (int i = 0; i < 20; ++i) {
    u.push_back(0);
    v.push_back(1);
  }
  CHECK(mcnemar_p(u, v) == doctest::Approx(0.014171388254).epsilon(1e-8));

  CHECK_THROWS_AS(mcnemar_p(c1, std::vector<std::uint8_t>{1}), EvalError);
}

TEST_CASE("ci_margin worked values") {
  CHECK(ci_margin(0.0, 100) == 0.0);
  CHECK(ci_margin(1.0, 100) == 0.0);
  CHECK(ci_margin(0.5, 1000) == doctest::Approx(0.0309903).epsilon(1e-5));
  CHECK(ci_margin(0.345, 1000) == doctest::Approx(0.0294636).epsilon(1e-5));
  CHECK_THROWS_AS(ci_margin(1.5, 10), EvalError);
  CHECK_THROWS_AS(ci_margin(0.5, 0), EvalError);
}

TEST_CASE("per-sample bit files round trip") {
  auto dir = std::filesystem::temp_directory_path() / "hapax_stats_test";
  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> bits{1, 0, 0, 1, 1, 0};
  write_bits(dir / "a.bits", bits);
  CHECK(read_bits(dir / "a.bits") == bits);
}
