#include <doctest.h>

#include "cory/rewards.hpp"
#include "cory/rng.hpp"

using namespace cory;

TEST_CASE("shaped reward examples") {
  const std::vector<double> kls = {0.1, 0.2, 0.3};
  const auto r = shape_rewards(1.0, kls, 0.5);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == doctest::Approx(-0.05));
  CHECK(r[1] == doctest::Approx(-0.1));
  CHECK(r[2] == doctest::Approx(1.0 - 0.15));
  CHECK(shape_rewards(0.7, std::vector<double>{0.4}, 0.0) == std::vector<double>{0.7});
  CHECK(combined_metric(1.0, kls, 0.5) == doctest::Approx(0.7));
  CHECK(collective_reward(1.0, 0.0) == 1.0);
  CHECK(collective_reward(0.25, 0.5) == 0.75);
}

TEST_CASE("invalid shaping inputs throw") {
  CHECK_THROWS(shape_rewards(1.0, std::vector<double>{}, 0.1));
  CHECK_THROWS(shape_rewards(1.0, std::vector<double>{0.1}, -0.1));
  CHECK_THROWS(shape_rewards(1.0, std::vector<double>{-0.1}, 0.1));
  CHECK_THROWS(combined_metric(1.0, std::vector<double>{0.1, std::nan("")}, 0.1));
}

TEST_CASE("property: shaped rewards sum to the combined metric and are affine in eta") {
  Rng rng = make_rng(8, {});
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<double> kls(n);
    for (auto& k : kls) k = 2.0 * uniform01(rng);
    const double task = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    const double eta = uniform01(rng);
    const auto r = shape_rewards(task, kls, eta);
    double sum = 0.0;
    for (double x : r) sum += x;
    CHECK(std::abs(sum - combined_metric(task, kls, eta)) <= 1e-12);
    const auto r0 = shape_rewards(task, kls, 0.0);
    const auto r2 = shape_rewards(task, kls, 2 * eta);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs((r2[i] - r0[i]) - 2 * (r[i] - r0[i])) <= 1e-12);
      CHECK(r[i] <= r0[i]);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) CHECK(r0[i] == 0.0);
    CHECK(r0.back() == task);
  }
}
