#include <catch_amalgamated.hpp>

#include <random>

#include "ncc/core.hpp"

using namespace ncc;
using Catch::Approx;

TEST_CASE("alpha ladder validation", "[core]") {
  CHECK(AlphaLadder::standard().size() == 11);
  CHECK_THROWS_AS(AlphaLadder(std::vector<double>{}), Error);
  CHECK_THROWS_AS(AlphaLadder({0.1, 0.5}), Error);
  CHECK_THROWS_AS(AlphaLadder({1.0}), Error);
  CHECK_THROWS_AS(AlphaLadder({0.5, 0.0}), Error);
  CHECK_THROWS_AS(AlphaLadder({0.5, 0.5}), Error);
  CHECK_NOTHROW(AlphaLadder({0.5}));
}

TEST_CASE("nonconformity score", "[core]") {
  CHECK(nonconformity(3.0, 1.0) == 2.0);
  CHECK(nonconformity(1.0, 1.0) == 0.0);
  CHECK(nonconformity(-2.0, 3.0) == 5.0);
  CHECK_THROWS_AS(nonconformity(kInf, 1.0), Error);
  CHECK_THROWS_AS(nonconformity(1.0, std::nan("")), Error);
}

TEST_CASE("coverage error", "[core]") {
  CHECK(coverage_error(2.0, 1.0) == 1);
  CHECK(coverage_error(1.0, 1.0) == 0);
  CHECK(coverage_error(0.0, -0.5) == 1);
  CHECK(coverage_error(5.0, kInf) == 0);
  CHECK_THROWS_AS(coverage_error(std::nan(""), 1.0), Error);
}

TEST_CASE("soft error", "[core]") {
  CHECK(soft_error(1.0, 1.0, 0.3) == 0.5);
  CHECK(soft_error(2.0, 1.0, 1.0) == Approx(0.73106).margin(1e-5));
  CHECK(std::abs(soft_error(2.0, 1.0, 0.01) - 1.0) < 1e-9);
  CHECK_THROWS_AS(soft_error(1.0, 1.0, 0.0), Error);
  CHECK_THROWS_AS(soft_error(1.0, 1.0, -1.0), Error);
}

TEST_CASE("soft error approaches the hard error as K shrinks", "[core][property]") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double s = std::abs(d(rng)), q = d(rng);
    if (std::abs(s - q) < 1e-3) continue;
    CHECK(std::abs(soft_error(s, q, 1e-6) - coverage_error(s, q)) < 1e-6);
  }
}

TEST_CASE("running error pads with ones", "[core]") {
  const std::vector<int> a{1, 0, 1, 0};
  CHECK(running_error(a, 4) == 0.5);
  const std::vector<int> b{0, 0, 0};
  CHECK(running_error(b, 3) == 0.0);
  const std::vector<int> c{0};
  CHECK(running_error(c, 4) == 0.75);
  CHECK(running_error(a, 1) == 0.0);
  CHECK_THROWS_AS(running_error(a, 0), Error);
}

TEST_CASE("interval from quantile", "[core]") {
  CHECK(interval_from_quantile(10.0, 2.0) == Interval{8.0, 12.0, false});
  CHECK(interval_from_quantile(10.0, 0.0) == Interval{10.0, 10.0, false});
  CHECK(interval_from_quantile(10.0, -1.0).empty);
  CHECK(interval_from_quantile(10.0, kInf).contains(1e300));
}

TEST_CASE("consistency check", "[core]") {
  const AlphaLadder l({0.5, 0.1});
  CHECK(is_consistent(std::vector<Interval>{{9, 11}, {8, 12}}, l));
  CHECK_FALSE(is_consistent(std::vector<Interval>{{8, 12}, {9, 11}}, l));
  CHECK(is_consistent(std::vector<Interval>{{8, 12}, {8, 12}}, l));
  CHECK(is_consistent(std::vector<Interval>{Interval::none(), {8, 12}}, l));
  CHECK_FALSE(is_consistent(std::vector<Interval>{{8, 12}, Interval::none()}, l));
  CHECK_THROWS_AS(is_consistent(std::vector<Interval>{{8, 12}}, l), Error);
}

TEST_CASE("sort ladder", "[core]") {
  const AlphaLadder l({0.5, 0.1});
  CHECK(sort_ladder({1.0, 3.0}, l) == std::vector<double>{1.0, 3.0});
  CHECK(sort_ladder({3.0, 1.0}, l) == std::vector<double>{1.0, 3.0});
  CHECK(sort_ladder({2.0, 2.0}, l) == std::vector<double>{2.0, 2.0});
}

TEST_CASE("sort ladder is idempotent, value preserving and consistent", "[core][property]") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(1.0, 1.0);
  const AlphaLadder l = AlphaLadder::standard();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(l.size());
    for (auto& x : q) x = d(rng);
    const auto once = sort_ladder(q, l);
    CHECK(sort_ladder(once, l) == once);
    auto a = q, b = once;
    std::sort(a.begin(), a.end());
    CHECK(a == b);
    std::vector<Interval> ivs;
    for (double x : once) ivs.push_back(interval_from_quantile(0.0, x));
    CHECK(is_consistent(ivs, l));
  }
}

TEST_CASE("records tie errors to intervals", "[core][property]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double y = d(rng), y_hat = d(rng);
    std::vector<double> q(5);
    for (auto& x : q) x = d(rng);
    const StepRecord r = make_record(trial, 1, y, y_hat, QuantileLadder::from_conformal(q));
    CHECK(r.s >= 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(r.errs[i] == coverage_error(r.s, q[i]));
      if (!r.intervals[i].empty) CHECK(r.intervals[i].contains(y) == (r.errs[i] == 0));
      else CHECK(r.errs[i] == 1);
    }
  }
}

TEST_CASE("history is append-only and time-ordered", "[core]") {
  History h;
  h.append(make_record(1, 1, 1.0, 0.0, QuantileLadder::from_conformal({0.5})));
  h.append(make_record(2, 1, 0.2, 0.0, QuantileLadder::from_conformal({0.5})));
  CHECK_THROWS_AS(h.append(make_record(2, 1, 0.2, 0.0, QuantileLadder::from_conformal({0.5}))), Error);
  CHECK(h.size() == 2);
  CHECK(h.running_error(0, 4) == 0.75);  // errs (1, 0) behind two padded ones
  CHECK(h.running_error(0, 1) == 0.0);
  CHECK(h.running_error_at(0, 2, 1) == 1.0);
}
