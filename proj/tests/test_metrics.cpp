#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "ncc/metrics.hpp"

using namespace ncc;
using namespace ncc::metrics;
using Catch::Approx;

namespace {

// Exact integral of (F(x) - 1{x >= y})^2 for the step CDF with mass 1/L at each value.
double step_cdf_crps(double y, std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<double> pts = values;
  pts.push_back(y);
  std::sort(pts.begin(), pts.end());
  const double L = static_cast<double>(values.size());
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double a = pts[k], b = pts[k + 1];
    if (b <= a) continue;
    const double mid = 0.5 * (a + b);
    const double F = static_cast<double>(std::upper_bound(values.begin(), values.end(), mid) - values.begin()) / L;
    const double H = mid >= y ? 1.0 : 0.0;
    total += (F - H) * (F - H) * (b - a);
  }
  return total;
}

StepRecord record_with_errs(std::vector<int> errs) {
  StepRecord r;
  r.errs = std::move(errs);
  return r;
}

std::vector<StepRecord> calibrated_stream(const AlphaLadder& l, std::size_t n) {
  // Level i misses exactly round(alpha_i * n) of n steps.
  std::vector<StepRecord> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    out[t].errs.resize(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) out[t].errs[i] = t < static_cast<std::size_t>(std::lround(l[i] * n)) ? 1 : 0;
  }
  return out;
}

}  // namespace

TEST_CASE("wis hand examples", "[metrics][wis]") {
  const AlphaLadder l({0.5});
  CHECK(wis(0.0, 0.0, std::vector<Interval>{{-1, 1}}, l) == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(wis(2.0, 0.0, std::vector<Interval>{{-1, 1}}, l) == Approx(5.0 / 3.0).epsilon(1e-15));
  CHECK(wis(3.0, 3.0, std::vector<Interval>{{3, 3}}, l) == 0.0);
  // An empty interval is the point [m, m].
  CHECK(wis(2.0, 0.0, std::vector<Interval>{Interval::none()}, l) ==
        Approx(wis(2.0, 0.0, std::vector<Interval>{{0, 0}}, l)));
}

TEST_CASE("wis is non-negative and zero only at a perfect point forecast", "[metrics][wis][property]") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  const AlphaLadder l({0.2});
  for (int i = 0; i < 200; ++i) {
    const double y = d(rng), m = d(rng), hw = std::abs(d(rng));
    const double v = wis(y, m, std::vector<Interval>{{m - hw, m + hw}}, l);
    CHECK(v >= 0.0);
    if (y != m || hw > 0.0) CHECK(v > 0.0);
  }
}

TEST_CASE("crps hand examples", "[metrics][crps]") {
  const std::vector<double> lv{0.25, 0.5, 0.75};
  CHECK(crps(0.0, lv, std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(crps(0.0, lv, std::vector<double>{-1, 0, 1}) == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(crps(0.0, lv, std::vector<double>{1, 0, 2}), Error);
  CHECK_THROWS_AS(crps(0.0, std::vector<double>{0.5, 0.25}, std::vector<double>{0, 1}), Error);
}

TEST_CASE("crps of a point forecast is the absolute error", "[metrics][crps]") {
  std::vector<double> lv;
  for (int i = 1; i <= 99; ++i) lv.push_back((i - 0.5) / 99.0);
  const std::vector<double> vals(lv.size(), 2.5);
  CHECK(crps(1.0, lv, vals) == Approx(1.5).epsilon(1e-12));
}

TEST_CASE("crps pinball average agrees with step-CDF integration", "[metrics][crps][oracle]") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d(0.0, 1.0);
  std::uniform_real_distribution<double> spread(0.2, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 99 + static_cast<std::size_t>(trial % 3) * 50;
    std::vector<double> lv(L), vals(L);
    for (std::size_t i = 0; i < L; ++i) lv[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(L);
    const double mu = d(rng), sd = spread(rng);
    for (auto& v : vals) v = mu + sd * d(rng);
    std::sort(vals.begin(), vals.end());
    const double y = mu + sd * d(rng);
    const double a = crps(y, lv, vals), b = step_cdf_crps(y, vals);
    CHECK(std::abs(a - b) <= 1e-3 * std::abs(b));
  }
}

TEST_CASE("calibration score", "[metrics][cs]") {
  CHECK(calibration_score(std::vector<StepRecord>{record_with_errs({1}), record_with_errs({0}), record_with_errs({0}),
                                                  record_with_errs({0}), record_with_errs({0})},
                          AlphaLadder({0.1})) == Approx(0.1));
  std::vector<StepRecord> two;
  for (int t = 0; t < 10; ++t) two.push_back(record_with_errs({t < 4 ? 1 : 0, t < 2 ? 1 : 0}));
  CHECK(calibration_score(two, AlphaLadder({0.5, 0.1})) == Approx(0.1));
  const AlphaLadder std_l = AlphaLadder::standard();
  CHECK(calibration_score(calibrated_stream(std_l, 100), std_l) < 1e-12);
  CHECK_THROWS_AS(calibration_score(std::vector<StepRecord>{}, std_l), Error);
}

TEST_CASE("calibration score ignores record order", "[metrics][cs][property]") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.3);
  const AlphaLadder l({0.5, 0.2, 0.1});
  std::vector<StepRecord> recs;
  for (int t = 0; t < 50; ++t) recs.push_back(record_with_errs({coin(rng), coin(rng), coin(rng)}));
  const double a = calibration_score(recs, l);
  std::shuffle(recs.begin(), recs.end(), rng);
  CHECK(calibration_score(recs, l) == Approx(a).epsilon(1e-14));
}

TEST_CASE("coverage and dcs counting", "[metrics]") {
  std::vector<StepRecord> recs;
  for (int e : {1, 0, 1, 0}) recs.push_back(record_with_errs({e}));
  CHECK(empirical_coverage(recs, 0) == 0.5);
  CHECK_THROWS_AS(empirical_coverage(recs, 1), Error);

  const AlphaLadder l({0.5, 0.1});
  std::vector<StepRecord> stream;
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> q = t == 3 ? std::vector<double>{2.0, 1.0} : std::vector<double>{1.0, 2.0};
    stream.push_back(make_record(t, 1, 0.5, 0.0, QuantileLadder::from_conformal(q)));
  }
  CHECK(dcs(stream, l) == Approx(0.9));
  CHECK(evaluate(stream, l, true).dcs == 1.0);
}

TEST_CASE("sorted streams are fully consistent and metrics scale correctly", "[metrics][property]") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  const AlphaLadder l = AlphaLadder::standard();
  std::vector<StepRecord> raw, scaled;
  const double c = 3.5, shift = -2.0;
  for (int t = 0; t < 200; ++t) {
    const double y = d(rng), y_hat = d(rng);
    std::vector<double> q(l.size());
    for (auto& x : q) x = 1.0 + d(rng);
    raw.push_back(make_record(t, 1, y, y_hat, QuantileLadder::from_conformal(q)));
    for (auto& x : q) x *= c;
    scaled.push_back(make_record(t, 1, c * y + shift, c * y_hat + shift, QuantileLadder::from_conformal(q)));
  }
  const auto a = evaluate(raw, l, true);
  const auto b = evaluate(scaled, l, true);
  CHECK(a.dcs == 1.0);
  CHECK(evaluate(raw, l).dcs < 1.0);
  CHECK(b.cs == Approx(a.cs).epsilon(1e-12));
  CHECK(b.dcs == a.dcs);
  CHECK(b.wis == Approx(c * a.wis).epsilon(1e-9));
  CHECK(b.crps == Approx(c * a.crps).epsilon(1e-9));
}

TEST_CASE("evaluate caps infinite intervals at the largest score", "[metrics]") {
  const AlphaLadder l({0.5});
  std::vector<StepRecord> recs{make_record(0, 1, 1.0, 0.0, QuantileLadder::from_conformal({kInf})),
                               make_record(1, 1, 2.0, 0.0, QuantileLadder::from_conformal({kInf}))};
  const auto rep = evaluate(recs, l);
  CHECK(std::isfinite(rep.wis));
  CHECK(std::isfinite(rep.crps));
  CHECK(rep.coverage[0] == 1.0);
}
