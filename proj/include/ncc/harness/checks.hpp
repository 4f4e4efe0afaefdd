#pragma once

// Built-in check suites behind the `gradcheck` and `selftest` commands.

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ncc/autodiff.hpp"
#include "ncc/baselines.hpp"
#include "ncc/harness/data.hpp"
#include "ncc/metrics.hpp"
#include "ncc/ncc.hpp"
#include "ncc/neural.hpp"

namespace ncc::harness {

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured quantity
  double threshold = 0.0;  // pass when value <= threshold
  bool pass = false;
};

namespace detail {

inline std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double mean = 0.0) {
  std::normal_distribution<double> d(mean, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline nn::PredictorInput random_input(const nn::EncoderConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  nn::PredictorInput in;
  std::bernoulli_distribution coin(0.3);
  for (std::size_t t = 0; t < cfg.window; ++t) {
    std::vector<double> e(batch * cfg.levels);
    for (auto& x : e) x = coin(rng) ? 1.0 : 0.0;
    in.errs.push_back(ad::Tensor::constant({batch, cfg.levels}, e));
    in.quantiles.push_back(ad::Tensor::constant({batch, cfg.levels}, randn(batch * cfg.levels, rng)));
    in.scores.push_back(ad::Tensor::constant({batch, 1}, randn(batch, rng)));
  }
  std::vector<double> st(batch * cfg.static_dim, 1.0);
  in.static_features = ad::Tensor::constant({batch, cfg.static_dim}, st);
  for (const auto& v : cfg.views) {
    std::vector<ad::Tensor> seq;
    const std::size_t len = v.kind == nn::ViewKind::Sequence ? cfg.window : 1;
    for (std::size_t t = 0; t < len; ++t) seq.push_back(ad::Tensor::constant({batch, v.dim}, randn(batch * v.dim, rng)));
    in.views.push_back(std::move(seq));
  }
  return in;
}

inline bool near_zero(std::span<const double> v, double eps) {
  return std::any_of(v.begin(), v.end(), [&](double x) { return std::abs(x) < eps; });
}

}  // namespace detail

/// Central-difference checks of every loss and network block at `points` random points each.
/// Points within 1e-3 of a ReLU or max kink are redrawn.
inline std::vector<CheckResult> gradcheck_suite(std::uint64_t seed = 0, int points = 5, double step = 1e-5,
                                                double tol = 1e-4) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  auto record = [&](const std::string& name, double worst) { out.push_back({name, worst, tol, worst < tol}); };

  // Losses, as functions of a [2 x n] quantile matrix.
  const AlphaLadder l({0.9, 0.6, 0.3, 0.1});
  const std::size_t n = l.size();
  const ad::Tensor s = ad::Tensor::constant({2, 1}, {0.7, 1.4});
  const ad::Tensor cov = ad::Tensor::constant({2, n}, {1, 0, 1, 0, 0, 0, 1, 1});
  auto kinked = [&](const std::vector<double>& q) {
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(s.values()[b] - q[b * n + i]) < 1e-3) return true;
        if (i + 1 < n && std::abs(q[b * n + i + 1] - q[b * n + i]) < 1e-3) return true;
      }
    }
    return false;
  };
  const double k = 0.5;
  const std::vector<std::pair<std::string, std::function<ad::Tensor(const ad::Tensor&)>>> loss_cases = {
      {"loss.quantile", [&](const ad::Tensor& q) { return losses::quantile(s, q, l); }},
      {"loss.coverage", [&](const ad::Tensor& q) { return losses::coverage(losses::soft_error(s, q, k), cov); }},
      {"loss.efficiency", [&](const ad::Tensor& q) { return losses::efficiency(s, q, losses::soft_error(s, q, k)); }},
      {"loss.monotonicity", [&](const ad::Tensor& q) { return losses::monotonicity(q, l); }},
      {"loss.total", [&](const ad::Tensor& q) {
         const LossWeights w;
         const ad::Tensor se = losses::soft_error(s, q, k);
         return losses::quantile(s, q, l) * w.q + losses::coverage(se, cov) * w.c + losses::efficiency(s, q, se) * w.e +
                losses::monotonicity(q, l) * w.m;
       }},
  };
  for (const auto& [name, f] : loss_cases) {
    double worst = 0.0;
    for (int p = 0; p < points;) {
      const auto q = detail::randn(2 * n, rng, 1.0);
      if (kinked(q)) continue;
      ++p;
      worst = std::max(worst, ad::grad_check(f, {2, n}, q, step).max_rel_error);
    }
    record(name, worst);
  }

  // Network blocks with random parameters and inputs.
  auto block = [&](const std::string& name, const std::function<double(std::mt19937_64&)>& one) {
    double worst = 0.0;
    for (int p = 0; p < points; ++p) worst = std::max(worst, one(rng));
    record(name, worst);
  };
  block("block.linear", [&](std::mt19937_64& r) {
    ad::ParamStore ps;
    nn::Linear lin(ps, "lin", 3, 4, r);
    const ad::Tensor x = ad::Tensor::constant({2, 3}, detail::randn(6, r));
    const ad::Tensor w = ad::Tensor::constant({2, 4}, detail::randn(8, r));
    return ad::grad_check_params(ps, [&] { return ad::sum(lin.forward(ps, x) * w); }, step).max_rel_error;
  });
  block("block.gru", [&](std::mt19937_64& r) {
    ad::ParamStore ps;
    nn::Gru gru(ps, "gru", 2, 3, r);
    for (auto& [nm, slot] : ps.slots()) {
      auto v = slot.value.mutable_values();
      const auto noise = detail::randn(v.size(), r);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.1 * noise[i];  // non-zero biases too
    }
    std::vector<ad::Tensor> seq;
    for (int t = 0; t < 4; ++t) seq.push_back(ad::Tensor::constant({2, 2}, detail::randn(4, r)));
    const ad::Tensor w = ad::Tensor::constant({2, 3}, detail::randn(6, r));
    return ad::grad_check_params(ps, [&] { return ad::sum(gru.encode(ps, seq) * w); }, step).max_rel_error;
  });
  block("block.attention", [&](std::mt19937_64& r) {
    ad::ParamStore ps;
    nn::MultiHeadAttention mha(ps, "mha", 4, 2, r);
    const ad::Tensor query = ad::Tensor::constant({2, 4}, detail::randn(8, r));
    std::vector<ad::Tensor> items;
    for (int j = 0; j < 3; ++j) items.push_back(ad::Tensor::constant({2, 4}, detail::randn(8, r)));
    const ad::Tensor w = ad::Tensor::constant({2, 4}, detail::randn(8, r));
    return ad::grad_check_params(ps, [&] { return ad::sum(mha.fuse(ps, query, items) * w); }, step).max_rel_error;
  });
  block("block.head", [&](std::mt19937_64& r) {
    for (;;) {
      ad::ParamStore ps;
      nn::MonotoneHead head(ps, "head", 4, 5, 3, r, 0.5, 0.2);
      const ad::Tensor z = ad::Tensor::constant({2, 4}, detail::randn(8, r));
      {
        ad::NoGradGuard g;
        const ad::Tensor hidden = ad::matmul(z, ps.get("head.l1.W")) + ps.get("head.l1.b");
        if (detail::near_zero(hidden.values(), 1e-3) || detail::near_zero(head.pre_relu(ps, z).values(), 1e-3)) continue;
      }
      const ad::Tensor w = ad::Tensor::constant({2, 3}, detail::randn(6, r));
      return ad::grad_check_params(ps, [&] { return ad::sum(head.forward(ps, z) * w); }, step).max_rel_error;
    }
  });
  block("block.predictor", [&](std::mt19937_64& r) {
    nn::EncoderConfig cfg;
    cfg.hidden = 4;
    cfg.heads = 2;
    cfg.window = 3;
    cfg.levels = 3;
    cfg.head_hidden = 4;
    cfg.views = {{"aux", nn::ViewKind::Sequence, 1}};
    for (;;) {
      ad::ParamStore ps;
      nn::QuantilePredictor net(cfg, ps, r);
      const nn::PredictorInput in = detail::random_input(cfg, 2, r);
      {
        ad::NoGradGuard g;
        if (detail::near_zero(net.forward(ps, in).pre_relu.values(), 1e-3)) continue;
      }
      const ad::Tensor w = ad::Tensor::constant({2, 3}, detail::randn(6, r));
      return ad::grad_check_params(ps, [&] { return ad::sum(net.forward(ps, in).q_raw * w); }, step).max_rel_error;
    }
  });
  return out;
}

/// Fast randomized property checks over the library. Each value is a violation count or error.
inline std::vector<CheckResult> selftest(std::uint64_t seed = 0) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  auto count = [&](const std::string& name, double violations) { out.push_back({name, violations, 0.0, violations == 0.0}); };
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const AlphaLadder std_ladder = AlphaLadder::standard();

  {
    int bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> q(std_ladder.size());
      for (auto& x : q) x = gauss(rng);
      const auto once = sort_ladder(q, std_ladder);
      std::vector<Interval> ivs;
      for (double x : once) ivs.push_back(interval_from_quantile(0.0, x));
      if (sort_ladder(once, std_ladder) != once || !is_consistent(ivs, std_ladder)) ++bad;
    }
    count("sort_ladder idempotent and consistent", bad);
  }
  {
    int bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const double y = gauss(rng), y_hat = gauss(rng);
      std::vector<double> q(5);
      for (auto& x : q) x = gauss(rng);
      const StepRecord r = make_record(trial, 1, y, y_hat, QuantileLadder::from_conformal(q));
      for (std::size_t i = 0; i < q.size(); ++i) {
        if (r.intervals[i].contains(y) != (r.errs[i] == 0)) ++bad;
      }
    }
    count("record errors match intervals", bad);
  }
  {
    nn::EncoderConfig cfg;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.window = 4;
    cfg.levels = std_ladder.size();
    cfg.head_hidden = 8;
    int bad = 0;
    for (int draw = 0; draw < 100; ++draw) {
      ad::ParamStore ps;
      nn::QuantilePredictor net(cfg, ps, rng);
      for (auto& [nm, slot] : ps.slots()) {
        auto v = slot.value.mutable_values();
        for (auto& x : v) x = 2.0 * gauss(rng);
      }
      ad::NoGradGuard g;
      const auto q = net.forward(ps, detail::random_input(cfg, 2, rng)).q_raw;
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < cfg.levels; ++i) {
          if (q(b, i) < 0.0 || (i > 0 && q(b, i) < q(b, i - 1))) ++bad;
        }
      }
    }
    count("predictor ladders monotone and non-negative", bad);
  }
  {
    NccConfig cfg;
    cfg.ladder = AlphaLadder({0.5, 0.2, 0.1});
    cfg.encoder.hidden = 4;
    cfg.encoder.heads = 2;
    cfg.encoder.window = 4;
    cfg.encoder.head_hidden = 4;
    cfg.train = false;
    cfg.fixed_scale = 1.0;
    cfg.eta = 0.3;
    cfg.w = 4;
    NccController c(cfg);
    std::vector<double> warm(10, 1.0);
    c.warm_start(warm);
    NccStepper st{c, std::nullopt};
    st.issue(Context{}, 0.0);
    std::vector<std::vector<int>> errs(warm.size(), std::vector<int>(3, 1));
    std::vector<double> sums(3, 0.0);
    auto accumulate = [&] {
      for (std::size_t i = 0; i < 3; ++i) {
        double r = 0.0;
        for (std::size_t k = 0; k < cfg.w; ++k) r += errs[errs.size() - 1 - k][i];
        sums[i] += r / static_cast<double>(cfg.w) - cfg.ladder[i];
      }
    };
    accumulate();
    for (int t = 0; t < 300; ++t) {
      errs.push_back(ncc_step(st, t, std::abs(gauss(rng)), Context{}, 0.0).record.errs);
      accumulate();
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(c.delta()[i] - cfg.eta * sums[i]));
    out.push_back({"telescoping identity", worst, 1e-9, worst <= 1e-9});
  }
  {
    const double v = metrics::wis(0.0, 0.0, std::vector<Interval>{{-1, 1}}, AlphaLadder({0.5}));
    const double err = std::abs(v - 1.0 / 3.0);
    out.push_back({"wis hand example", err, 1e-15, err <= 1e-15});
  }
  {
    int bad = 0;
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<double> s(1 + trial % 30);
      for (auto& x : s) x = std::round(std::abs(gauss(rng)) * 4.0) / 4.0;
      const double a = 0.01 + 0.98 * unif(rng);
      if (baselines::nexcp_quantile(s, 1.0, a) != baselines::split_cp_quantile(s, a)) ++bad;
    }
    count("nexcp with rho 1 equals split conformal", bad);
  }
  {
    int bad = 0;
    for (int trial = 0; trial < 2000; ++trial) {
      const double a1 = 0.5 * unif(rng), a2 = a1 + (0.5 - a1) * unif(rng) + 1e-6;
      const double a1t = 0.5 * unif(rng), a2t = a1t + 0.3 * unif(rng), eta = 0.2 * unif(rng);
      if (!baselines::aci_crossing_witness(a1t, a2t, eta, a1, a2)) continue;
      if (!(baselines::aci_step(a1t, 0, eta, a1) > baselines::aci_step(a2t, 1, eta, a2))) ++bad;
    }
    count("aci witness implies crossing", bad);
  }
  {
    SyntheticRecipe r = default_recipe(SynthKind::ArShift, 300, seed);
    count("synthetic data deterministic", synth(r).regions[0].y == synth(r).regions[0].y ? 0.0 : 1.0);
  }
  return out;
}

}  // namespace ncc::harness
