// Acceptance run: one PASS/FAIL line per criterion. Tolerances and time budgets are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncc/baselines.hpp"
#include "ncc/harness/checks.hpp"
#include "ncc/harness/config.hpp"
#include "ncc/harness/data.hpp"
#include "ncc/harness/run.hpp"
#include "ncc/metrics.hpp"
#include "ncc/ncc.hpp"

using namespace ncc;
using namespace ncc::harness;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

class NullBuf : public std::streambuf {
 protected:
  int overflow(int c) override { return c; }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::vector<double> abs_normal(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * std::abs(d(rng));
  return v;
}

RunOutput run_quiet(const ExperimentConfig& cfg) {
  NullBuf buf;
  std::ostream sink(&buf);
  return run_experiment(cfg, sink);
}

const MetricRow& row_for(const RunOutput& out, const std::string& method, std::uint64_t seed, bool sorted) {
  for (const auto& r : out.rows) {
    if (r.method == method && r.seed == seed && r.sorted == sorted) return r;
  }
  throw std::runtime_error("no metric row for " + method);
}

// Central 99% interval of split-conformal test coverage: given n exchangeable calibration scores
// the conditional coverage is Beta(k, n + 1 - k), and m test points add binomial noise.
std::pair<double, double> beta_binomial_interval(std::size_t n, double alpha, std::size_t m) {
  const double k = std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha) - 1e-9);
  const double a = k, b = static_cast<double>(n) + 1.0 - k;
  auto log_beta = [](double x, double y) { return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y); };
  const double md = static_cast<double>(m);
  std::vector<double> pmf(m + 1);
  for (std::size_t x = 0; x <= m; ++x) {
    const double xd = static_cast<double>(x);
    pmf[x] = std::exp(std::lgamma(md + 1) - std::lgamma(xd + 1) - std::lgamma(md - xd + 1) + log_beta(xd + a, md - xd + b) -
                      log_beta(a, b));
  }
  std::size_t lo = 0, hi = m;
  double cum = 0.0;
  for (std::size_t x = 0; x <= m; ++x) {
    cum += pmf[x];
    if (cum >= 0.005) {
      lo = x;
      break;
    }
  }
  cum = 0.0;
  for (std::size_t x = m + 1; x-- > 0;) {
    cum += pmf[x];
    if (cum >= 0.005) {
      hi = x;
      break;
    }
  }
  return {static_cast<double>(lo) / md, static_cast<double>(hi) / md};
}

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

NccConfig tiny_ncc(AlphaLadder ladder, std::uint64_t seed) {
  NccConfig c;
  c.ladder = std::move(ladder);
  c.encoder.hidden = 8;
  c.encoder.heads = 2;
  c.encoder.window = 8;
  c.encoder.head_hidden = 8;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------

Outcome telescoping() {
  std::mt19937_64 rng(101);
  const std::vector<std::size_t> ns{1, 3, 11};
  const std::vector<double> etas{0.05, 0.5};
  const std::vector<std::size_t> ws{1, 10};
  double worst = 0.0;
  for (int config = 0; config < 10; ++config) {
    const std::size_t n = ns[config % 3];
    const double eta = etas[(config / 3) % 2];
    const std::size_t w = ws[(config / 2) % 2];
    std::vector<double> alphas;
    std::uniform_real_distribution<double> u(0.02, 0.9);
    for (std::size_t i = 0; i < n; ++i) alphas.push_back(u(rng));
    std::sort(alphas.rbegin(), alphas.rend());
    const AlphaLadder ladder(alphas);
    NccConfig cfg = tiny_ncc(ladder, 200 + static_cast<std::uint64_t>(config));
    cfg.encoder.window = 4;
    cfg.eta = eta;
    cfg.w = w;
    cfg.fixed_scale = 1.0;
    // Two configs keep retraining the predictor during the stream.
    cfg.train = config % 5 == 4;
    cfg.initial = {3, 2, 2};
    cfg.retrain = {1, 1, 1};
    cfg.retrain_interval = 250;
    cfg.tta.enabled = config % 2 == 0;
    NccController c(cfg);
    c.warm_start(abs_normal(30, rng));
    NccStepper st{c, std::nullopt};
    st.issue(Context{}, 0.0);
    const double scale = std::exp(std::normal_distribution<double>(0.0, 1.0)(rng));
    const auto stream = abs_normal(2000, rng, scale);
    std::vector<std::vector<int>> errs;
    for (std::size_t t = 0; t < stream.size(); ++t) {
      errs.push_back(ncc_step(st, static_cast<std::int64_t>(t), stream[t], Context{}, 0.0).record.errs);
    }
    // Replay: one conformalization per issued ladder, running errors padded with ones.
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t issued = 0; issued <= errs.size(); ++issued) {
        double r = 0.0;
        for (std::size_t k = 1; k <= w; ++k) r += issued >= k ? errs[issued - k][i] : 1;
        sum += r / static_cast<double>(w) - ladder[i];
      }
      worst = std::max(worst, std::abs(c.delta()[i] - eta * sum));
    }
  }
  return {worst <= 1e-9, "max |delta - eta*sum| = " + fmt(worst) + " (tol 1e-9) over 10 configs"};
}

ExperimentConfig synthetic_config(const std::string& kind, std::size_t T, const std::vector<std::string>& methods,
                                  const std::vector<double>& alphas, std::size_t warmup, std::size_t n_seeds) {
  json j;
  j["dataset"] = {{"synthetic", {{"kind", kind}, {"T", T}, {"seed", 0}}}};
  j["methods"] = methods;
  j["alphas"] = alphas;
  j["warmup"] = warmup;
  std::vector<std::uint64_t> seeds(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) seeds[s] = s;
  j["seeds"] = seeds;
  return parse_config(j);
}

std::vector<double> standard_alphas() {
  const AlphaLadder l = AlphaLadder::standard();
  return {l.alphas().begin(), l.alphas().end()};
}

void small_encoder(ExperimentConfig& cfg) {
  cfg.ncc.encoder.hidden = 16;
  cfg.ncc.encoder.heads = 4;
  cfg.ncc.encoder.window = 16;
  cfg.ncc.encoder.head_hidden = 32;
}

Outcome ncc_coverage() {
  ExperimentConfig cfg = synthetic_config("ar-shift", 5000, {"ncc"}, {0.5, 0.2, 0.1}, 100, 4);
  small_encoder(cfg);
  cfg.ncc.train = false;
  cfg.ncc.eta = 0.5;
  cfg.ncc.w = 10;
  const RunOutput out = run_quiet(cfg);
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : out.rows) {
    for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
      const double gap = std::abs((1.0 - r.report.coverage[i]) - cfg.ladder[i]);
      worst = std::max(worst, gap);
      ok = ok && gap <= 0.03;
    }
  }
  return {ok && out.rows.size() == 4, "max |miscoverage - alpha| = " + fmt(worst) + " (tol 0.03), 4 seeds x 3 levels"};
}

Outcome aci_and_split_coverage() {
  ExperimentConfig aci = synthetic_config("ar-shift", 5000, {"aci"}, {0.1}, 100, 4);
  aci.aci_eta = 0.05;
  const RunOutput a = run_quiet(aci);
  double worst = 0.0;
  for (const auto& r : a.rows) worst = std::max(worst, std::abs(r.report.coverage[0] - 0.9));

  ExperimentConfig sp = synthetic_config("iid-gauss", 5000, {"splitcp"}, {0.1}, 100, 1);
  sp.dataset.recipe.seed = 11;
  const RunOutput s = run_quiet(sp);
  fc::ArForecaster f(sp.forecaster.p, sp.forecaster.ridge, sp.forecaster.fit_window);
  const std::size_t n_cal = warmup_scores(load_dataset(sp, 0).regions[0].y, f, sp.warmup, 1).size();
  const auto [lo, hi] = beta_binomial_interval(n_cal, 0.1, s.rows[0].report.n_steps);
  const double cov = s.rows[0].report.coverage[0];
  const bool ok = worst <= 0.02 && a.rows.size() == 4 && cov >= lo && cov <= hi;
  return {ok, "aci max |cov - 0.9| = " + fmt(worst) + " (tol 0.02); split-CP cov " + fmt(cov) + " in [" + fmt(lo) + ", " +
                  fmt(hi) + "]"};
}

Outcome aci_crossing() {
  using namespace baselines;
  int witnessed = 0, crossed = 0;
  // Hand state: rates 0.1 apart, eta 0.2; the wider interval covers and the narrower one misses.
  const double a1 = 0.1, a2 = 0.2;
  if (aci_crossing_witness(0.1, 0.2, 0.2, a1, a2)) {
    ++witnessed;
    if (aci_step(0.1, 0, 0.2, a1) > aci_step(0.2, 1, 0.2, a2)) ++crossed;
  }
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 20; ++j) {
      const double a1t = 0.01 + 0.02 * i, a2t = a1t + 0.01 * j, eta = 0.05 + 0.01 * j;
      if (!aci_crossing_witness(a1t, a2t, eta, a1, a2)) continue;
      ++witnessed;
      if (aci_step(a1t, 0, eta, a1) > aci_step(a2t, 1, eta, a2)) ++crossed;
    }
  }
  // Through the controller: the next ladder is crossed.
  const AlphaLadder ladder({0.2, 0.1});
  AciController c(ladder, 0.2);
  std::vector<double> warm(99);
  for (std::size_t k = 0; k < warm.size(); ++k) warm[k] = static_cast<double>(k + 1);
  c.warm_start(warm);
  const auto p = c.predict({});
  const double q_wide = p.ladder.q_conf[1], q_narrow = p.ladder.q_conf[0];
  const double s = 0.5 * (q_narrow + q_wide);
  const StepRecord rec = make_record(0, 1, s, 0.0, p.ladder);
  c.observe(rec);
  const auto next = c.predict({});
  std::vector<Interval> ivs;
  for (double q : next.ladder.q_conf) ivs.push_back(interval_from_quantile(0.0, q));
  const bool e2e = q_narrow < q_wide && rec.errs[0] == 1 && rec.errs[1] == 0 && c.alpha_t()[0] < c.alpha_t()[1] &&
                   !is_consistent(ivs, ladder);
  return {witnessed > 20 && crossed == witnessed && e2e,
          std::to_string(crossed) + "/" + std::to_string(witnessed) + " witnessed states cross; controller ladder crossed: " +
              (e2e ? "yes" : "no")};
}

Outcome gradients() {
  const auto res = gradcheck_suite(0, 5, 1e-5, 1e-4);
  double worst = 0.0;
  bool ok = !res.empty();
  std::string failed;
  for (const auto& r : res) {
    worst = std::max(worst, r.value);
    if (!r.pass) failed += " " + r.name;
    ok = ok && r.pass;
  }
  return {ok, std::to_string(res.size()) + " checks, max relative error " + fmt(worst) + " (tol 1e-4)" +
                  (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome monotonicity_and_tta() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  long violations = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    nn::EncoderConfig e;
    e.hidden = 4 * (1 + pick(rng) % 3);
    e.heads = pick(rng) % 2 ? 2 : 1;
    e.window = 1 + static_cast<std::size_t>(pick(rng) % 6);
    e.levels = 1 + static_cast<std::size_t>(pick(rng) % 11);
    e.head_hidden = 4 * (1 + pick(rng) % 3);
    if (pick(rng) % 2) e.views.push_back({"v", nn::ViewKind::Sequence, 1});
    ad::ParamStore ps;
    nn::QuantilePredictor net(e, ps, rng);
    const double spread = 0.5 + 3.0 * std::uniform_real_distribution<double>()(rng);
    for (auto& [nm, slot] : ps.slots()) {
      for (auto& x : slot.value.mutable_values()) x = spread * gauss(rng);
    }
    ad::NoGradGuard guard;
    const std::size_t B = 3;
    const auto q = net.forward(ps, detail::random_input(e, B, rng)).q_raw;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < e.levels; ++i) {
        const double v = q(b, i);
        if (!(v >= 0.0) || (i > 0 && v < q(b, i - 1))) ++violations;
      }
    }
  }

  std::string detail = std::to_string(violations) + " violations in 1000 draws;";
  bool ok = violations == 0;
  for (const std::string kind : {"ar-shift", "seasonal-burst", "iid-gauss"}) {
    double dcs_on = 0.0, dcs_off = 0.0;
    for (bool tta : {true, false}) {
      ExperimentConfig cfg = synthetic_config(kind, 1000, {"ncc"}, standard_alphas(), 200, 1);
      small_encoder(cfg);
      cfg.ncc.initial = {60, 30, 30};
      cfg.ncc.retrain_interval = 100;
      cfg.ncc.tta.enabled = tta;
      cfg.ncc.tta.max_iters = 50;
      (tta ? dcs_on : dcs_off) = run_quiet(cfg).rows.at(0).report.dcs;
    }
    ok = ok && dcs_on >= 0.99 && dcs_off <= dcs_on;
    detail += " " + kind + " dcs tta " + fmt(dcs_on) + " / off " + fmt(dcs_off) + ";";
  }
  return {ok, detail};
}

Outcome metric_oracles() {
  using namespace metrics;
  const double w = wis(0.0, 0.0, std::vector<Interval>{{-1.0, 1.0}}, AlphaLadder({0.5}));
  const bool wis_ok = w == 1.0 / 3.0;

  const AlphaLadder l = AlphaLadder::standard();
  std::vector<StepRecord> calibrated(1000);
  for (std::size_t t = 0; t < calibrated.size(); ++t) {
    calibrated[t].errs.resize(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
      calibrated[t].errs[i] = t < static_cast<std::size_t>(std::lround(l[i] * 1000.0)) ? 1 : 0;
    }
  }
  const double cs = calibration_score(calibrated, l);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  std::uniform_real_distribution<double> spread(0.2, 3.0);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 99 + static_cast<std::size_t>(trial % 3) * 50;
    std::vector<double> lv(L), vals(L);
    for (std::size_t i = 0; i < L; ++i) lv[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(L);
    const double mu = d(rng), sd = spread(rng);
    for (auto& v : vals) v = mu + sd * d(rng);
    std::sort(vals.begin(), vals.end());
    const double y = mu + sd * d(rng);
    const double ref = step_cdf_crps(y, vals);
    worst_rel = std::max(worst_rel, std::abs(crps(y, lv, vals) - ref) / ref);
  }

  std::vector<StepRecord> stream;
  for (int t = 0; t < 500; ++t) {
    std::vector<double> q(l.size());
    for (auto& x : q) x = d(rng);
    stream.push_back(sorted_record(make_record(t, 1, d(rng), d(rng), QuantileLadder::from_conformal(q)), l));
  }
  const double dc = dcs(stream, l);
  const bool ok = wis_ok && cs < 1e-12 && worst_rel <= 1e-3 && dc == 1.0;
  return {ok, "wis " + fmt(w, 17) + "; calibrated cs " + fmt(cs) + "; crps max rel diff " + fmt(worst_rel) + " (tol 1e-3); sorted dcs " +
                  fmt(dc)};
}

Outcome stage_one_median() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    NccConfig cfg = tiny_ncc(AlphaLadder({0.5}), seed);
    cfg.initial = {200, 0, 0};
    cfg.fixed_scale = 1.0;
    cfg.train_cap = 400;
    cfg.adam.lr = 1e-3;
    NccController c(cfg);
    const auto scores = abs_normal(400, rng);
    c.warm_start(scores);
    (void)c.predict(Context{});
    std::vector<double> fitted;
    for (const auto& q : c.fitted_q_raw(c.training_targets())) fitted.push_back(q[0]);
    const double gap = std::abs(median(fitted) - median(scores));
    ok = ok && gap <= 0.1;
    detail += (seed ? ", " : "") + fmt(gap, 3);
  }
  return {ok, "|median fitted q - empirical median| per seed: " + detail + " (tol 0.1)"};
}

Outcome directional_replication() {
  ExperimentConfig cfg = synthetic_config("ar-shift", 2000, {"cpid", "splitcp", "ncc"}, standard_alphas(), 200, 4);
  cfg.sorted = true;
  small_encoder(cfg);
  cfg.ncc.initial = {60, 30, 30};
  cfg.ncc.retrain_interval = 100;
  const RunOutput out = run_quiet(cfg);
  int cpid_ok = 0, ncc_ok = 0, cs_ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const double cpid = row_for(out, "cpid", seed, false).report.dcs;
    const double ncc_dcs = row_for(out, "ncc", seed, false).report.dcs;
    const double ncc_cs = row_for(out, "ncc", seed, true).report.cs;
    const double split_cs = row_for(out, "splitcp", seed, true).report.cs;
    cpid_ok += cpid < 0.5;
    ncc_ok += ncc_dcs >= 0.99;
    cs_ok += ncc_cs <= split_cs;
    detail += " [seed " + std::to_string(seed) + ": dcs cpid " + fmt(cpid, 3) + " ncc " + fmt(ncc_dcs, 3) + ", sorted cs ncc " +
              fmt(ncc_cs, 3) + " split " + fmt(split_cs, 3) + "]";
  }
  return {cpid_ok == 4 && ncc_ok >= 3 && cs_ok >= 3, "cpid<0.5 " + std::to_string(cpid_ok) + "/4, ncc>=0.99 " +
                                                        std::to_string(ncc_ok) + "/4, cs " + std::to_string(cs_ok) + "/4;" + detail};
}

// Pretrained weights loaded before warm start, then a short fine-tune on the warmup signals.
class FineTuned final : public Controller {
 public:
  FineTuned(NccConfig cfg, const ad::ParamStore& pretrained, Stages tune) : inner_(std::move(cfg)), tune_(tune) {
    inner_.load_params(pretrained);
  }
  std::string name() const override { return "ncc"; }
  void warm_start(std::span<const double> scores) override {
    inner_.warm_start(scores);
    (void)inner_.train(tune_);
  }
  Prediction predict(const Context& ctx) override { return inner_.predict(ctx); }
  void observe(const StepRecord& rec) override { inner_.observe(rec); }

 private:
  NccController inner_;
  Stages tune_;
};

Outcome few_shot() {
  constexpr std::size_t kRegions = 9, kTarget = 8, kWarm = 12, kSteps = 20;
  const AlphaLadder ladder = AlphaLadder::standard();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SyntheticRecipe r = default_recipe(SynthKind::ArShift, 600, 500 + seed);
    r.regions = kRegions;
    const Dataset ds = synth(r);
    auto cfg_for = [&](std::size_t region) {
      NccConfig c = tiny_ncc(ladder, seed);
      c.static_extra = region_code(region, kRegions);
      c.retrain_interval = 0;
      return c;
    };

    // Sources: collect signals with the untrained predictor, then train one shared store.
    auto shared = std::make_shared<ad::ParamStore>();
    std::vector<std::unique_ptr<NccController>> sources;
    for (std::size_t reg = 0; reg < kTarget; ++reg) {
      NccConfig c = cfg_for(reg);
      c.train = false;
      if (reg == 0) {
        sources.push_back(std::make_unique<NccController>(c));
        shared = sources.back()->shared_params();
      } else {
        sources.push_back(std::make_unique<NccController>(c, 1, shared));
      }
      fc::ArForecaster f(2);
      online_run({ds.regions[reg].y, {}, {}}, f, *sources.back(), {100, 1});
    }
    std::vector<NccController*> ptrs;
    for (auto& s : sources) ptrs.push_back(s.get());
    train_jointly(ptrs, {40, 20, 20});

    // Target: only the first kWarm + kSteps points exist.
    const auto& y_full = ds.regions[kTarget].y;
    const OnlineSeries target{std::vector<double>(y_full.begin(), y_full.begin() + kWarm + 1 + kSteps), {}, {}};
    NccConfig tc = cfg_for(kTarget);
    FineTuned warm(tc, *shared, {10, 5, 5});
    NccConfig cold_cfg = tc;
    cold_cfg.initial = {40, 20, 20};
    NccController cold(cold_cfg);
    fc::ArForecaster f1(1), f2(1);
    const auto w = online_run(target, f1, warm, {kWarm, 1});
    const auto c = online_run(target, f2, cold, {kWarm, 1});
    const double cs_warm = metrics::calibration_score(w.records, ladder);
    const double cs_cold = metrics::calibration_score(c.records, ladder);
    wins += cs_warm <= cs_cold;
    detail += " [seed " + std::to_string(seed) + ": warm " + fmt(cs_warm, 3) + " cold " + fmt(cs_cold, 3) + "]";
  }
  return {wins >= 3, "warm <= cold in " + std::to_string(wins) + "/4;" + detail};
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string bytes_of(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome replay_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ncc_acceptance";
  fs::create_directories(dir);
  Dataset full = synth(default_recipe(SynthKind::ArShift, 500, 77));
  Dataset prefix = full;
  prefix.regions[0].t.resize(350);
  prefix.regions[0].y.resize(350);
  write_csv(full, (dir / "full.csv").string());
  write_csv(prefix, (dir / "prefix.csv").string());

  auto config = [&](const std::string& data, const std::string& method, const std::string& tag) {
    json j;
    j["dataset"] = {{"name", "replay"}, {"path", (dir / data).string()}};
    j["methods"] = {method};
    j["alphas"] = {0.5, 0.2, 0.1};
    j["warmup"] = 100;
    j["sorted"] = true;
    j["output"] = {{"results", (dir / (tag + ".jsonl")).string()}, {"metrics", (dir / (tag + ".csv")).string()}};
    j["ncc"] = {{"encoder", {{"hidden", 8}, {"heads", 2}, {"window", 8}, {"head_hidden", 8}}},
                {"stages", {20, 10, 10}},
                {"retrain", {3, 2, 2}},
                {"retrain_interval", 40}};
    return parse_config(j);
  };

  std::size_t compared = 0;
  bool prefix_ok = true;
  for (const std::string m : {"ncc", "aci", "cpid", "nexcp", "splitcp"}) {
    run_to_files(config("full.csv", m, "full_" + m));
    run_to_files(config("prefix.csv", m, "prefix_" + m));
    const auto a = lines_of((dir / ("full_" + m + ".jsonl")).string());
    const auto b = lines_of((dir / ("prefix_" + m + ".jsonl")).string());
    // Skip the header line; every prefix record must match the full run's record byte for byte.
    prefix_ok = prefix_ok && b.size() > 1 && b.size() < a.size();
    for (std::size_t k = 1; k < b.size() && prefix_ok; ++k) {
      prefix_ok = a[k] == b[k];
      ++compared;
    }
  }

  ExperimentConfig one = config("full.csv", "ncc", "run1");
  one.methods = {Method::Ncc, Method::Aci, Method::Cpid, Method::Nexcp, Method::SplitCp};
  ExperimentConfig two = one;
  two.results_path = (dir / "run2.jsonl").string();
  two.metrics_path = (dir / "run2.csv").string();
  run_to_files(one);
  run_to_files(two);
  const bool same = bytes_of(one.results_path) == bytes_of(two.results_path) && bytes_of(one.metrics_path) == bytes_of(two.metrics_path) &&
                    !bytes_of(one.results_path).empty();
  fs::remove_all(dir);
  return {prefix_ok && same, std::to_string(compared) + " prefix records bit-exact: " + (prefix_ok ? "yes" : "no") +
                                 "; repeated full runs byte-identical: " + (same ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "telescoping identity", 30, telescoping},
      {2, "ncc long-run coverage", 120, ncc_coverage},
      {3, "aci and split-CP coverage", 60, aci_and_split_coverage},
      {4, "aci quantile crossing", 1, aci_crossing},
      {5, "gradient suite", 60, gradients},
      {6, "monotone ladders and tta", 180, monotonicity_and_tta},
      {7, "metric oracles", 30, metric_oracles},
      {8, "stage-1 quantile learning", 120, stage_one_median},
      {9, "directional replication", 600, directional_replication},
      {10, "few-shot transfer", 300, few_shot},
      {11, "replay determinism", 60, replay_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s %2d %-28s %7.2fs/%gs  %s%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs, c.budget_s, o.detail.c_str(),
                in_time ? "" : "  (over time budget)");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
