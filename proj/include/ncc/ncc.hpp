#pragma once

// Neural conformal controller: losses, conformalization, test-time adaptation,
// staged training and the online controller built on the quantile predictor.

#include <algorithm>
#include <array>
#include <memory>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncc/autodiff.hpp"
#include "ncc/controller.hpp"
#include "ncc/core.hpp"
#include "ncc/error.hpp"
#include "ncc/neural.hpp"

namespace ncc {

inline constexpr double kLogEps = 1e-7;

// ---------------------------------------------------------------------------
// Losses on plain values (one score, one ladder)

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) fail(ErrorKind::InvalidInput, std::string(what) + ": length mismatch");
}

/// Sum over levels of the pinball loss at 1 - alpha: max((1-a)(s-q), -a(s-q)).
inline double quantile_loss(double s, std::span<const double> q, const AlphaLadder& ladder) {
  require_same_size(q.size(), ladder.size(), "quantile_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double u = s - q[i];
    total += std::max((1.0 - ladder[i]) * u, -ladder[i] * u);
  }
  return total;
}

/// 1 when the running error exceeds alpha, so the next interval should cover.
inline int cov_indicator(double running_err, double alpha) { return running_err <= alpha ? 0 : 1; }

inline double coverage_loss(std::span<const double> soft_err, std::span<const int> cov) {
  require_same_size(soft_err.size(), cov.size(), "coverage_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < soft_err.size(); ++i) {
    const double p = std::clamp(soft_err[i], kLogEps, 1.0 - kLogEps);
    total += -(1 - cov[i]) * std::log(p) - cov[i] * std::log(1.0 - p);
  }
  return total;
}

inline double efficiency_loss(double s, std::span<const double> q, std::span<const double> soft_err) {
  require_same_size(q.size(), soft_err.size(), "efficiency_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += (s - q[i]) * (s - q[i]) * (1.0 - soft_err[i]);
  return total;
}

/// Finite-difference penalty on quantiles that shrink as alpha decreases.
inline double monotonicity_loss(std::span<const double> q, const AlphaLadder& ladder) {
  require_same_size(q.size(), ladder.size(), "monotonicity_loss");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < q.size(); ++i) {
    total += std::max(0.0, (q[i + 1] - q[i]) / (ladder[i + 1] - ladder[i]));
  }
  return total;
}

struct LossWeights {
  double q = 1.0;
  double c = 1.0;
  double e = 0.1;
  double m = 1.0;
};

struct LossParts {
  double q = 0.0;
  double c = 0.0;
  double e = 0.0;
  double m = 0.0;
};

inline double total_loss(const LossParts& parts, const LossWeights& w) {
  return w.q * parts.q + w.c * parts.c + w.e * parts.e + w.m * parts.m;
}

// ---------------------------------------------------------------------------
// Batched tensor losses. q: [B x n], s: [B x 1], cov: [B x n] of 0/1. Each returns the
// batch mean of the per-sample sums above.

namespace losses {

using ad::Tensor;

inline Tensor alpha_row(const AlphaLadder& ladder) {
  return Tensor::row(std::vector<double>(ladder.alphas().begin(), ladder.alphas().end()));
}

inline Tensor batch_mean(const Tensor& per_entry) {
  return ad::sum(per_entry) * (1.0 / static_cast<double>(per_entry.rows()));
}

inline Tensor quantile(const Tensor& s, const Tensor& q, const AlphaLadder& ladder) {
  const Tensor a = alpha_row(ladder);
  const Tensor u = s - q;
  return batch_mean(ad::maximum((1.0 - a) * u, ad::neg(a) * u));
}

inline Tensor soft_error(const Tensor& s, const Tensor& q, double k) { return ad::sigmoid((s - q) * (1.0 / k)); }

inline Tensor coverage(const Tensor& soft_err, const Tensor& cov) {
  const Tensor p = ad::clamp(soft_err, kLogEps, 1.0 - kLogEps);
  return batch_mean(ad::neg((1.0 - cov) * ad::log(p) + cov * ad::log(1.0 - p)));
}

inline Tensor efficiency(const Tensor& s, const Tensor& q, const Tensor& soft_err) {
  return batch_mean(ad::square(s - q) * (1.0 - soft_err));
}

inline Tensor monotonicity(const Tensor& q, const AlphaLadder& ladder) {
  const std::size_t n = ladder.size();
  if (n < 2) return ad::sum(q) * 0.0;
  std::vector<double> inv(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) inv[i] = 1.0 / (ladder[i + 1] - ladder[i]);
  const Tensor diff = ad::slice(q, 1, 1, n) - ad::slice(q, 1, 0, n - 1);
  return batch_mean(ad::relu(diff * Tensor::row(inv)));
}

}  // namespace losses

// ---------------------------------------------------------------------------
// Conformalization

/// Delta <- Delta + eta (running_err - alpha); q_conf = q_raw + Delta. Mutates `delta`.
inline QuantileLadder conformalize(std::span<const double> q_raw, std::vector<double>& delta, double eta,
                                   std::span<const double> running_errs, const AlphaLadder& ladder) {
  require_same_size(q_raw.size(), ladder.size(), "conformalize");
  require_same_size(delta.size(), ladder.size(), "conformalize");
  require_same_size(running_errs.size(), ladder.size(), "conformalize");
  QuantileLadder out;
  out.q_raw.assign(q_raw.begin(), q_raw.end());
  for (std::size_t i = 0; i < ladder.size(); ++i) delta[i] += eta * (running_errs[i] - ladder[i]);
  out.delta = delta;
  for (std::size_t i = 0; i < ladder.size(); ++i) out.q_conf.push_back(out.q_raw[i] + delta[i]);
  return out;
}

/// Interval nesting of a quantile ladder centred anywhere: negative quantiles are empty intervals.
inline bool ladder_consistent(std::span<const double> q) {
  for (std::size_t i = 0; i + 1 < q.size(); ++i) {
    if (q[i] >= 0.0 && q[i + 1] < q[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Test-time adaptation

enum class TtaMode { Mlp, Vector };

struct TtaConfig {
  bool enabled = true;
  int max_iters = 50;
  double step = 0.01;  // in units of the score scale
  TtaMode mode = TtaMode::Mlp;
};

struct TtaResult {
  std::vector<double> q;  // adjusted conformalized ladder, score units
  std::vector<double> h;  // adjustment, score units
  int iters = 0;
  bool incomplete = false;
};

/// Minimizes L_M(q_conf + h) over an adjustment h. In Mlp mode h = z A + b from the combined
/// embedding z with A, b zero-initialised; the step is divided by (1 + |z|^2) so that one step moves h
/// by the same amount in either mode. Stops as soon as the intervals nest and keeps the best iterate.
inline TtaResult tta_adjust(std::span<const double> q_conf, std::span<const double> embedding, const TtaConfig& cfg,
                            const AlphaLadder& ladder, double scale) {
  require_same_size(q_conf.size(), ladder.size(), "tta_adjust");
  const std::size_t n = ladder.size();
  TtaResult res;
  res.q.assign(q_conf.begin(), q_conf.end());
  res.h.assign(n, 0.0);
  if (ladder_consistent(res.q)) return res;

  const std::size_t d = cfg.mode == TtaMode::Mlp ? embedding.size() : 0;
  ad::ParamStore aux;
  aux.add("tta.A", {std::max<std::size_t>(d, 1), n}, std::vector<double>(std::max<std::size_t>(d, 1) * n, 0.0));
  aux.add("tta.b", {1, n}, std::vector<double>(n, 0.0));
  double z2 = 0.0;
  for (double v : embedding) z2 += v * v;
  const double lr = cfg.step / (cfg.mode == TtaMode::Mlp ? 1.0 + z2 : 1.0);
  const ad::Tensor z = d > 0 ? ad::Tensor::row(std::vector<double>(embedding.begin(), embedding.end()))
                             : ad::Tensor::zeros({1, 1});
  std::vector<double> base(n);
  for (std::size_t i = 0; i < n; ++i) base[i] = q_conf[i] / scale;
  const ad::Tensor base_t = ad::Tensor::row(base);

  double best_loss = monotonicity_loss(base, ladder);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const ad::Tensor h = ad::matmul(z, aux.get("tta.A")) + aux.get("tta.b");
    ad::backward(losses::monotonicity(base_t + h, ladder));
    for (auto& [name, slot] : aux.slots()) {
      if (!slot.value.has_grad()) continue;
      auto v = slot.value.mutable_values();
      const auto g = slot.value.grad();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * g[k];
      slot.value.zero_grad();
    }
    res.iters = it + 1;
    ad::NoGradGuard guard;
    const ad::Tensor h_new = ad::matmul(z, aux.get("tta.A")) + aux.get("tta.b");
    std::vector<double> q(n), hs(n);
    for (std::size_t i = 0; i < n; ++i) {
      hs[i] = h_new(0, i) * scale;
      q[i] = q_conf[i] + hs[i];
    }
    const bool ok = ladder_consistent(q);
    const double loss = monotonicity_loss(q, ladder) / scale;
    if (ok || loss < best_loss) {
      best_loss = loss;
      res.q = q;
      res.h = hs;
    }
    if (ok) return res;
  }
  res.incomplete = !ladder_consistent(res.q);
  return res;
}

// ---------------------------------------------------------------------------
// Controller

struct Stages {
  int s1 = 100;
  int s2 = 50;
  int s3 = 50;
};

struct NccConfig {
  AlphaLadder ladder = AlphaLadder::standard();
  nn::EncoderConfig encoder;     // levels and static_dim are filled in from the ladder and static_extra
  double eta = 0.1;              // multiples of the score scale
  std::size_t w = 10;
  double k = 0.05;               // multiples of the score scale
  LossWeights lambdas;
  Stages initial;
  Stages retrain{10, 5, 5};
  std::size_t retrain_interval = 5;  // 0 disables retraining
  std::size_t batch = 32;
  std::size_t train_cap = 256;       // most recent records used as training targets
  ad::AdamConfig adam{.lr = 1e-3};
  TtaConfig tta;
  bool train = true;                 // false keeps the randomly initialised predictor
  std::optional<double> fixed_scale;  // otherwise the warmup median score
  std::vector<double> static_extra{1.0};  // region code appended after the horizon
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.0)) fail(ErrorKind::InvalidParameter, "ncc: eta must be positive");
    if (w == 0) fail(ErrorKind::InvalidParameter, "ncc: window w must be >= 1");
    if (!(k > 0.0)) fail(ErrorKind::InvalidParameter, "ncc: K must be positive");
    if (batch == 0) fail(ErrorKind::InvalidParameter, "ncc: batch must be >= 1");
    if (tta.max_iters < 0) fail(ErrorKind::InvalidParameter, "ncc: TTA iterations must be >= 0");
    if (fixed_scale && !(*fixed_scale > 0.0)) fail(ErrorKind::InvalidParameter, "ncc: scale must be positive");
  }
};

struct StageReport {
  double loss_before = 0.0;
  double loss_after = 0.0;
};

struct TrainReport {
  std::array<StageReport, 3> stages;
  std::size_t windows = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) fail(ErrorKind::InsufficientData, "median of an empty set");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

class NccController final : public Controller {
 public:
  /// One past step as the encoders see it.
  struct Signal {
    std::vector<int> errs;
    std::vector<double> q;      // q_conf, score units
    std::vector<double> delta;  // Delta applied to this target
    double s = 0.0;
    std::int64_t origin = 0;    // series index the ladder was issued at
  };

  /// Controllers built with the same `shared` store train one set of weights (multi-region pretraining).
  explicit NccController(NccConfig cfg, int tau = 1, std::shared_ptr<ad::ParamStore> shared = nullptr)
      : cfg_(std::move(cfg)), tau_(tau) {
    cfg_.validate();
    cfg_.encoder.levels = cfg_.ladder.size();
    cfg_.encoder.static_dim = 1 + cfg_.static_extra.size();
    rng_.seed(cfg_.seed);
    auto own = std::make_shared<ad::ParamStore>();
    net_ = nn::QuantilePredictor(cfg_.encoder, *own, rng_);
    if (shared) {
      for (const auto& [name, slot] : own->slots()) {
        if (!shared->contains(name) || shared->get(name).shape() != slot.value.shape()) {
          fail(ErrorKind::Shape, "ncc: shared parameter store does not match the encoder config at '" + name + "'");
        }
      }
      params_ = std::move(shared);
    } else {
      params_ = std::move(own);
    }
    delta_.assign(cfg_.ladder.size(), 0.0);
  }

  std::string name() const override { return "ncc"; }

  void warm_start(std::span<const double> scores) override {
    if (scores.empty()) fail(ErrorKind::InsufficientData, "ncc: no warmup scores");
    scale_ = cfg_.fixed_scale ? *cfg_.fixed_scale : median(std::vector<double>(scores.begin(), scores.end()));
    if (!(scale_ > 0.0)) scale_ = 1.0;
    const std::size_t n = cfg_.ladder.size();
    for (double s : scores) signals_.push_back({std::vector<int>(n, 1), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), s, 0});
    warm_count_ = signals_.size();
  }

  Prediction predict(const Context& ctx) override {
    if (scale_ == 0.0) fail(ErrorKind::PipelineOrder, "ncc: predict before warm_start");
    views_ = ctx.views;
    if (!origin_known_) {
      // Warmup targets run consecutively up to the first origin.
      for (std::size_t j = 0; j < warm_count_; ++j) {
        signals_[j].origin = static_cast<std::int64_t>(ctx.origin) - tau_ - static_cast<std::int64_t>(warm_count_ - 1 - j);
      }
      first_origin_ = static_cast<std::int64_t>(ctx.origin);
      origin_known_ = true;
    }
    if (cfg_.train && !trained_) {
      last_train_ = train(cfg_.initial);
      trained_ = true;
    }
    pending_origins_.push_back(static_cast<std::int64_t>(ctx.origin));

    nn::PredictorOutput out;
    {
      ad::NoGradGuard guard;
      out = net_.forward(*params_, build_input({signals_.size()}, {static_cast<std::int64_t>(ctx.origin)}));
    }
    std::vector<double> q_raw(cfg_.ladder.size());
    for (std::size_t i = 0; i < q_raw.size(); ++i) q_raw[i] = out.q_raw(0, i) * scale_;
    std::vector<double> re(cfg_.ladder.size());
    for (std::size_t i = 0; i < re.size(); ++i) re[i] = running_error(i, signals_.size());
    last_running_ = re;

    Prediction p;
    p.ladder = conformalize(q_raw, delta_, cfg_.eta * scale_, re, cfg_.ladder);
    if (cfg_.tta.enabled) {
      const auto emb = out.embedding.combined.values();
      TtaResult t = tta_adjust(p.ladder.q_conf, std::vector<double>(emb.begin(), emb.end()), {
          .enabled = true, .max_iters = cfg_.tta.max_iters, .step = cfg_.tta.step, .mode = cfg_.tta.mode}, cfg_.ladder, scale_);
      p.ladder.q_conf = std::move(t.q);
      p.tta_iters = t.iters;
      p.tta_incomplete = t.incomplete;
    }
    return p;
  }

  void observe(const StepRecord& rec) override {
    if (pending_origins_.empty()) fail(ErrorKind::PipelineOrder, "ncc: feedback for a target that was never predicted");
    signals_.push_back({rec.errs, rec.ladder.q_conf, rec.ladder.delta, rec.s, pending_origins_.front()});
    pending_origins_.erase(pending_origins_.begin());
    ++observed_;
    if (cfg_.train && cfg_.retrain_interval > 0 && observed_ % cfg_.retrain_interval == 0) {
      last_train_ = train(cfg_.retrain);
    }
  }

  /// Three-stage training on sliding windows of the signal history.
  TrainReport train(const Stages& stages) {
    if (signals_.size() < cfg_.encoder.window + 1) {
      fail(ErrorKind::InsufficientData, "ncc: training needs at least " + std::to_string(cfg_.encoder.window + 1) +
                                            " past steps, have " + std::to_string(signals_.size()));
    }
    std::vector<std::size_t> targets = training_targets();
    TrainReport rep;
    rep.windows = targets.size();
    const std::array<int, 3> epochs{stages.s1, stages.s2, stages.s3};
    for (int stage = 1; stage <= 3; ++stage) {
      const auto si = static_cast<std::size_t>(stage - 1);
      if (epochs[si] <= 0) continue;
      rep.stages[si].loss_before = evaluate_loss(targets, stage);
      for (int e = 0; e < epochs[si]; ++e) run_epoch(targets, stage);
      rep.stages[si].loss_after = evaluate_loss(targets, stage);
    }
    return rep;
  }

  /// The most recent `train_cap` signal indices with at least one step of context.
  std::vector<std::size_t> training_targets() const {
    std::vector<std::size_t> targets;
    const std::size_t first = signals_.size() > cfg_.train_cap ? signals_.size() - cfg_.train_cap : 1;
    for (std::size_t k = std::max<std::size_t>(first, 1); k < signals_.size(); ++k) targets.push_back(k);
    return targets;
  }

  /// One shuffled pass of Adam minibatches over `targets` with the loss of `stage`.
  void run_epoch(std::vector<std::size_t>& targets, int stage) {
    std::shuffle(targets.begin(), targets.end(), rng_);
    for (std::size_t b0 = 0; b0 < targets.size(); b0 += cfg_.batch) {
      const std::size_t b1 = std::min(targets.size(), b0 + cfg_.batch);
      std::vector<std::size_t> batch(targets.begin() + static_cast<std::ptrdiff_t>(b0),
                                     targets.begin() + static_cast<std::ptrdiff_t>(b1));
      ad::backward(batch_loss(batch, stage));
      ad::adam_step(*params_, cfg_.adam);
    }
  }

  /// Mean stage loss over the given targets, no gradients.
  double evaluate_loss(std::span<const std::size_t> targets, int stage) {
    ad::NoGradGuard guard;
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < targets.size(); b0 += cfg_.batch) {
      const std::size_t b1 = std::min(targets.size(), b0 + cfg_.batch);
      std::vector<std::size_t> batch(targets.begin() + static_cast<std::ptrdiff_t>(b0),
                                     targets.begin() + static_cast<std::ptrdiff_t>(b1));
      total += batch_loss(batch, stage).item() * static_cast<double>(batch.size());
    }
    return total / static_cast<double>(targets.size());
  }

  /// Running error at level i as seen with the first `count` signals, padding with ones.
  double running_error(std::size_t level, std::size_t count) const {
    const std::size_t have = std::min(cfg_.w, count);
    double total = static_cast<double>(cfg_.w - have);
    for (std::size_t k = count - have; k < count; ++k) total += signals_[k].errs[level];
    return total / static_cast<double>(cfg_.w);
  }

  /// Predicted raw ladder (score units) for the next target, without touching any state.
  std::vector<double> peek_q_raw(std::int64_t origin) const {
    ad::NoGradGuard guard;
    const auto out = net_.forward(*params_, build_input({signals_.size()}, {origin}));
    std::vector<double> q(cfg_.ladder.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = out.q_raw(0, i) * scale_;
    return q;
  }

  /// Raw ladders (score units) the predictor assigns to the given stored targets.
  std::vector<std::vector<double>> fitted_q_raw(std::span<const std::size_t> targets) const {
    ad::NoGradGuard guard;
    std::vector<std::vector<double>> out;
    for (std::size_t b0 = 0; b0 < targets.size(); b0 += cfg_.batch) {
      const std::size_t b1 = std::min(targets.size(), b0 + cfg_.batch);
      const std::vector<std::size_t> ends(targets.begin() + static_cast<std::ptrdiff_t>(b0),
                                          targets.begin() + static_cast<std::ptrdiff_t>(b1));
      std::vector<std::int64_t> origins;
      for (std::size_t k : ends) origins.push_back(signals_[k].origin);
      const auto res = net_.forward(*params_, build_input(ends, origins));
      for (std::size_t b = 0; b < ends.size(); ++b) {
        std::vector<double> q(cfg_.ladder.size());
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = res.q_raw(b, i) * scale_;
        out.push_back(std::move(q));
      }
    }
    return out;
  }

  const NccConfig& config() const { return cfg_; }
  std::span<const double> delta() const { return delta_; }
  std::span<const double> last_running_errors() const { return last_running_; }
  double scale() const { return scale_; }
  const std::vector<Signal>& signals() const { return signals_; }
  ad::ParamStore& params() { return *params_; }
  const ad::ParamStore& params() const { return *params_; }
  std::shared_ptr<ad::ParamStore> shared_params() const { return params_; }
  const TrainReport& last_train() const { return last_train_; }
  std::size_t observed() const { return observed_; }

  /// Replaces the predictor weights (e.g. with a pretrained store) and marks it trained.
  void load_params(const ad::ParamStore& p) {
    for (const auto& [name, slot] : params_->slots()) {
      if (!p.contains(name)) fail(ErrorKind::Schema, "ncc: parameter '" + name + "' missing from the loaded store");
    }
    params_ = std::make_shared<ad::ParamStore>(p.clone());
    trained_ = true;
  }

  /// Overrides the warmup-median score scale, e.g. to keep a pretrained model's units.
  void set_scale(double s) {
    if (!(s > 0.0)) fail(ErrorKind::InvalidParameter, "ncc: scale must be positive");
    scale_ = s;
  }

  nlohmann::json checkpoint() const {
    nlohmann::json j;
    j["params"] = params_->to_json();
    j["delta"] = delta_;
    j["scale"] = scale_;
    j["observed"] = observed_;
    j["trained"] = trained_;
    j["warm_count"] = warm_count_;
    j["origin_known"] = origin_known_;
    j["first_origin"] = first_origin_;
    j["pending_origins"] = pending_origins_;
    std::ostringstream rng;
    rng << rng_;
    j["rng"] = rng.str();
    nlohmann::json sig = nlohmann::json::array();
    for (const auto& s : signals_) sig.push_back({{"errs", s.errs}, {"q", s.q}, {"delta", s.delta}, {"s", s.s}, {"origin", s.origin}});
    j["signals"] = std::move(sig);
    return j;
  }

  /// Restores state saved by checkpoint() into a controller built from the same config.
  void restore(const nlohmann::json& j) {
    try {
      params_ = std::make_shared<ad::ParamStore>(ad::ParamStore::from_json(j.at("params")));
      delta_ = j.at("delta").get<std::vector<double>>();
      scale_ = j.at("scale").get<double>();
      observed_ = j.at("observed").get<std::size_t>();
      trained_ = j.at("trained").get<bool>();
      warm_count_ = j.at("warm_count").get<std::size_t>();
      origin_known_ = j.at("origin_known").get<bool>();
      first_origin_ = j.at("first_origin").get<std::int64_t>();
      pending_origins_ = j.at("pending_origins").get<std::vector<std::int64_t>>();
      std::istringstream rng(j.at("rng").get<std::string>());
      rng >> rng_;
      signals_.clear();
      for (const auto& s : j.at("signals")) {
        signals_.push_back({s.at("errs").get<std::vector<int>>(), s.at("q").get<std::vector<double>>(),
                            s.at("delta").get<std::vector<double>>(), s.at("s").get<double>(),
                            s.at("origin").get<std::int64_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Schema, std::string("ncc checkpoint: ") + e.what());
    }
    if (delta_.size() != cfg_.ladder.size()) fail(ErrorKind::Schema, "ncc checkpoint: ladder size mismatch");
  }

 private:
  /// Network input for windows ending just before signal index `ends[b]`, issued at `origins[b]`.
  nn::PredictorInput build_input(const std::vector<std::size_t>& ends, const std::vector<std::int64_t>& origins) const {
    const std::size_t B = ends.size(), L = cfg_.encoder.window, n = cfg_.ladder.size();
    nn::PredictorInput in;
    for (std::size_t step = 0; step < L; ++step) {
      std::vector<double> e(B * n), q(B * n), s(B);
      for (std::size_t b = 0; b < B; ++b) {
        // Position of this step in the signal sequence; negative means padding.
        const auto idx = static_cast<std::ptrdiff_t>(ends[b]) - static_cast<std::ptrdiff_t>(L) + static_cast<std::ptrdiff_t>(step);
        if (idx < 0) {
          std::fill_n(e.begin() + static_cast<std::ptrdiff_t>(b * n), n, 1.0);
          continue;
        }
        const Signal& sig = signals_[static_cast<std::size_t>(idx)];
        for (std::size_t i = 0; i < n; ++i) {
          e[b * n + i] = sig.errs[i];
          q[b * n + i] = std::isfinite(sig.q[i]) ? sig.q[i] / scale_ : 0.0;
        }
        s[b] = sig.s / scale_;
      }
      in.errs.push_back(ad::Tensor::constant({B, n}, std::move(e)));
      in.quantiles.push_back(ad::Tensor::constant({B, n}, std::move(q)));
      in.scores.push_back(ad::Tensor::constant({B, 1}, std::move(s)));
    }
    const std::size_t sd = cfg_.encoder.static_dim;
    std::vector<double> st(B * sd);
    for (std::size_t b = 0; b < B; ++b) {
      st[b * sd] = static_cast<double>(tau_);
      for (std::size_t j = 0; j < cfg_.static_extra.size(); ++j) st[b * sd + 1 + j] = cfg_.static_extra[j];
    }
    in.static_features = ad::Tensor::constant({B, sd}, std::move(st));
    for (std::size_t v = 0; v < cfg_.encoder.views.size(); ++v) {
      const std::size_t dim = cfg_.encoder.views[v].dim;
      std::vector<ad::Tensor> seq;
      const std::size_t len = cfg_.encoder.views[v].kind == nn::ViewKind::Sequence ? L : 1;
      for (std::size_t step = 0; step < len; ++step) {
        std::vector<double> vals(B * dim, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
          const std::int64_t at = origins[b] - static_cast<std::int64_t>(len - 1 - step);
          if (v < views_.size() && at >= 0 && static_cast<std::size_t>(at) < views_[v].size()) {
            vals[b * dim] = views_[v][static_cast<std::size_t>(at)];
          }
        }
        seq.push_back(ad::Tensor::constant({B, dim}, std::move(vals)));
      }
      in.views.push_back(std::move(seq));
    }
    return in;
  }

  ad::Tensor batch_loss(const std::vector<std::size_t>& targets, int stage) {
    const std::size_t B = targets.size(), n = cfg_.ladder.size();
    std::vector<std::int64_t> origins;
    std::vector<double> s(B), delta(B * n), cov(B * n);
    for (std::size_t b = 0; b < B; ++b) {
      const Signal& sig = signals_[targets[b]];
      origins.push_back(sig.origin);
      s[b] = sig.s / scale_;
      for (std::size_t i = 0; i < n; ++i) {
        delta[b * n + i] = sig.delta[i] / scale_;
        cov[b * n + i] = cov_indicator(running_error(i, targets[b]), cfg_.ladder[i]);
      }
    }
    const auto out = net_.forward(*params_, build_input(targets, origins));
    const ad::Tensor st = ad::Tensor::constant({B, 1}, std::move(s));
    // Losses act on the conformalized ladder that target actually faced.
    const ad::Tensor q = out.q_raw + ad::Tensor::constant({B, n}, std::move(delta));
    ad::Tensor loss = losses::quantile(st, q, cfg_.ladder) * cfg_.lambdas.q;
    if (stage >= 2) {
      const ad::Tensor se = losses::soft_error(st, q, cfg_.k);
      loss = loss + losses::coverage(se, ad::Tensor::constant({B, n}, std::move(cov))) * cfg_.lambdas.c +
             losses::efficiency(st, q, se) * cfg_.lambdas.e;
    }
    if (stage >= 3) loss = loss + losses::monotonicity(q, cfg_.ladder) * cfg_.lambdas.m;
    return loss;
  }

  NccConfig cfg_;
  int tau_ = 1;
  std::mt19937_64 rng_;
  std::shared_ptr<ad::ParamStore> params_;
  nn::QuantilePredictor net_;
  std::vector<double> delta_;
  std::vector<double> last_running_;
  std::vector<Signal> signals_;
  std::vector<std::span<const double>> views_;
  std::vector<std::int64_t> pending_origins_;
  double scale_ = 0.0;
  std::size_t warm_count_ = 0;
  std::size_t observed_ = 0;
  bool trained_ = false;
  bool origin_known_ = false;
  std::int64_t first_origin_ = 0;
  TrainReport last_train_;
};

/// Stage schedule over several controllers sharing one parameter store: every epoch visits each
/// controller's windows in turn.
inline void train_jointly(const std::vector<NccController*>& controllers, const Stages& stages) {
  std::vector<std::vector<std::size_t>> targets;
  for (auto* c : controllers) targets.push_back(c->training_targets());
  const std::array<int, 3> epochs{stages.s1, stages.s2, stages.s3};
  for (int stage = 1; stage <= 3; ++stage) {
    for (int e = 0; e < epochs[static_cast<std::size_t>(stage - 1)]; ++e) {
      for (std::size_t r = 0; r < controllers.size(); ++r) controllers[r]->run_epoch(targets[r], stage);
    }
  }
}

// ---------------------------------------------------------------------------
// Single-step driver for score streams (tau = 1): score the arriving y against the pending
// ladder, feed it back, issue the next ladder.

struct NccStepper {
  NccController& controller;
  std::optional<std::pair<double, Prediction>> pending;  // (y_hat, ladder) for the next target

  void issue(const Context& ctx, double y_hat) { pending = std::pair{y_hat, controller.predict(ctx)}; }
};

struct StepOutput {
  StepRecord record;
  QuantileLadder next;
};

inline StepOutput ncc_step(NccStepper& st, std::int64_t t, double y, const Context& ctx, double next_y_hat) {
  if (!st.pending) fail(ErrorKind::PipelineOrder, "ncc_step: no base forecast issued for time " + std::to_string(t));
  auto [y_hat, pred] = std::move(*st.pending);
  st.pending.reset();
  StepRecord rec = make_record(t, 1, y, y_hat, std::move(pred.ladder));
  rec.tta_iters = pred.tta_iters;
  rec.tta_incomplete = pred.tta_incomplete;
  st.controller.observe(rec);
  st.issue(ctx, next_y_hat);
  return {rec, st.pending->second.ladder};
}

}  // namespace ncc
