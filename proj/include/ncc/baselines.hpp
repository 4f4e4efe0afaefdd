#pragma once

// Comparison controllers: split conformal (CF-RNN's conformal layer), NEXCP weighted
// quantiles, ACI and the tracker + integrator part of conformal PID control.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ncc/controller.hpp"
#include "ncc/core.hpp"
#include "ncc/error.hpp"

namespace ncc::baselines {

/// Order-statistic index ceil((n+1)(1-alpha)), guarded against round-off just above an integer.
inline long split_cp_rank(std::size_t n, double alpha) {
  const double x = (static_cast<double>(n) + 1.0) * (1.0 - alpha);
  return static_cast<long>(std::ceil(x - 1e-9));
}

/// Split-CP quantile of an already sorted buffer; +inf when the rank exceeds n, -inf (empty) when it is 0.
inline double split_cp_quantile_sorted(std::span<const double> sorted, double alpha) {
  if (sorted.empty()) fail(ErrorKind::InsufficientData, "split_cp_quantile: empty calibration buffer");
  const long k = split_cp_rank(sorted.size(), alpha);
  if (k > static_cast<long>(sorted.size())) return kInf;
  if (k <= 0) return -kInf;
  return sorted[static_cast<std::size_t>(k - 1)];
}

inline double split_cp_quantile(std::span<const double> scores, double alpha) {
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  return split_cp_quantile_sorted(s, alpha);
}

/// Per-horizon split-CP ladders; Bonferroni divides every alpha by the number of horizons.
inline std::vector<QuantileLadder> cfrnn_ladder(const std::vector<std::vector<double>>& scores_per_horizon,
                                                const AlphaLadder& ladder, bool bonferroni) {
  const double H = static_cast<double>(scores_per_horizon.size());
  std::vector<QuantileLadder> out;
  for (const auto& scores : scores_per_horizon) {
    std::vector<double> s(scores.begin(), scores.end());
    std::sort(s.begin(), s.end());
    std::vector<double> q;
    for (double a : ladder.alphas()) q.push_back(split_cp_quantile_sorted(s, bonferroni ? a / H : a));
    out.push_back(QuantileLadder::from_conformal(std::move(q)));
  }
  return out;
}

/// Weighted (1-alpha) quantile with weight rho^(T-i) on score i (the newest has weight 1) and a unit
/// point mass at +inf, all normalized.
inline double nexcp_quantile(std::span<const double> scores, double rho, double alpha) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorKind::InvalidParameter, "nexcp: decay must lie in (0,1]");
  if (scores.empty()) fail(ErrorKind::InsufficientData, "nexcp: empty calibration buffer");
  const std::size_t T = scores.size();
  std::vector<std::pair<double, double>> sw;
  sw.reserve(T);
  double total = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double w = std::pow(rho, static_cast<double>(T - 1 - i));
    sw.emplace_back(scores[i], w);
    total += w;
  }
  std::sort(sw.begin(), sw.end());
  double cum = 0.0;
  for (std::size_t i = 0; i < sw.size(); ++i) {
    cum += sw[i].second;
    // Ties share one cumulative value.
    if (i + 1 < sw.size() && sw[i + 1].first == sw[i].first) continue;
    if (cum / total >= 1.0 - alpha - 1e-12) return sw[i].first;
  }
  return kInf;
}

inline double aci_step(double alpha_t, int err, double eta, double alpha) { return alpha_t + eta * (alpha - err); }

/// Tan-saturated integrator r(x) = K_I * tan(clip(x log(t+1) / ((t+1) C), +-(pi/2 - 1e-3))).
inline double cpid_integrator(double x, std::size_t t, double k_i, double c) {
  if (k_i == 0.0 || x == 0.0) return 0.0;
  if (!(c > 0.0)) fail(ErrorKind::InvalidParameter, "cpid: saturation constant must be positive");
  const double tp1 = static_cast<double>(t) + 1.0;
  const double lim = std::numbers::pi / 2.0 - 1e-3;
  return k_i * std::tan(std::clamp(x * std::log(tp1) / (tp1 * c), -lim, lim));
}

/// q_{t+1} = q_t + eta (err - alpha) + r(sum of past (err - alpha)).
inline double cpid_step(double q_t, int err, double eta, double alpha, double integrator_sum, double k_i,
                        std::size_t t, double c = 1.0) {
  return q_t + eta * (err - alpha) + cpid_integrator(integrator_sum, t, k_i, c);
}

/// True iff eta (a1 - a2 + 1) > a2_t - a1_t: after a step where level 1 covers and level 2 misses,
/// ACI's adaptive rates cross.
inline bool aci_crossing_witness(double alpha1_t, double alpha2_t, double eta, double alpha1, double alpha2) {
  if (!(alpha1 < alpha2)) fail(ErrorKind::InvalidInput, "aci_crossing_witness: requires alpha1 < alpha2");
  return eta * (alpha1 - alpha2 + 1.0) > alpha2_t - alpha1_t;
}

// ---------------------------------------------------------------------------
// Controllers

/// Append-only score buffer kept sorted for order-statistic lookups.
class SortedScores {
 public:
  void insert(double s) { data_.insert(std::upper_bound(data_.begin(), data_.end(), s), s); }
  std::span<const double> sorted() const { return data_; }
  std::size_t size() const { return data_.size(); }

 private:
  std::vector<double> data_;
};

/// Split CP over every score seen so far, one alpha per level (divided by `alpha_divisor` for Bonferroni).
class SplitCpController final : public Controller {
 public:
  SplitCpController(AlphaLadder ladder, double alpha_divisor = 1.0) : ladder_(std::move(ladder)), div_(alpha_divisor) {
    if (!(div_ >= 1.0)) fail(ErrorKind::InvalidParameter, "splitcp: Bonferroni divisor must be >= 1");
  }
  std::string name() const override { return "splitcp"; }
  void warm_start(std::span<const double> scores) override {
    for (double s : scores) buf_.insert(s);
  }
  Prediction predict(const Context&) override {
    std::vector<double> q;
    for (double a : ladder_.alphas()) q.push_back(split_cp_quantile_sorted(buf_.sorted(), a / div_));
    return {QuantileLadder::from_conformal(std::move(q))};
  }
  void observe(const StepRecord& rec) override { buf_.insert(rec.s); }

 private:
  AlphaLadder ladder_;
  double div_;
  SortedScores buf_;
};

class NexcpController final : public Controller {
 public:
  NexcpController(AlphaLadder ladder, double rho = 0.99) : ladder_(std::move(ladder)), rho_(rho) {
    if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorKind::InvalidParameter, "nexcp: decay must lie in (0,1]");
  }
  std::string name() const override { return "nexcp"; }
  void warm_start(std::span<const double> scores) override { scores_.assign(scores.begin(), scores.end()); }
  Prediction predict(const Context&) override {
    if (scores_.empty()) fail(ErrorKind::InsufficientData, "nexcp: empty calibration buffer");
    // One weighted walk serves every level: thresholds 1 - alpha increase along the ladder.
    const std::size_t T = scores_.size();
    std::vector<std::pair<double, double>> sw;
    sw.reserve(T);
    double total = 1.0, w = 1.0;
    for (std::size_t i = T; i-- > 0;) {
      sw.emplace_back(scores_[i], w);
      total += w;
      w *= rho_;
    }
    std::sort(sw.begin(), sw.end());
    std::vector<double> q(ladder_.size(), kInf);
    std::size_t level = 0;
    double cum = 0.0;
    for (std::size_t i = 0; i < sw.size() && level < ladder_.size(); ++i) {
      cum += sw[i].second;
      if (i + 1 < sw.size() && sw[i + 1].first == sw[i].first) continue;
      while (level < ladder_.size() && cum / total >= 1.0 - ladder_[level] - 1e-12) q[level++] = sw[i].first;
    }
    return {QuantileLadder::from_conformal(std::move(q))};
  }
  void observe(const StepRecord& rec) override { scores_.push_back(rec.s); }

 private:
  AlphaLadder ladder_;
  double rho_;
  std::vector<double> scores_;
};

/// ACI: per-level adaptive rate, quantile of all scores seen so far at 1 - alpha_t.
class AciController final : public Controller {
 public:
  AciController(AlphaLadder ladder, double eta = 0.05) : ladder_(std::move(ladder)), eta_(eta) {
    if (!(eta > 0.0)) fail(ErrorKind::InvalidParameter, "aci: eta must be positive");
    alpha_t_.assign(ladder_.alphas().begin(), ladder_.alphas().end());
  }
  std::string name() const override { return "aci"; }
  void warm_start(std::span<const double> scores) override {
    for (double s : scores) buf_.insert(s);
  }
  Prediction predict(const Context&) override {
    std::vector<double> q;
    for (double a : alpha_t_) q.push_back(lookup(a));
    return {QuantileLadder::from_conformal(std::move(q))};
  }
  void observe(const StepRecord& rec) override {
    for (std::size_t i = 0; i < alpha_t_.size(); ++i) alpha_t_[i] = aci_step(alpha_t_[i], rec.errs[i], eta_, ladder_[i]);
    buf_.insert(rec.s);
  }
  std::span<const double> alpha_t() const { return alpha_t_; }

 private:
  double lookup(double a) const {
    if (a <= 0.0) return kInf;
    const double n = static_cast<double>(buf_.size());
    return split_cp_quantile_sorted(buf_.sorted(), std::clamp(a, 1.0 / (n + 1.0), 1.0));
  }

  AlphaLadder ladder_;
  double eta_;
  std::vector<double> alpha_t_;
  SortedScores buf_;
};

/// Quantile tracker plus saturated error integrator. The tracker state and the integrator sum are
/// kept apart; the emitted quantile is tracker + r(sum).
class CpidController final : public Controller {
 public:
  struct Params {
    double eta = 0.1;   // score units
    double k_i = 1.0;   // score units
    double c = 1.0;
    // When positive, eta is relative: each step uses eta * max of the last `window` scores.
    std::size_t window = 0;
  };

  CpidController(AlphaLadder ladder, Params p) : ladder_(std::move(ladder)), p_(p) {
    if (!(p_.eta > 0.0)) fail(ErrorKind::InvalidParameter, "cpid: eta must be positive");
  }
  std::string name() const override { return "cpid"; }
  void warm_start(std::span<const double> scores) override {
    std::vector<double> s(scores.begin(), scores.end());
    std::sort(s.begin(), s.end());
    tracker_.clear();
    for (double a : ladder_.alphas()) {
      const double q = split_cp_quantile_sorted(s, a);
      tracker_.push_back(std::isfinite(q) ? q : s.back());
    }
    sums_.assign(ladder_.size(), 0.0);
    recent_.assign(scores.begin(), scores.end());
    trim_recent();
  }
  Prediction predict(const Context&) override {
    std::vector<double> q(ladder_.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = tracker_[i] + cpid_integrator(sums_[i], t_, p_.k_i, p_.c);
    return {QuantileLadder::from_conformal(std::move(q))};
  }
  void observe(const StepRecord& rec) override {
    const double eta = step_size();
    for (std::size_t i = 0; i < tracker_.size(); ++i) {
      tracker_[i] = cpid_step(tracker_[i], rec.errs[i], eta, ladder_[i], 0.0, 0.0, t_);
      sums_[i] += rec.errs[i] - ladder_[i];
    }
    if (p_.window > 0) {
      recent_.push_back(rec.s);
      trim_recent();
    }
    ++t_;
  }

 private:
  double step_size() const {
    if (p_.window == 0 || recent_.empty()) return p_.eta;
    const double m = *std::max_element(recent_.begin(), recent_.end());
    return m > 0.0 ? p_.eta * m : p_.eta;
  }
  void trim_recent() {
    if (p_.window == 0) {
      recent_.clear();
      return;
    }
    while (recent_.size() > p_.window) recent_.pop_front();
  }

  AlphaLadder ladder_;
  Params p_;
  std::vector<double> tracker_;
  std::vector<double> sums_;
  std::deque<double> recent_;
  std::size_t t_ = 0;
};

}  // namespace ncc::baselines
