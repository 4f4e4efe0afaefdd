#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ncc/error.hpp"

namespace ncc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Ordered miscoverage rates a_1 > ... > a_n, all in (0, 1).
/// Index i is the key for every per-level quantity in a run.
class AlphaLadder {
 public:
  AlphaLadder() = default;

  explicit AlphaLadder(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.empty()) fail(ErrorKind::InvalidParameter, "alpha ladder must not be empty");
    for (std::size_t i = 0; i < alphas_.size(); ++i) {
      const double a = alphas_[i];
      if (!(a > 0.0 && a < 1.0)) {
        fail(ErrorKind::InvalidParameter, "alpha " + std::to_string(a) + " outside (0,1)");
      }
      if (i > 0 && !(a < alphas_[i - 1])) {
        fail(ErrorKind::InvalidParameter, "alpha ladder must be strictly decreasing");
      }
    }
  }

  /// The default eleven-level ladder.
  static AlphaLadder standard() {
    return AlphaLadder({0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.02});
  }

  std::size_t size() const noexcept { return alphas_.size(); }
  double operator[](std::size_t i) const { return alphas_[i]; }
  std::span<const double> alphas() const noexcept { return alphas_; }
  bool operator==(const AlphaLadder&) const = default;

 private:
  std::vector<double> alphas_;
};

/// Per-level quantiles in score units at one step.
struct QuantileLadder {
  std::vector<double> q_raw;   // predictor output before adjustment
  std::vector<double> delta;   // additive conformal adjustment
  std::vector<double> q_conf;  // quantile actually used for the interval

  static QuantileLadder from_conformal(std::vector<double> q) {
    QuantileLadder out;
    out.q_raw = q;
    out.delta.assign(q.size(), 0.0);
    out.q_conf = std::move(q);
    return out;
  }

  std::size_t size() const noexcept { return q_conf.size(); }
};

/// Closed prediction interval in target units. An empty interval contains nothing.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool empty = false;

  static Interval none() { return {0.0, 0.0, true}; }

  bool contains(double y) const { return !empty && lo <= y && y <= hi; }
  double width() const { return empty ? 0.0 : hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// One online step: the target, its forecast, the score and every per-level outcome.
struct StepRecord {
  std::int64_t t = 0;
  double y = 0.0;
  double y_hat = 0.0;
  int tau = 1;
  double s = 0.0;
  std::vector<int> errs;
  QuantileLadder ladder;
  std::vector<Interval> intervals;
  int tta_iters = 0;
  bool tta_incomplete = false;
};

// ---------------------------------------------------------------------------
// Score and error functions

/// Absolute-residual non-conformity score.
inline double nonconformity(double y, double y_hat) {
  if (!std::isfinite(y) || !std::isfinite(y_hat)) {
    fail(ErrorKind::InvalidInput, "nonconformity: non-finite input");
  }
  return std::abs(y - y_hat);
}

/// 1 when the score is not covered by the quantile; s == q counts as covered.
/// q may be +inf (always covers) or negative/-inf (never covers a non-negative score).
inline int coverage_error(double s, double q) {
  if (!std::isfinite(s) || std::isnan(q)) fail(ErrorKind::InvalidInput, "coverage_error: non-finite input");
  return s > q ? 1 : 0;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Differentiable surrogate of coverage_error with temperature k.
inline double soft_error(double s, double q, double k) {
  if (!(k > 0.0)) fail(ErrorKind::InvalidParameter, "soft_error: temperature must be positive");
  return sigmoid((s - q) / k);
}

/// Mean of the last w errors. Positions before the first observation count as errors.
inline double running_error(std::span<const int> errs, std::size_t w) {
  if (w == 0) fail(ErrorKind::InvalidParameter, "running_error: window must be >= 1");
  const std::size_t have = std::min(w, errs.size());
  double total = static_cast<double>(w - have);
  for (std::size_t i = errs.size() - have; i < errs.size(); ++i) total += errs[i];
  return total / static_cast<double>(w);
}

/// Inverts the absolute-residual score: {y : |y - y_hat| <= q}.
inline Interval interval_from_quantile(double y_hat, double q) {
  if (q < 0.0) return Interval::none();
  if (std::isinf(q)) return {-kInf, kInf, false};
  return {y_hat - q, y_hat + q, false};
}

/// Nesting check: for i < j (a_i > a_j) interval i must lie inside interval j.
inline bool is_consistent(std::span<const Interval> intervals, const AlphaLadder& ladder) {
  if (intervals.size() != ladder.size()) {
    fail(ErrorKind::InvalidInput, "is_consistent: " + std::to_string(intervals.size()) +
                                      " intervals for " + std::to_string(ladder.size()) + " levels");
  }
  // Nesting is transitive, so adjacent pairs suffice.
  for (std::size_t i = 0; i + 1 < intervals.size(); ++i) {
    const Interval& inner = intervals[i];
    const Interval& outer = intervals[i + 1];
    if (inner.empty) continue;
    if (outer.empty) return false;
    if (inner.lo < outer.lo || inner.hi > outer.hi) return false;
  }
  return true;
}

/// Monotone rearrangement: ascending values, so the largest quantile lands on the smallest alpha.
inline std::vector<double> sort_ladder(std::vector<double> q, const AlphaLadder& ladder) {
  if (q.size() != ladder.size()) fail(ErrorKind::InvalidInput, "sort_ladder: length mismatch");
  std::sort(q.begin(), q.end());
  return q;
}

/// Builds the per-level outcome of a ladder against an arriving observation.
inline StepRecord make_record(std::int64_t t, int tau, double y, double y_hat, QuantileLadder ladder) {
  StepRecord rec;
  rec.t = t;
  rec.tau = tau;
  rec.y = y;
  rec.y_hat = y_hat;
  rec.s = nonconformity(y, y_hat);
  rec.errs.reserve(ladder.size());
  rec.intervals.reserve(ladder.size());
  for (double q : ladder.q_conf) {
    rec.errs.push_back(coverage_error(rec.s, q));
    rec.intervals.push_back(interval_from_quantile(y_hat, q));
  }
  rec.ladder = std::move(ladder);
  return rec;
}

/// Time-ordered, append-only sequence of step records.
class History {
 public:
  void append(StepRecord rec) {
    if (!records_.empty() && rec.t <= records_.back().t) {
      fail(ErrorKind::PipelineOrder, "history: time " + std::to_string(rec.t) + " does not follow " +
                                         std::to_string(records_.back().t));
    }
    records_.push_back(std::move(rec));
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const StepRecord& operator[](std::size_t i) const { return records_[i]; }
  const StepRecord& back() const { return records_.back(); }
  std::span<const StepRecord> records() const noexcept { return records_; }

  /// Running error at level i over the last w records, padding with ones before the start.
  double running_error(std::size_t level, std::size_t w) const { return running_error_at(level, w, records_.size()); }

  /// Same, but as seen after only the first `count` records.
  double running_error_at(std::size_t level, std::size_t w, std::size_t count) const {
    if (w == 0) fail(ErrorKind::InvalidParameter, "running_error: window must be >= 1");
    const std::size_t have = std::min(w, count);
    double total = static_cast<double>(w - have);
    for (std::size_t k = count - have; k < count; ++k) total += records_[k].errs.at(level);
    return total / static_cast<double>(w);
  }

 private:
  std::vector<StepRecord> records_;
};

}  // namespace ncc
