#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ncc/core.hpp"
#include "ncc/error.hpp"

namespace ncc::metrics {

struct MetricReport {
  double cs = 0.0;
  double wis = 0.0;
  double crps = 0.0;
  double dcs = 0.0;
  std::vector<double> coverage;  // per alpha index
  std::size_t n_steps = 0;
};

/// Pinball loss rho_tau(u) = max(tau * u, (tau - 1) * u).
inline double pinball(double tau, double u) { return std::max(tau * u, (tau - 1.0) * u); }

inline void require_records(std::span<const StepRecord> records, const char* what) {
  if (records.empty()) fail(ErrorKind::InsufficientData, std::string(what) + ": empty record stream");
}

inline double empirical_coverage(std::span<const StepRecord> records, std::size_t alpha_index) {
  require_records(records, "empirical_coverage");
  double misses = 0.0;
  for (const auto& r : records) {
    if (alpha_index >= r.errs.size()) {
      fail(ErrorKind::InvalidInput, "empirical_coverage: alpha index " + std::to_string(alpha_index) + " out of range");
    }
    misses += r.errs[alpha_index];
  }
  return 1.0 - misses / static_cast<double>(records.size());
}

/// Mean |coverage(c) - c| over the ladder's confidence levels c = 1 - alpha.
inline double calibration_score(std::span<const StepRecord> records, const AlphaLadder& ladder) {
  require_records(records, "calibration_score");
  double total = 0.0;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    total += std::abs(empirical_coverage(records, i) - (1.0 - ladder[i]));
  }
  return total / static_cast<double>(ladder.size());
}

/// Interval score of one central interval. Empty intervals count as the point [m, m].
inline double interval_score(double y, const Interval& iv, double alpha, double m) {
  if (!(alpha > 0.0)) fail(ErrorKind::InvalidParameter, "interval_score: alpha must be positive");
  const double l = iv.empty ? m : iv.lo;
  const double u = iv.empty ? m : iv.hi;
  double score = u - l;
  if (y < l) score += 2.0 / alpha * (l - y);
  if (y > u) score += 2.0 / alpha * (y - u);
  return score;
}

/// Weighted interval score with w0 = 1/2 on the median and w_k = alpha_k / 2.
inline double wis(double y, double median, std::span<const Interval> intervals, const AlphaLadder& ladder) {
  if (intervals.size() != ladder.size()) fail(ErrorKind::InvalidInput, "wis: interval count does not match ladder");
  double total = 0.5 * std::abs(y - median);
  for (std::size_t k = 0; k < ladder.size(); ++k) total += ladder[k] / 2.0 * interval_score(y, intervals[k], ladder[k], median);
  return total / (static_cast<double>(ladder.size()) + 0.5);
}

/// CRPS from predictive quantiles: (2/L) * sum of pinball losses.
inline double crps(double y, std::span<const double> levels, std::span<const double> values) {
  if (levels.size() != values.size() || levels.empty()) fail(ErrorKind::InvalidInput, "crps: levels/values mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0) || (i > 0 && !(levels[i] > levels[i - 1]))) {
      fail(ErrorKind::InvalidInput, "crps: levels must be strictly increasing in (0,1)");
    }
    if (i > 0 && values[i] < values[i - 1]) {
      fail(ErrorKind::InvalidInput, "crps: quantile values cross at level " + std::to_string(levels[i]));
    }
    total += pinball(levels[i], y - values[i]);
  }
  return 2.0 * total / static_cast<double>(levels.size());
}

inline double dcs(std::span<const StepRecord> records, const AlphaLadder& ladder) {
  require_records(records, "dcs");
  std::size_t ok = 0;
  for (const auto& r : records) ok += is_consistent(r.intervals, ladder) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

/// Replaces a record's ladder by its ascending rearrangement and rebuilds errors and intervals.
inline StepRecord sorted_record(const StepRecord& rec, const AlphaLadder& ladder) {
  QuantileLadder q = rec.ladder;
  q.q_conf = sort_ladder(q.q_conf, ladder);
  StepRecord out = make_record(rec.t, rec.tau, rec.y, rec.y_hat, std::move(q));
  out.tta_iters = rec.tta_iters;
  out.tta_incomplete = rec.tta_incomplete;
  return out;
}

/// Interval with infinite ends pulled in to y_hat +/- cap.
inline Interval capped(const Interval& iv, double y_hat, double cap) {
  if (iv.empty) return iv;
  return {std::max(iv.lo, y_hat - cap), std::min(iv.hi, y_hat + cap), false};
}

/// Quantile levels {a/2, 1/2, 1 - a/2} and values {lo, y_hat, hi} of one record, sorted by value.
inline double record_crps(const StepRecord& r, const AlphaLadder& ladder, double cap) {
  std::vector<double> levels, values;
  levels.reserve(2 * ladder.size() + 1);
  values.reserve(2 * ladder.size() + 1);
  for (std::size_t k = ladder.size(); k-- > 0;) {
    const Interval iv = capped(r.intervals[k], r.y_hat, cap);
    levels.push_back(ladder[k] / 2.0);
    values.push_back(iv.empty ? r.y_hat : iv.lo);
  }
  levels.push_back(0.5);
  values.push_back(r.y_hat);
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    const Interval iv = capped(r.intervals[k], r.y_hat, cap);
    levels.push_back(1.0 - ladder[k] / 2.0);
    values.push_back(iv.empty ? r.y_hat : iv.hi);
  }
  std::sort(values.begin(), values.end());
  return crps(r.y, levels, values);
}

/// All metrics over one stream. Infinite interval ends are replaced by y_hat +/- the largest
/// score in the stream so WIS and CRPS stay finite. `sorted` applies sort_ladder first.
inline MetricReport evaluate(std::span<const StepRecord> records, const AlphaLadder& ladder, bool sorted = false) {
  require_records(records, "evaluate");
  std::vector<StepRecord> work;
  if (sorted) {
    work.reserve(records.size());
    for (const auto& r : records) work.push_back(sorted_record(r, ladder));
    records = work;
  }
  double cap = 0.0;
  for (const auto& r : records) cap = std::max(cap, r.s);

  MetricReport rep;
  rep.n_steps = records.size();
  rep.cs = calibration_score(records, ladder);
  rep.dcs = dcs(records, ladder);
  for (std::size_t i = 0; i < ladder.size(); ++i) rep.coverage.push_back(empirical_coverage(records, i));
  std::vector<Interval> ivs(ladder.size());
  for (const auto& r : records) {
    for (std::size_t k = 0; k < ladder.size(); ++k) ivs[k] = capped(r.intervals[k], r.y_hat, cap);
    rep.wis += wis(r.y, r.y_hat, ivs, ladder);
    rep.crps += record_crps(r, ladder, cap);
  }
  rep.wis /= static_cast<double>(records.size());
  rep.crps /= static_cast<double>(records.size());
  return rep;
}

}  // namespace ncc::metrics
