#pragma once

// Shared online interface for every conformal controller and the causal loop that drives it.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ncc/core.hpp"
#include "ncc/error.hpp"
#include "ncc/forecasters.hpp"

namespace ncc {

/// What a controller may look at when issuing a ladder: everything observed through `origin`.
struct Context {
  std::size_t origin = 0;  // index of the last observed point
  int tau = 1;
  std::span<const double> y;                      // y[0..origin]
  std::vector<std::span<const double>> views;     // each view[0..origin]
};

struct Prediction {
  QuantileLadder ladder;
  int tta_iters = 0;
  bool tta_incomplete = false;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Calibration scores from the warmup segment, oldest first. Called once before anything else.
  virtual void warm_start(std::span<const double> scores) = 0;
  /// Ladder for the target origin + tau.
  virtual Prediction predict(const Context& ctx) = 0;
  /// Feedback: the record of a target scored against the ladder issued for it.
  virtual void observe(const StepRecord& rec) = 0;
};

struct OnlineSeries {
  std::vector<double> y;
  std::vector<std::int64_t> t;              // optional; defaults to the row index
  std::vector<std::vector<double>> views;   // each the same length as y
};

struct OnlineOptions {
  std::size_t warmup = 100;
  int tau = 1;
};

struct OnlineResult {
  std::vector<double> warmup_scores;
  std::vector<StepRecord> records;
};

/// Warmup calibration scores: targets T <= warmup whose origin T - tau has enough history.
inline std::vector<double> warmup_scores(std::span<const double> y, fc::Forecaster& f, std::size_t warmup, int tau) {
  std::vector<double> scores;
  const std::size_t first = f.min_history() - 1 + static_cast<std::size_t>(tau);
  for (std::size_t T = first; T <= warmup && T < y.size(); ++T) {
    const double y_hat = f.forecast(y.first(T - static_cast<std::size_t>(tau) + 1), tau);
    scores.push_back(nonconformity(y[T], y_hat));
  }
  return scores;
}

/// Causal online loop for one horizon. At each time T > warmup the arriving y_T is scored against
/// the ladder issued at T - tau, the controller sees the record, then a ladder for T + tau is issued.
/// The first ladder is issued at T = warmup, so the stream has len(y) - warmup - tau records.
/// `on_record` (optional) sees each record as it is produced.
inline OnlineResult online_run(const OnlineSeries& series, fc::Forecaster& f, Controller& c, const OnlineOptions& opt,
                               const std::function<void(const StepRecord&)>& on_record = {}) {
  const std::size_t N = series.y.size();
  const auto tau = static_cast<std::size_t>(opt.tau);
  if (opt.tau < 1) fail(ErrorKind::InvalidParameter, "online: horizon must be >= 1");
  if (!series.t.empty() && series.t.size() != N) fail(ErrorKind::Shape, "online: time column length mismatch");
  for (const auto& v : series.views) {
    if (v.size() != N) fail(ErrorKind::Shape, "online: view length mismatch");
  }
  if (N <= opt.warmup + tau) {
    fail(ErrorKind::InsufficientData, "online: series of length " + std::to_string(N) + " leaves no steps after warmup " +
                                          std::to_string(opt.warmup) + " and horizon " + std::to_string(opt.tau));
  }
  if (opt.warmup + 1 < f.min_history() + tau) {
    fail(ErrorKind::InsufficientData, "online: warmup too short for the forecaster");
  }
  const std::span<const double> y(series.y);
  auto time_of = [&](std::size_t i) { return series.t.empty() ? static_cast<std::int64_t>(i) : series.t[i]; };
  auto context = [&](std::size_t origin) {
    Context ctx;
    ctx.origin = origin;
    ctx.tau = opt.tau;
    ctx.y = y.first(origin + 1);
    for (const auto& v : series.views) ctx.views.push_back(std::span<const double>(v).first(origin + 1));
    return ctx;
  };

  OnlineResult out;
  out.warmup_scores = warmup_scores(y, f, opt.warmup, opt.tau);
  if (out.warmup_scores.empty()) fail(ErrorKind::InsufficientData, "online: no warmup calibration scores");
  c.warm_start(out.warmup_scores);

  struct Pending {
    double y_hat;
    Prediction pred;
  };
  std::deque<Pending> pending;  // ladders issued for targets T+1 .. T+tau, oldest first
  auto issue = [&](std::size_t origin) {
    const double y_hat = f.forecast(y.first(origin + 1), opt.tau);
    pending.push_back({y_hat, c.predict(context(origin))});
  };

  issue(opt.warmup);
  out.records.reserve(N - opt.warmup - tau);
  for (std::size_t T = opt.warmup + 1; T < N; ++T) {
    if (T >= opt.warmup + tau) {
      Pending p = std::move(pending.front());
      pending.pop_front();
      StepRecord rec = make_record(time_of(T), opt.tau, y[T], p.y_hat, std::move(p.pred.ladder));
      rec.tta_iters = p.pred.tta_iters;
      rec.tta_incomplete = p.pred.tta_incomplete;
      c.observe(rec);
      if (on_record) on_record(rec);
      out.records.push_back(std::move(rec));
    }
    if (T + tau < N) issue(T);
  }
  return out;
}

}  // namespace ncc
