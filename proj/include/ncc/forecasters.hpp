#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ncc/autodiff.hpp"
#include "ncc/core.hpp"
#include "ncc/error.hpp"
#include "ncc/neural.hpp"

namespace ncc::fc {

// ---------------------------------------------------------------------------
// AR(p)

struct ArModel {
  double intercept = 0.0;
  std::vector<double> coeffs;  // coeffs[j] multiplies y_{t-1-j}

  std::size_t order() const { return coeffs.size(); }
};

/// Least-squares AR(p) with intercept. Ridge penalizes the lag coefficients only.
inline ArModel fit_ar(std::span<const double> y, std::size_t p, double ridge = 0.0) {
  if (ridge < 0.0) fail(ErrorKind::InvalidParameter, "fit_ar: ridge must be >= 0");
  if (y.size() <= p + 1) {
    fail(ErrorKind::InsufficientData,
         "fit_ar: need more than " + std::to_string(p + 1) + " points, got " + std::to_string(y.size()));
  }
  const std::size_t n = y.size() - p;
  const std::size_t extra = ridge > 0.0 ? p : 0;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + extra), static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + extra));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t t = r + p;
    const auto ri = static_cast<Eigen::Index>(r);
    X(ri, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) X(ri, static_cast<Eigen::Index>(j + 1)) = y[t - 1 - j];
    b(ri) = y[t];
  }
  for (std::size_t j = 0; j < extra; ++j) {
    X(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(j + 1)) = std::sqrt(ridge);
  }
  // Minimum-norm solution, so rank-deficient designs (constant series) still have a unique answer.
  const Eigen::VectorXd beta = X.completeOrthogonalDecomposition().solve(b);
  ArModel m;
  m.intercept = beta(0);
  for (std::size_t j = 0; j < p; ++j) m.coeffs.push_back(beta(static_cast<Eigen::Index>(j + 1)));
  return m;
}

/// Iterated tau-step forecast from the end of `history`.
inline double predict_ar(const ArModel& m, std::span<const double> history, int tau) {
  if (tau < 1) fail(ErrorKind::InvalidParameter, "predict_ar: horizon must be >= 1");
  const std::size_t p = m.order();
  if (history.size() < p) fail(ErrorKind::InsufficientData, "predict_ar: history shorter than the lag order");
  std::vector<double> buf(history.end() - static_cast<std::ptrdiff_t>(p), history.end());
  double next = 0.0;
  for (int h = 0; h < tau; ++h) {
    next = m.intercept;
    for (std::size_t j = 0; j < p; ++j) next += m.coeffs[j] * buf[buf.size() - 1 - j];
    buf.push_back(next);
  }
  return next;
}

// ---------------------------------------------------------------------------
// Theta (theta = 2)

struct ThetaFit {
  double a = 0.0;  // trend intercept at t = 0
  double b = 0.0;  // trend slope
  double ses_alpha = 0.5;
  double level = 0.0;  // SES level of the theta line after the last point
};

inline ThetaFit fit_theta(std::span<const double> y) {
  if (y.size() < 3) fail(ErrorKind::InsufficientData, "theta: need at least 3 points");
  const double n = static_cast<double>(y.size());
  double tm = (n - 1.0) / 2.0, ym = 0.0;
  for (double v : y) ym += v;
  ym /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double dt = static_cast<double>(t) - tm;
    sxy += dt * (y[t] - ym);
    sxx += dt * dt;
  }
  ThetaFit f;
  f.b = sxy / sxx;
  f.a = ym - f.b * tm;

  std::vector<double> z(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) z[t] = 2.0 * y[t] - (f.a + f.b * static_cast<double>(t));

  double best_sse = kInf;
  for (int k = 1; k <= 9; ++k) {
    const double alpha = 0.1 * k;
    double level = z[0], sse = 0.0;
    for (std::size_t t = 1; t < z.size(); ++t) {
      const double e = z[t] - level;
      sse += e * e;
      level += alpha * e;
    }
    if (sse < best_sse) {
      best_sse = sse;
      f.ses_alpha = alpha;
      f.level = level;
    }
  }
  return f;
}

/// Average of the linear-trend extrapolation and the flat SES forecast of the theta line.
inline double theta_forecast(std::span<const double> y, int tau) {
  if (tau < 1) fail(ErrorKind::InvalidParameter, "theta: horizon must be >= 1");
  const ThetaFit f = fit_theta(y);
  const double trend = f.a + f.b * static_cast<double>(y.size() - 1 + static_cast<std::size_t>(tau));
  return 0.5 * trend + 0.5 * f.level;
}

// ---------------------------------------------------------------------------
// Online forecaster interface: forecast(history, tau) may only look at `history`.

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  /// Shortest history for which forecast() is defined.
  virtual std::size_t min_history() const = 0;
  virtual double forecast(std::span<const double> history, int tau) = 0;
};

/// AR(p) refit on a trailing window at every call.
class ArForecaster final : public Forecaster {
 public:
  ArForecaster(std::size_t p = 3, double ridge = 1e-6, std::size_t fit_window = 200)
      : p_(p), ridge_(ridge), fit_window_(fit_window) {
    if (fit_window_ <= p_ + 1) fail(ErrorKind::InvalidParameter, "ar: fit window must exceed p + 1");
  }

  std::string name() const override { return "ar"; }
  std::size_t min_history() const override { return p_ + 2; }

  double forecast(std::span<const double> history, int tau) override {
    const std::size_t n = std::min(history.size(), fit_window_);
    const auto recent = history.subspan(history.size() - n);
    return predict_ar(fit_ar(recent, p_, ridge_), recent, tau);
  }

 private:
  std::size_t p_;
  double ridge_;
  std::size_t fit_window_;
};

class ThetaForecaster final : public Forecaster {
 public:
  explicit ThetaForecaster(std::size_t fit_window = 200) : fit_window_(fit_window) {
    if (fit_window_ < 3) fail(ErrorKind::InvalidParameter, "theta: fit window must be >= 3");
  }
  std::string name() const override { return "theta"; }
  std::size_t min_history() const override { return 3; }
  double forecast(std::span<const double> history, int tau) override {
    const std::size_t n = std::min(history.size(), fit_window_);
    return theta_forecast(history.subspan(history.size() - n), tau);
  }

 private:
  std::size_t fit_window_;
};

// ---------------------------------------------------------------------------
// External predictions: CSV `t,tau,y_hat`, where t is the forecast origin.

struct ForecastBundle {
  std::string model;
  std::set<int> horizons;
  std::map<std::pair<std::int64_t, int>, double> values;  // (origin t, tau) -> forecast of y_{t+tau}

  bool contains(std::int64_t t, int tau) const { return values.count({t, tau}) > 0; }
  double at(std::int64_t t, int tau) const {
    const auto it = values.find({t, tau});
    if (it == values.end()) {
      fail(ErrorKind::PipelineOrder, "no forecast for origin " + std::to_string(t) + ", horizon " + std::to_string(tau));
    }
    return it->second;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::Schema, "row " + std::to_string(row) + ", column '" + column + "': not a number: '" + cell + "'");
  }
}

inline std::int64_t parse_integer(const std::string& cell, std::size_t row, const std::string& column) {
  const double v = parse_number(cell, row, column);
  if (std::floor(v) != v) {
    fail(ErrorKind::Schema, "row " + std::to_string(row) + ", column '" + column + "': not an integer: '" + cell + "'");
  }
  return static_cast<std::int64_t>(v);
}

inline ForecastBundle parse_external(std::istream& in, const std::string& model = "external") {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Schema, "external forecasts: empty file");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"t", "tau", "y_hat"}) {
    fail(ErrorKind::Schema, "external forecasts: header must be 't,tau,y_hat'");
  }
  ForecastBundle b;
  b.model = model;
  std::size_t row = 1;
  std::int64_t last_t = std::numeric_limits<std::int64_t>::min();
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) {
      fail(ErrorKind::Schema, "row " + std::to_string(row) + ": expected 3 cells, got " + std::to_string(cells.size()));
    }
    const auto t = parse_integer(cells[0], row, "t");
    const auto tau = parse_integer(cells[1], row, "tau");
    const double v = parse_number(cells[2], row, "y_hat");
    if (tau < 1) fail(ErrorKind::Schema, "row " + std::to_string(row) + ": tau must be >= 1");
    if (t < last_t) fail(ErrorKind::Schema, "row " + std::to_string(row) + ": origins must be non-decreasing");
    last_t = t;
    if (!b.values.emplace(std::pair{t, static_cast<int>(tau)}, v).second) {
      fail(ErrorKind::Schema, "row " + std::to_string(row) + ": duplicate (t, tau) = (" + std::to_string(t) + ", " +
                                  std::to_string(tau) + ")");
    }
    b.horizons.insert(static_cast<int>(tau));
  }
  if (b.values.empty()) fail(ErrorKind::Schema, "external forecasts: no rows");
  std::map<std::int64_t, std::set<int>> by_origin;
  for (const auto& [key, v] : b.values) by_origin[key.first].insert(key.second);
  for (const auto& [t, hs] : by_origin) {
    if (hs != b.horizons) fail(ErrorKind::Schema, "external forecasts: origin " + std::to_string(t) + " is missing a horizon");
  }
  return b;
}

inline ForecastBundle load_external(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return parse_external(in, path);
}

/// Replays a bundle. The origin of a call is times[len(history) - 1], or the row index if no times are given.
class ExternalForecaster final : public Forecaster {
 public:
  explicit ExternalForecaster(ForecastBundle b, std::vector<std::int64_t> times = {})
      : bundle_(std::move(b)), times_(std::move(times)) {}
  std::string name() const override { return "external"; }
  std::size_t min_history() const override { return 1; }
  double forecast(std::span<const double> history, int tau) override {
    const std::size_t i = history.size() - 1;
    const std::int64_t origin = times_.empty() ? static_cast<std::int64_t>(i) : times_.at(i);
    return bundle_.at(origin, tau);
  }

 private:
  ForecastBundle bundle_;
  std::vector<std::int64_t> times_;
};

// ---------------------------------------------------------------------------
// Small GRU forecaster: encodes the last `window` standardized values, a linear head
// emits all horizons at once. Trained once on the series prefix handed to fit().

struct GruForecasterConfig {
  std::size_t hidden = 16;
  std::size_t window = 16;
  int max_horizon = 1;
  int epochs = 30;
  std::size_t batch = 32;
  double lr = 5e-3;
  std::uint64_t seed = 0;
};

class GruForecaster final : public Forecaster {
 public:
  explicit GruForecaster(GruForecasterConfig cfg) : cfg_(cfg) {
    if (cfg_.window == 0 || cfg_.max_horizon < 1) fail(ErrorKind::InvalidParameter, "gru forecaster: bad config");
  }

  std::string name() const override { return "gru"; }
  std::size_t min_history() const override { return cfg_.window; }

  void fit(std::span<const double> y) {
    const std::size_t H = static_cast<std::size_t>(cfg_.max_horizon);
    if (y.size() < cfg_.window + H + 1) fail(ErrorKind::InsufficientData, "gru forecaster: series too short to fit");
    double m = 0.0, v = 0.0;
    for (double x : y) m += x;
    m /= static_cast<double>(y.size());
    for (double x : y) v += (x - m) * (x - m);
    mean_ = m;
    sd_ = std::sqrt(v / static_cast<double>(y.size()));
    if (!(sd_ > 0.0)) sd_ = 1.0;

    std::mt19937_64 rng(cfg_.seed);
    params_ = ad::ParamStore();
    gru_ = nn::Gru(params_, "fc.gru", 1, cfg_.hidden, rng);
    head_ = nn::Linear(params_, "fc.head", cfg_.hidden, H, rng);
    fitted_ = true;

    std::vector<std::size_t> ends;  // index of the last input value
    for (std::size_t e = cfg_.window - 1; e + H < y.size(); ++e) ends.push_back(e);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(ends.begin(), ends.end(), rng);
      for (std::size_t b0 = 0; b0 < ends.size(); b0 += cfg_.batch) {
        const std::size_t B = std::min(cfg_.batch, ends.size() - b0);
        std::vector<double> target(B * H);
        std::vector<std::vector<double>> steps(cfg_.window, std::vector<double>(B));
        for (std::size_t i = 0; i < B; ++i) {
          const std::size_t e = ends[b0 + i];
          for (std::size_t k = 0; k < cfg_.window; ++k) steps[k][i] = norm(y[e + 1 - cfg_.window + k]);
          for (std::size_t h = 0; h < H; ++h) target[i * H + h] = norm(y[e + 1 + h]);
        }
        std::vector<ad::Tensor> seq;
        for (auto& s : steps) seq.push_back(ad::Tensor::constant({B, 1}, std::move(s)));
        const ad::Tensor pred = head_.forward(params_, gru_.encode(params_, seq));
        ad::backward(ad::mean(ad::square(pred - ad::Tensor::constant({B, H}, std::move(target)))));
        ad::adam_step(params_, {.lr = cfg_.lr});
      }
    }
  }

  double forecast(std::span<const double> history, int tau) override {
    if (!fitted_) fail(ErrorKind::State, "gru forecaster: fit() has not been called");
    if (tau < 1 || tau > cfg_.max_horizon) fail(ErrorKind::InvalidParameter, "gru forecaster: horizon out of range");
    if (history.size() < cfg_.window) fail(ErrorKind::InsufficientData, "gru forecaster: history shorter than window");
    ad::NoGradGuard guard;
    std::vector<ad::Tensor> seq;
    for (std::size_t k = history.size() - cfg_.window; k < history.size(); ++k) {
      seq.push_back(ad::Tensor::scalar(norm(history[k])));
    }
    const ad::Tensor out = head_.forward(params_, gru_.encode(params_, seq));
    return out(0, static_cast<std::size_t>(tau - 1)) * sd_ + mean_;
  }

 private:
  double norm(double x) const { return (x - mean_) / sd_; }

  GruForecasterConfig cfg_;
  ad::ParamStore params_;
  nn::Gru gru_;
  nn::Linear head_;
  double mean_ = 0.0;
  double sd_ = 1.0;
  bool fitted_ = false;
};

}  // namespace ncc::fc
