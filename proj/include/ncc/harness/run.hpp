#pragma once

// Experiment orchestration over (seed x method x horizon x region), streaming per-step
// JSONL records and per-cell metric rows.

#include <cmath>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncc/baselines.hpp"
#include "ncc/controller.hpp"
#include "ncc/harness/config.hpp"
#include "ncc/harness/data.hpp"
#include "ncc/metrics.hpp"
#include "ncc/ncc.hpp"

namespace ncc::harness {

/// C-PID with k_i given in multiples of the warmup median score. Eta is too when no trailing
/// window is set.
class ScaledCpidController final : public Controller {
 public:
  ScaledCpidController(AlphaLadder ladder, baselines::CpidController::Params relative)
      : ladder_(std::move(ladder)), rel_(relative) {}
  std::string name() const override { return "cpid"; }
  void warm_start(std::span<const double> scores) override {
    const double scale = median(std::vector<double>(scores.begin(), scores.end()));
    const double s = scale > 0.0 ? scale : 1.0;
    inner_ = std::make_unique<baselines::CpidController>(ladder_, baselines::CpidController::Params{rel_.window > 0 ? rel_.eta : rel_.eta * s, rel_.k_i * s, rel_.c, rel_.window});
    inner_->warm_start(scores);
  }
  Prediction predict(const Context& ctx) override { return state().predict(ctx); }
  void observe(const StepRecord& rec) override { state().observe(rec); }

 private:
  baselines::CpidController& state() {
    if (!inner_) fail(ErrorKind::PipelineOrder, "cpid: used before warm_start");
    return *inner_;
  }
  AlphaLadder ladder_;
  baselines::CpidController::Params rel_;
  std::unique_ptr<baselines::CpidController> inner_;
};

/// Static code appended to the horizon feature: one-hot over regions, or a constant 1.
inline std::vector<double> region_code(std::size_t region, std::size_t n_regions) {
  if (n_regions <= 1) return {1.0};
  std::vector<double> v(n_regions, 0.0);
  v[region] = 1.0;
  return v;
}

inline NccConfig ncc_config_for(const ExperimentConfig& cfg, const Dataset& ds, std::size_t region, std::uint64_t seed) {
  NccConfig c = cfg.ncc;
  c.ladder = cfg.ladder;
  c.seed = seed;
  c.static_extra = region_code(region, ds.regions.size());
  c.encoder.views.clear();
  for (const auto& v : ds.view_names) c.encoder.views.push_back({v, nn::ViewKind::Sequence, 1});
  return c;
}

inline std::unique_ptr<Controller> make_controller(const ExperimentConfig& cfg, Method m, int tau, const Dataset& ds,
                                                   std::size_t region, std::uint64_t seed) {
  switch (m) {
    case Method::Ncc: return std::make_unique<NccController>(ncc_config_for(cfg, ds, region, seed), tau);
    case Method::Aci: return std::make_unique<baselines::AciController>(cfg.ladder, cfg.aci_eta);
    case Method::Cpid: return std::make_unique<ScaledCpidController>(cfg.ladder, cfg.cpid);
    case Method::Nexcp: return std::make_unique<baselines::NexcpController>(cfg.ladder, cfg.nexcp_rho);
    case Method::SplitCp: {
      const double div = cfg.bonferroni ? static_cast<double>(cfg.horizons.size()) : 1.0;
      return std::make_unique<baselines::SplitCpController>(cfg.ladder, div);
    }
  }
  fail(ErrorKind::InvalidParameter, "unknown method");
}

inline std::unique_ptr<fc::Forecaster> make_forecaster(const ExperimentConfig& cfg, const RegionSeries& s, std::uint64_t seed) {
  const auto& f = cfg.forecaster;
  if (f.kind == "ar") return std::make_unique<fc::ArForecaster>(f.p, f.ridge, f.fit_window);
  if (f.kind == "theta") return std::make_unique<fc::ThetaForecaster>(f.fit_window);
  if (f.kind == "external") return std::make_unique<fc::ExternalForecaster>(fc::load_external(f.path), s.t);
  fc::GruForecasterConfig g = f.gru;
  g.seed = seed;
  g.max_horizon = 1;
  for (int h : cfg.horizons) g.max_horizon = std::max(g.max_horizon, h);
  auto out = std::make_unique<fc::GruForecaster>(g);
  // Fitted on the warmup prefix only, so online forecasts never see the future.
  out->fit(std::span<const double>(s.y).first(std::min(s.y.size(), cfg.warmup + 1)));
  return out;
}

inline Dataset load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.path) return ingest(*cfg.dataset.path);
  SyntheticRecipe r = cfg.dataset.recipe;
  r.seed += seed;
  return synth(r);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

/// Throws if a record's errors and intervals disagree.
inline void validate_record(const StepRecord& r, const AlphaLadder& ladder) {
  if (r.errs.size() != ladder.size() || r.intervals.size() != ladder.size() || r.ladder.size() != ladder.size()) {
    fail(ErrorKind::State, "record at t=" + std::to_string(r.t) + " has the wrong ladder size");
  }
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const bool covered = r.intervals[i].contains(r.y);
    if (r.errs[i] != coverage_error(r.s, r.ladder.q_conf[i]) || covered != (r.errs[i] == 0)) {
      fail(ErrorKind::State, "record at t=" + std::to_string(r.t) + " level " + std::to_string(i) + ": error flag disagrees with interval");
    }
  }
}

struct CellKey {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  std::string region;
};

inline nlohmann::json record_json(const StepRecord& r, const AlphaLadder& ladder, const CellKey& key) {
  nlohmann::json j;
  j["dataset"] = key.dataset;
  j["method"] = key.method;
  j["seed"] = key.seed;
  if (!key.region.empty()) j["region"] = key.region;
  j["t"] = r.t;
  j["tau"] = r.tau;
  j["y"] = r.y;
  j["y_hat"] = r.y_hat;
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const Interval& iv = r.intervals[i];
    levels.push_back({{"alpha", ladder[i]},
                      {"q_raw", number_or_null(r.ladder.q_raw[i])},
                      {"q_conf", number_or_null(r.ladder.q_conf[i])},
                      {"lo", iv.empty ? nlohmann::json(nullptr) : number_or_null(iv.lo)},
                      {"hi", iv.empty ? nlohmann::json(nullptr) : number_or_null(iv.hi)},
                      {"err", r.errs[i]}});
  }
  j["levels"] = std::move(levels);
  j["consistent"] = is_consistent(r.intervals, ladder);
  j["tta_iters"] = r.tta_iters;
  j["tta_incomplete"] = r.tta_incomplete;
  return j;
}

struct MetricRow {
  std::string dataset;
  std::string method;
  std::string horizon;  // a horizon, or "all" when pooled
  std::uint64_t seed = 0;
  bool sorted = false;
  metrics::MetricReport report;
};

inline std::vector<std::string> metric_columns(const AlphaLadder& ladder) {
  std::vector<std::string> cols{"dataset", "method", "horizon", "seed", "sorted", "n_steps", "cs", "wis", "crps", "dcs"};
  for (double a : ladder.alphas()) {
    std::ostringstream os;
    os << "cov_" << a;
    cols.push_back(os.str());
  }
  return cols;
}

inline void write_metrics(const std::vector<MetricRow>& rows, const AlphaLadder& ladder, std::ostream& out) {
  const auto cols = metric_columns(ladder);
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (const auto& r : rows) {
    out << r.dataset << ',' << r.method << ',' << r.horizon << ',' << r.seed << ',' << (r.sorted ? 1 : 0) << ','
        << r.report.n_steps << ',' << format_double(r.report.cs) << ',' << format_double(r.report.wis) << ','
        << format_double(r.report.crps) << ',' << format_double(r.report.dcs);
    for (double c : r.report.coverage) out << ',' << format_double(c);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Orchestration

struct RunOutput {
  std::vector<MetricRow> rows;
};

/// Runs every cell in a fixed order and streams records to `results`. On failure the records
/// written so far stay, a terminal {"error": ...} line is appended, and the error is rethrown.
inline RunOutput run_experiment(const ExperimentConfig& cfg, std::ostream& results) {
  RunOutput out;
  try {
    results << nlohmann::json{{"header", {{"dataset", cfg.dataset.name},
                                          {"alphas", std::vector<double>(cfg.ladder.alphas().begin(), cfg.ladder.alphas().end())},
                                          {"horizons", cfg.horizons},
                                          {"seeds", cfg.seeds}}}}
                   .dump()
            << '\n';
    for (std::uint64_t seed : cfg.seeds) {
      const Dataset ds = load_dataset(cfg, seed);
      if (cfg.forecaster.kind == "external" && ds.regions.size() > 1) {
        fail(ErrorKind::InvalidParameter, "external forecasts support a single region only");
      }
      for (Method m : cfg.methods) {
        std::vector<StepRecord> pooled;
        for (int tau : cfg.horizons) {
          std::vector<StepRecord> cell;
          for (std::size_t r = 0; r < ds.regions.size(); ++r) {
            const RegionSeries& s = ds.regions[r];
            OnlineSeries series{s.y, s.t, s.views};
            auto f = make_forecaster(cfg, s, seed);
            auto c = make_controller(cfg, m, tau, ds, r, seed);
            const CellKey key{cfg.dataset.name, to_string(m), seed, s.region};
            online_run(series, *f, *c, {cfg.warmup, tau}, [&](const StepRecord& rec) {
              validate_record(rec, cfg.ladder);
              results << record_json(rec, cfg.ladder, key).dump() << '\n';
              cell.push_back(rec);
            });
          }
          results.flush();
          for (bool sorted : {false, true}) {
            if (sorted && !cfg.sorted) continue;
            out.rows.push_back({cfg.dataset.name, to_string(m), std::to_string(tau), seed, sorted, metrics::evaluate(cell, cfg.ladder, sorted)});
          }
          pooled.insert(pooled.end(), cell.begin(), cell.end());
        }
        if (cfg.horizons.size() > 1) {
          for (bool sorted : {false, true}) {
            if (sorted && !cfg.sorted) continue;
            out.rows.push_back({cfg.dataset.name, to_string(m), "all", seed, sorted, metrics::evaluate(pooled, cfg.ladder, sorted)});
          }
        }
      }
    }
  } catch (const Error& e) {
    results << nlohmann::json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << '\n';
    results.flush();
    throw;
  }
  return out;
}

/// File-writing wrapper used by the CLI. The metrics file is only written after a complete run.
inline RunOutput run_to_files(const ExperimentConfig& cfg) {
  std::ofstream results(cfg.results_path);
  if (!results) fail(ErrorKind::Io, "cannot write " + cfg.results_path);
  RunOutput out = run_experiment(cfg, results);
  std::ofstream m(cfg.metrics_path);
  if (!m) fail(ErrorKind::Io, "cannot write " + cfg.metrics_path);
  write_metrics(out.rows, cfg.ladder, m);
  return out;
}

}  // namespace ncc::harness
