#pragma once

// Experiment configuration: one JSON file, unknown keys rejected.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncc/baselines.hpp"
#include "ncc/harness/data.hpp"
#include "ncc/ncc.hpp"

namespace ncc::harness {

using nlohmann::json;

enum class Method { Ncc, Aci, Cpid, Nexcp, SplitCp };

inline Method parse_method(const std::string& s) {
  if (s == "ncc") return Method::Ncc;
  if (s == "aci") return Method::Aci;
  if (s == "cpid") return Method::Cpid;
  if (s == "nexcp") return Method::Nexcp;
  if (s == "splitcp") return Method::SplitCp;
  fail(ErrorKind::InvalidParameter, "config: unknown method '" + s + "' (ncc, aci, cpid, nexcp, splitcp)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Ncc: return "ncc";
    case Method::Aci: return "aci";
    case Method::Cpid: return "cpid";
    case Method::Nexcp: return "nexcp";
    case Method::SplitCp: return "splitcp";
  }
  return "?";
}

struct ForecasterSpec {
  std::string kind = "ar";  // ar, theta, gru, external
  std::size_t p = 3;
  double ridge = 1e-6;
  std::size_t fit_window = 200;
  fc::GruForecasterConfig gru;
  std::string path;  // external forecasts CSV
};

struct DatasetSpec {
  std::string name;
  std::optional<std::string> path;
  SyntheticRecipe recipe;  // used when no path is given
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<Method> methods{Method::Ncc};
  AlphaLadder ladder = AlphaLadder::standard();
  std::vector<int> horizons{1};
  ForecasterSpec forecaster;
  std::size_t warmup = 100;
  std::vector<std::uint64_t> seeds{0};
  bool sorted = false;
  std::string results_path = "results.jsonl";
  std::string metrics_path = "metrics.csv";

  NccConfig ncc;
  double aci_eta = 0.05;
  // k_i in multiples of the warmup median score; eta relative to the trailing max score (or the
  // warmup median when window is 0)
  baselines::CpidController::Params cpid{0.1, 1.0, 1.0, 100};
  double nexcp_rho = 0.99;
  bool bonferroni = false;

  void validate() const {
    if (methods.empty()) fail(ErrorKind::InvalidParameter, "config: no methods");
    if (seeds.empty()) fail(ErrorKind::InvalidParameter, "config: seeds must be non-empty");
    if (horizons.empty()) fail(ErrorKind::InvalidParameter, "config: horizons must be non-empty");
    std::set<int> seen;
    for (int h : horizons) {
      if (h < 1) fail(ErrorKind::InvalidParameter, "config: horizons must be >= 1");
      if (!seen.insert(h).second) fail(ErrorKind::InvalidParameter, "config: duplicate horizon " + std::to_string(h));
    }
    for (auto m : methods) {
      if (m == Method::Ncc && warmup < ncc.encoder.window) {
        fail(ErrorKind::InvalidParameter, "config: warmup must be >= the encoder window");
      }
    }
    ncc.validate();
    if (!(aci_eta > 0.0)) fail(ErrorKind::InvalidParameter, "config: aci eta must be positive");
    if (!(nexcp_rho > 0.0 && nexcp_rho <= 1.0)) fail(ErrorKind::InvalidParameter, "config: nexcp rho must be in (0, 1]");
    if (!(cpid.eta > 0.0 && cpid.k_i > 0.0 && cpid.c > 0.0)) fail(ErrorKind::InvalidParameter, "config: cpid parameters must be positive");
    if (!dataset.path) dataset.recipe.validate();
  }
};

namespace detail {

/// Reads keys out of an object and complains about anything left over.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorKind::Schema, "config: '" + where_ + "' must be an object");
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  /// Rejects keys nobody asked for.
  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) fail(ErrorKind::Schema, "config: unknown key '" + path(k) + "'");
    }
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  template <class T>
  void get(const std::string& k, T& out) {
    if (!j_.contains(k)) return;
    used_.insert(k);
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::Schema, "config: '" + path(k) + "' has the wrong type");
    }
  }

  const json& sub(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }

  std::string path(const std::string& k) const { return where_.empty() ? k : where_ + "." + k; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline Stages read_stages(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::Schema, "config: '" + where + "' must be [stage1, stage2, stage3]");
  try {
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  } catch (const json::exception&) {
    fail(ErrorKind::Schema, "config: '" + where + "' must hold integers");
  }
}

inline Regime read_regime(const json& j, const std::string& where, Regime r) {
  Reader rd(j, where);
  rd.get("mean", r.mean);
  rd.get("var", r.var);
  rd.get("phi", r.phi);
  rd.done();
  return r;
}

inline SyntheticRecipe read_recipe(const json& j, const std::string& where) {
  Reader rd(j, where);
  std::string kind = "ar-shift";
  std::size_t T = 1000;
  std::uint64_t seed = 0;
  rd.get("kind", kind);
  rd.get("T", T);
  rd.get("seed", seed);
  SyntheticRecipe r = default_recipe(parse_synth_kind(kind), T, seed);
  if (rd.has("base")) r.base = read_regime(rd.sub("base"), rd.path("base"), r.base);
  if (rd.has("changepoints")) {
    const json& cps = rd.sub("changepoints");
    if (!cps.is_array()) fail(ErrorKind::Schema, "config: '" + rd.path("changepoints") + "' must be an array");
    r.changepoints.clear();
    Regime prev = r.base;
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const std::string w = rd.path("changepoints") + "[" + std::to_string(i) + "]";
      if (!cps[i].is_object() || !cps[i].contains("at")) fail(ErrorKind::Schema, "config: '" + w + "' needs 'at'");
      json rest = cps[i];
      Changepoint c;
      try {
        c.at = rest.at("at").get<std::size_t>();
      } catch (const json::exception&) {
        fail(ErrorKind::Schema, "config: '" + w + ".at' must be a non-negative integer");
      }
      rest.erase("at");
      c.regime = read_regime(rest, w, prev);  // unspecified fields carry over from the previous regime
      prev = c.regime;
      r.changepoints.push_back(c);
    }
  }
  rd.get("regions", r.regions);
  rd.get("region_spread", r.region_spread);
  rd.get("period", r.period);
  rd.get("amplitude", r.amplitude);
  rd.done();
  return r;
}

inline void read_ncc(const json& j, NccConfig& c) {
  Reader rd(j, "ncc");
  rd.get("eta", c.eta);
  rd.get("w", c.w);
  rd.get("k", c.k);
  if (rd.has("lambdas")) {
    std::vector<double> l;
    rd.get("lambdas", l);
    if (l.size() != 4) fail(ErrorKind::Schema, "config: 'ncc.lambdas' must be [q, c, e, m]");
    c.lambdas = {l[0], l[1], l[2], l[3]};
  }
  if (rd.has("stages")) c.initial = read_stages(rd.sub("stages"), "ncc.stages");
  if (rd.has("retrain")) c.retrain = read_stages(rd.sub("retrain"), "ncc.retrain");
  rd.get("retrain_interval", c.retrain_interval);
  rd.get("batch", c.batch);
  rd.get("train_cap", c.train_cap);
  rd.get("lr", c.adam.lr);
  rd.get("train", c.train);
  if (rd.has("fixed_scale")) {
    double s = 0.0;
    rd.get("fixed_scale", s);
    c.fixed_scale = s;
  }
  if (rd.has("encoder")) {
    Reader e(rd.sub("encoder"), "ncc.encoder");
    e.get("hidden", c.encoder.hidden);
    e.get("heads", c.encoder.heads);
    e.get("window", c.encoder.window);
    e.get("head_hidden", c.encoder.head_hidden);
    e.done();
  }
  if (rd.has("tta")) {
    Reader t(rd.sub("tta"), "ncc.tta");
    t.get("enabled", c.tta.enabled);
    t.get("max_iters", c.tta.max_iters);
    t.get("step", c.tta.step);
    std::string mode = "mlp";
    t.get("mode", mode);
    if (mode == "mlp") c.tta.mode = TtaMode::Mlp;
    else if (mode == "vector") c.tta.mode = TtaMode::Vector;
    else fail(ErrorKind::InvalidParameter, "config: 'ncc.tta.mode' must be mlp or vector");
    t.done();
  }
  rd.done();
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  detail::Reader rd(j, "");
  if (!rd.has("dataset")) fail(ErrorKind::Schema, "config: missing 'dataset'");
  {
    detail::Reader d(rd.sub("dataset"), "dataset");
    d.get("name", cfg.dataset.name);
    if (d.has("path") == d.has("synthetic")) fail(ErrorKind::Schema, "config: dataset needs exactly one of 'path' and 'synthetic'");
    if (d.has("path")) {
      std::string p;
      d.get("path", p);
      cfg.dataset.path = p;
      if (cfg.dataset.name.empty()) cfg.dataset.name = p;
    } else {
      cfg.dataset.recipe = detail::read_recipe(d.sub("synthetic"), "dataset.synthetic");
      if (cfg.dataset.name.empty()) cfg.dataset.name = to_string(cfg.dataset.recipe.kind);
    }
    d.done();
  }
  if (rd.has("methods")) {
    std::vector<std::string> ms;
    rd.get("methods", ms);
    cfg.methods.clear();
    for (const auto& m : ms) cfg.methods.push_back(parse_method(m));
  }
  if (rd.has("alphas")) {
    std::vector<double> a;
    rd.get("alphas", a);
    cfg.ladder = AlphaLadder(a);
  }
  rd.get("horizons", cfg.horizons);
  if (rd.has("forecaster")) {
    detail::Reader f(rd.sub("forecaster"), "forecaster");
    f.get("kind", cfg.forecaster.kind);
    f.get("p", cfg.forecaster.p);
    f.get("ridge", cfg.forecaster.ridge);
    f.get("fit_window", cfg.forecaster.fit_window);
    f.get("path", cfg.forecaster.path);
    f.get("hidden", cfg.forecaster.gru.hidden);
    f.get("window", cfg.forecaster.gru.window);
    f.get("epochs", cfg.forecaster.gru.epochs);
    f.get("lr", cfg.forecaster.gru.lr);
    const auto& k = cfg.forecaster.kind;
    if (k != "ar" && k != "theta" && k != "gru" && k != "external") {
      fail(ErrorKind::InvalidParameter, "config: unknown forecaster '" + k + "' (ar, theta, gru, external)");
    }
    if (k == "external" && cfg.forecaster.path.empty()) fail(ErrorKind::Schema, "config: external forecaster needs 'path'");
    f.done();
  }
  rd.get("warmup", cfg.warmup);
  rd.get("seeds", cfg.seeds);
  rd.get("sorted", cfg.sorted);
  if (rd.has("output")) {
    detail::Reader o(rd.sub("output"), "output");
    o.get("results", cfg.results_path);
    o.get("metrics", cfg.metrics_path);
    o.done();
  }
  if (rd.has("ncc")) detail::read_ncc(rd.sub("ncc"), cfg.ncc);
  if (rd.has("aci")) {
    detail::Reader a(rd.sub("aci"), "aci");
    a.get("eta", cfg.aci_eta);
    a.done();
  }
  if (rd.has("cpid")) {
    detail::Reader c(rd.sub("cpid"), "cpid");
    c.get("eta", cfg.cpid.eta);
    c.get("k_i", cfg.cpid.k_i);
    c.get("c", cfg.cpid.c);
    c.get("window", cfg.cpid.window);
    c.done();
  }
  if (rd.has("nexcp")) {
    detail::Reader n(rd.sub("nexcp"), "nexcp");
    n.get("rho", cfg.nexcp_rho);
    n.done();
  }
  if (rd.has("splitcp")) {
    detail::Reader s(rd.sub("splitcp"), "splitcp");
    s.get("bonferroni", cfg.bonferroni);
    s.done();
  }
  rd.done();
  cfg.ncc.ladder = cfg.ladder;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Schema, path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace ncc::harness
