#pragma once

// Synthetic series with regime changes, and the CSV layout shared by synth output and ingest.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ncc/error.hpp"
#include "ncc/forecasters.hpp"

namespace ncc::harness {

/// Dynamics of one segment: y = mean + x, x_t = phi x_{t-1} + sqrt(var) e_t.
struct Regime {
  double mean = 0.0;
  double var = 1.0;
  double phi = 0.5;
};

struct Changepoint {
  std::size_t at = 0;  // first index of the new regime
  Regime regime;
};

enum class SynthKind { ArShift, SeasonalBurst, IidGauss };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "ar-shift") return SynthKind::ArShift;
  if (s == "seasonal-burst") return SynthKind::SeasonalBurst;
  if (s == "iid-gauss") return SynthKind::IidGauss;
  fail(ErrorKind::InvalidParameter, "synth: unknown kind '" + s + "' (ar-shift, seasonal-burst, iid-gauss)");
}

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::ArShift: return "ar-shift";
    case SynthKind::SeasonalBurst: return "seasonal-burst";
    case SynthKind::IidGauss: return "iid-gauss";
  }
  return "?";
}

struct SyntheticRecipe {
  SynthKind kind = SynthKind::ArShift;
  std::size_t T = 1000;
  Regime base;
  std::vector<Changepoint> changepoints;
  std::uint64_t seed = 0;
  std::size_t regions = 1;
  double region_spread = 2.0;  // per-region mean offsets are spread evenly over +-spread
  std::size_t period = 52;     // seasonal-burst only
  double amplitude = 2.0;      // seasonal-burst only

  void validate() const {
    if (T < 2) fail(ErrorKind::InvalidParameter, "synth: T must be >= 2");
    if (regions == 0) fail(ErrorKind::InvalidParameter, "synth: regions must be >= 1");
    if (kind == SynthKind::SeasonalBurst && period < 2) fail(ErrorKind::InvalidParameter, "synth: period must be >= 2");
    auto check_regime = [](const Regime& r) {
      if (!std::isfinite(r.mean)) fail(ErrorKind::InvalidParameter, "synth: mean must be finite");
      if (!(r.var > 0.0) || !std::isfinite(r.var)) fail(ErrorKind::InvalidParameter, "synth: variance must be positive");
      if (!(std::abs(r.phi) < 1.0)) fail(ErrorKind::InvalidParameter, "synth: AR coefficient must be in (-1, 1)");
    };
    check_regime(base);
    std::size_t prev = 0;
    for (const auto& c : changepoints) {
      if (c.at < 1 || c.at > T) fail(ErrorKind::InvalidParameter, "synth: changepoint " + std::to_string(c.at) + " outside [1, T]");
      if (c.at <= prev) fail(ErrorKind::InvalidParameter, "synth: changepoints must be strictly increasing");
      prev = c.at;
      check_regime(c.regime);
    }
  }
};

/// Default regime schedule for a kind: ar-shift gets two changepoints, seasonal-burst a
/// high-variance burst in the middle, iid-gauss none.
inline SyntheticRecipe default_recipe(SynthKind kind, std::size_t T, std::uint64_t seed) {
  SyntheticRecipe r;
  r.kind = kind;
  r.T = T;
  r.seed = seed;
  switch (kind) {
    case SynthKind::ArShift:
      r.changepoints = {{T / 3, {3.0, 4.0, 0.5}}, {2 * T / 3, {-2.0, 1.0, 0.8}}};
      break;
    case SynthKind::SeasonalBurst:
      r.changepoints = {{T / 2, {0.0, 9.0, 0.5}}, {T / 2 + std::max<std::size_t>(T / 10, 1), {0.0, 1.0, 0.5}}};
      break;
    case SynthKind::IidGauss:
      r.base.phi = 0.0;
      break;
  }
  return r;
}

/// One series as loaded or generated. Views hold extra covariate columns aligned with y.
struct RegionSeries {
  std::string region;
  std::vector<std::int64_t> t;
  std::vector<double> y;
  std::vector<std::vector<double>> views;
};

struct Dataset {
  bool has_region = false;
  std::vector<std::string> view_names;
  std::vector<RegionSeries> regions;
};

inline Dataset synth(const SyntheticRecipe& recipe) {
  recipe.validate();
  Dataset ds;
  ds.has_region = recipe.regions > 1;
  for (std::size_t r = 0; r < recipe.regions; ++r) {
    std::seed_seq seq{recipe.seed, static_cast<std::uint64_t>(r)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double offset =
        recipe.regions > 1 ? recipe.region_spread * (2.0 * static_cast<double>(r) / static_cast<double>(recipe.regions - 1) - 1.0) : 0.0;
    RegionSeries s;
    s.region = recipe.regions > 1 ? "r" + std::to_string(r) : "";
    Regime cur = recipe.base;
    std::size_t next_cp = 0;
    double x = 0.0;
    for (std::size_t t = 0; t < recipe.T; ++t) {
      while (next_cp < recipe.changepoints.size() && recipe.changepoints[next_cp].at == t) cur = recipe.changepoints[next_cp++].regime;
      const double e = std::sqrt(cur.var) * noise(rng);
      double y = 0.0;
      if (recipe.kind == SynthKind::IidGauss) {
        y = cur.mean + e;
      } else {
        x = cur.phi * x + e;
        y = cur.mean + x;
        if (recipe.kind == SynthKind::SeasonalBurst) {
          y += recipe.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(recipe.period));
        }
      }
      s.t.push_back(static_cast<std::int64_t>(t));
      s.y.push_back(y + offset);
    }
    ds.regions.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Header `t,y[,region][,view:<name>...]`; rows grouped by region.
inline void write_csv(const Dataset& ds, std::ostream& out) {
  out << "t,y";
  if (ds.has_region) out << ",region";
  for (const auto& v : ds.view_names) out << ",view:" << v;
  out << '\n';
  for (const auto& s : ds.regions) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      out << s.t[i] << ',' << format_double(s.y[i]);
      if (ds.has_region) out << ',' << s.region;
      for (const auto& v : s.views) out << ',' << format_double(v[i]);
      out << '\n';
    }
  }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  write_csv(ds, out);
  if (!out) fail(ErrorKind::Io, "write failed for " + path);
}

inline Dataset ingest(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Schema, source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = fc::split_csv_line(line);
  int col_t = -1, col_y = -1, col_region = -1;
  std::vector<int> view_cols;
  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    const int ci = static_cast<int>(c);
    if (h == "t" && col_t < 0) {
      col_t = ci;
    } else if (h == "y" && col_y < 0) {
      col_y = ci;
    } else if (h == "region" && col_region < 0) {
      col_region = ci;
    } else if (h.rfind("view:", 0) == 0 && h.size() > 5) {
      const std::string name = h.substr(5);
      for (const auto& v : ds.view_names) {
        if (v == name) fail(ErrorKind::Schema, source + ": duplicate view column '" + h + "'");
      }
      ds.view_names.push_back(name);
      view_cols.push_back(ci);
    } else {
      fail(ErrorKind::Schema, source + ": unexpected column '" + h + "' (column " + std::to_string(c + 1) + ")");
    }
  }
  if (col_t < 0) fail(ErrorKind::Schema, source + ": missing column 't'");
  if (col_y < 0) fail(ErrorKind::Schema, source + ": missing column 'y'");
  ds.has_region = col_region >= 0;

  std::map<std::string, std::size_t> index;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = fc::split_csv_line(line);
    if (cells.size() != header.size()) {
      fail(ErrorKind::Schema, source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                  " cells, header has " + std::to_string(header.size()));
    }
    const auto cell = [&](int c) { return cells[static_cast<std::size_t>(c)]; };
    const std::string region = ds.has_region ? cell(col_region) : "";
    auto [it, inserted] = index.try_emplace(region, ds.regions.size());
    if (inserted) {
      RegionSeries s;
      s.region = region;
      s.views.resize(view_cols.size());
      ds.regions.push_back(std::move(s));
    }
    RegionSeries& s = ds.regions[it->second];
    const std::int64_t t = fc::parse_integer(cell(col_t), row, "t");
    if (!s.t.empty() && t <= s.t.back()) {
      fail(ErrorKind::Schema, source + ": row " + std::to_string(row) + " column t: " +
                                  (t == s.t.back() ? "duplicate" : "decreasing") + " time " + std::to_string(t) +
                                  (ds.has_region ? " in region '" + region + "'" : ""));
    }
    s.t.push_back(t);
    s.y.push_back(fc::parse_number(cell(col_y), row, "y"));
    for (std::size_t v = 0; v < view_cols.size(); ++v) {
      s.views[v].push_back(fc::parse_number(cell(view_cols[v]), row, "view:" + ds.view_names[v]));
    }
  }
  if (ds.regions.empty()) fail(ErrorKind::Schema, source + ": no data rows");
  return ds;
}

inline Dataset ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return ingest(in, path);
}

}  // namespace ncc::harness
