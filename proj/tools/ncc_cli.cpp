#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ncc/harness/checks.hpp"
#include "ncc/harness/config.hpp"
#include "ncc/harness/data.hpp"
#include "ncc/harness/report.hpp"
#include "ncc/harness/run.hpp"

using namespace ncc;
using namespace ncc::harness;

namespace {

// "at:mean:var:phi" items separated by commas; empty fields keep the previous regime's value.
std::vector<Changepoint> parse_changepoints(const std::string& spec, Regime prev) {
  std::vector<Changepoint> out;
  std::stringstream items(spec);
  std::string item;
  while (std::getline(items, item, ',')) {
    std::vector<std::string> f;
    std::stringstream parts(item);
    std::string p;
    while (std::getline(parts, p, ':')) f.push_back(p);
    if (f.empty() || f.size() > 4) fail(ErrorKind::InvalidParameter, "changepoint '" + item + "' must be at[:mean[:var[:phi]]]");
    Changepoint c;
    c.regime = prev;
    c.at = static_cast<std::size_t>(fc::parse_integer(f[0], 0, "changepoint"));
    if (f.size() > 1 && !f[1].empty()) c.regime.mean = fc::parse_number(f[1], 0, "changepoint mean");
    if (f.size() > 2 && !f[2].empty()) c.regime.var = fc::parse_number(f[2], 0, "changepoint var");
    if (f.size() > 3 && !f[3].empty()) c.regime.phi = fc::parse_number(f[3], 0, "changepoint phi");
    prev = c.regime;
    out.push_back(c);
  }
  return out;
}

int print_checks(const std::vector<CheckResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(44) << r.name << " value=" << r.value
              << " limit=" << r.threshold << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online conformal interval experiments"};
  app.require_subcommand(1);

  std::string config_path;
  bool sorted = false;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("--config", config_path, "JSON config")->required();
  run->add_flag("--sorted", sorted, "Also report metrics after sorting each ladder");

  std::string kind = "ar-shift", out_path, changepoints;
  std::size_t T = 1000, regions = 1;
  std::uint64_t seed = 0;
  auto* syn = app.add_subcommand("synth", "Write a synthetic series CSV");
  syn->add_option("--kind", kind, "ar-shift, seasonal-burst or iid-gauss");
  syn->add_option("--T", T, "Series length");
  syn->add_option("--seed", seed, "Noise seed");
  syn->add_option("--out", out_path, "Output CSV")->required();
  syn->add_option("--regions", regions, "Number of regions");
  syn->add_option("--changepoints", changepoints, "at:mean:var:phi,... (replaces the default schedule)");

  std::vector<std::string> report_in;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Merge metrics CSVs into a comparison table");
  rep->add_option("--in", report_in, "Metrics CSVs")->required();
  rep->add_option("--out", report_out, "Output CSV")->required();

  std::uint64_t check_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss and network block");
  gc->add_option("--seed", check_seed, "Random seed");
  auto* st = app.add_subcommand("selftest", "Randomized property checks");
  st->add_option("--seed", check_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = load_config(config_path);
      cfg.sorted = cfg.sorted || sorted;
      const RunOutput res = run_to_files(cfg);
      std::cerr << "wrote " << cfg.results_path << " and " << cfg.metrics_path << " (" << res.rows.size() << " metric rows)\n";
      return 0;
    }
    if (*syn) {
      SyntheticRecipe r = default_recipe(parse_synth_kind(kind), T, seed);
      r.regions = regions;
      if (!changepoints.empty()) r.changepoints = parse_changepoints(changepoints, r.base);
      write_csv(synth(r), out_path);
      return 0;
    }
    if (*rep) {
      std::ofstream out(report_out);
      if (!out) fail(ErrorKind::Io, "cannot write " + report_out);
      report(report_in, out);
      return 0;
    }
    if (*gc) return print_checks(gradcheck_suite(check_seed));
    if (*st) return print_checks(selftest(check_seed));
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 11;  // unclassified, after the last ErrorKind code
  }
  return 2;
}
