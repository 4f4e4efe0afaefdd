#pragma once

// Merges metrics CSVs into one wide table: a row per (dataset, horizon, sorted), and for each
// method and metric the mean and sample std across seeds.

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "ncc/error.hpp"
#include "ncc/forecasters.hpp"
#include "ncc/harness/data.hpp"

namespace ncc::harness {

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline MetricsTable read_metrics(std::istream& in, const std::string& source) {
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Schema, source + ": empty metrics file");
  t.header = fc::split_csv_line(line);
  const std::vector<std::string> keys{"dataset", "method", "horizon", "seed", "sorted", "n_steps"};
  if (t.header.size() < keys.size() || !std::equal(keys.begin(), keys.end(), t.header.begin())) {
    fail(ErrorKind::Schema, source + ": not a metrics file (header must start with dataset,method,horizon,seed,sorted,n_steps)");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = fc::split_csv_line(line);
    if (cells.size() != t.header.size()) {
      fail(ErrorKind::Schema, source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells");
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void report(const std::vector<std::string>& paths, std::ostream& out) {
  if (paths.empty()) fail(ErrorKind::InvalidInput, "report: no input files");
  std::vector<std::string> header;
  using RowKey = std::tuple<std::string, std::string, std::string>;  // dataset, horizon, sorted
  std::map<RowKey, std::map<std::string, std::vector<std::vector<double>>>> groups;
  std::vector<std::string> methods;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) fail(ErrorKind::Io, "cannot open " + p);
    MetricsTable t = read_metrics(in, p);
    if (header.empty()) {
      header = t.header;
    } else if (t.header != header) {
      fail(ErrorKind::Schema, "report: " + p + " has different columns from " + paths.front());
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& cells = t.rows[r];
      std::vector<double> values;
      for (std::size_t c = 6; c < cells.size(); ++c) values.push_back(fc::parse_number(cells[c], r + 2, header[c]));
      if (std::find(methods.begin(), methods.end(), cells[1]) == methods.end()) methods.push_back(cells[1]);
      groups[{cells[0], cells[2], cells[4]}][cells[1]].push_back(std::move(values));
    }
  }
  const std::vector<std::string> metric_names(header.begin() + 6, header.end());
  out << "dataset,horizon,sorted";
  for (const auto& m : methods) {
    for (const auto& name : metric_names) out << ',' << m << '_' << name << "_mean," << m << '_' << name << "_std";
  }
  out << '\n';
  for (const auto& [key, by_method] : groups) {
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key);
    for (const auto& m : methods) {
      const auto it = by_method.find(m);
      for (std::size_t c = 0; c < metric_names.size(); ++c) {
        if (it == by_method.end()) {
          out << ",,";
          continue;
        }
        const auto& seeds = it->second;
        double mean = 0.0;
        for (const auto& v : seeds) mean += v[c];
        mean /= static_cast<double>(seeds.size());
        double var = 0.0;
        for (const auto& v : seeds) var += (v[c] - mean) * (v[c] - mean);
        const double sd = seeds.size() > 1 ? std::sqrt(var / static_cast<double>(seeds.size() - 1)) : 0.0;
        out << ',' << format_double(mean) << ',' << format_double(sd);
      }
    }
    out << '\n';
  }
}

}  // namespace ncc::harness
