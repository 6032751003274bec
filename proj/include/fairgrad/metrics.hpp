#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairgrad {

/// Per-metric preference: higher_better means delta_k = 1.
enum class MetricDirection { higher_better, lower_better };

/// Result table: one row per method, one column per metric, plus the
/// single-task baseline row the percentage drop is measured against.
struct MetricTable {
  std::vector<std::string> metrics;
  std::vector<MetricDirection> directions;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> values;  // values[method][metric]
  std::vector<double> baseline;
  std::string baseline_label;

  std::size_t metric_count() const { return metrics.size(); }
  std::size_t method_count() const { return methods.size(); }

  void check() const {
    const std::size_t n = metrics.size();
    if (directions.size() != n) throw std::invalid_argument("metric table: directions do not cover every metric");
    if (values.size() != methods.size()) throw std::invalid_argument("metric table: row/label count mismatch");
    for (const auto& row : values) {
      if (row.size() != n) throw std::invalid_argument("metric table: not rectangular");
    }
    if (!baseline.empty() && baseline.size() != n) throw std::invalid_argument("metric table: baseline width");
  }

  const std::vector<double>& row(const std::string& method) const {
    for (std::size_t i = 0; i < methods.size(); ++i) {
      if (methods[i] == method) return values[i];
    }
    throw std::out_of_range("metric table: no method '" + method + "'");
  }
};

/// (100/K) sum_k (-1)^delta_k (M_k - B_k)/B_k: the mean per-metric drop
/// versus the baseline, signed so that positive means worse.
inline double delta_m_percent(const std::vector<double>& method, const std::vector<double>& baseline,
                              const std::vector<MetricDirection>& directions) {
  if (method.size() != baseline.size() || method.size() != directions.size() || method.empty()) {
    throw std::invalid_argument("delta_m_percent: length mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < method.size(); ++k) {
    if (baseline[k] == 0.0) throw std::domain_error("delta_m_percent: zero baseline entry");
    const double rel = (method[k] - baseline[k]) / baseline[k];
    total += directions[k] == MetricDirection::higher_better ? -rel : rel;
  }
  return 100.0 * total / static_cast<double>(method.size());
}

/// Average over metrics of each method's rank (1 = best). Tied values share
/// the mean of the positions they occupy.
inline std::vector<double> mean_rank(const MetricTable& table) {
  table.check();
  const std::size_t n_methods = table.method_count();
  if (n_methods < 2) throw std::invalid_argument("mean_rank: need at least two methods");
  std::vector<double> total(n_methods, 0.0);
  std::vector<std::size_t> order(n_methods);
  for (std::size_t k = 0; k < table.metric_count(); ++k) {
    const bool higher = table.directions[k] == MetricDirection::higher_better;
    auto better = [&](std::size_t a, std::size_t b) {
      return higher ? table.values[a][k] > table.values[b][k] : table.values[a][k] < table.values[b][k];
    };
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), better);
    for (std::size_t s = 0; s < n_methods;) {
      std::size_t e = s + 1;
      while (e < n_methods && table.values[order[e]][k] == table.values[order[s]][k]) ++e;
      const double avg = 0.5 * static_cast<double>(s + 1 + e);  // mean of positions s+1..e
      for (std::size_t j = s; j < e; ++j) total[order[j]] += avg;
      s = e;
    }
  }
  for (auto& t : total) t /= static_cast<double>(table.metric_count());
  return total;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline MetricDirection parse_direction(const std::string& s) {
  if (s == "up" || s == "higher" || s == "max" || s == "1" || s == "+") return MetricDirection::higher_better;
  if (s == "down" || s == "lower" || s == "min" || s == "0" || s == "-") return MetricDirection::lower_better;
  throw std::invalid_argument("metric table: unknown direction '" + s + "'");
}

}  // namespace detail

/// Reads the table CSV:
///
///     method,<metric 1>,...,<metric K>
///     direction,<up|down>,...
///     <label>,<value>,...
///
/// Blank lines and lines starting with '#' are skipped. The row whose label is
/// baseline_label becomes the baseline and is removed from the method rows.
inline MetricTable read_metric_table(std::istream& in, const std::string& baseline_label) {
  MetricTable table;
  table.baseline_label = baseline_label;
  std::string line;
  int stage = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto cells = detail::split_csv_line(t);
    if (stage == 0) {
      if (cells.size() < 2 || cells[0] != "method") {
        throw std::invalid_argument("metric table: header must start with 'method' and name at least one metric");
      }
      table.metrics.assign(cells.begin() + 1, cells.end());
      stage = 1;
    } else if (stage == 1) {
      if (cells.empty() || cells[0] != "direction") {
        throw std::invalid_argument("metric table: second row must be the 'direction' row");
      }
      if (cells.size() != table.metrics.size() + 1) {
        throw std::invalid_argument("metric table: direction row width mismatch");
      }
      for (std::size_t i = 1; i < cells.size(); ++i) table.directions.push_back(detail::parse_direction(cells[i]));
      stage = 2;
    } else {
      if (cells.size() != table.metrics.size() + 1) {
        throw std::invalid_argument("metric table: line " + std::to_string(line_no) + " has wrong width");
      }
      std::vector<double> vals;
      for (std::size_t i = 1; i < cells.size(); ++i) {
        try {
          std::size_t used = 0;
          vals.push_back(std::stod(cells[i], &used));
          if (used != cells[i].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
          throw std::invalid_argument("metric table: line " + std::to_string(line_no) + ": bad number '" + cells[i] + "'");
        }
      }
      if (cells[0] == baseline_label) {
        table.baseline = std::move(vals);
      } else {
        table.methods.push_back(cells[0]);
        table.values.push_back(std::move(vals));
      }
    }
  }
  if (stage < 2) throw std::invalid_argument("metric table: missing header or direction row");
  if (table.baseline.empty()) throw std::invalid_argument("metric table: baseline row '" + baseline_label + "' not found");
  table.check();
  return table;
}

inline MetricTable read_metric_table(const std::string& path, const std::string& baseline_label) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("metric table: cannot open " + path);
  return read_metric_table(in, baseline_label);
}

}  // namespace fairgrad
