#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "fairgrad/core_types.hpp"
#include "fairgrad/optimizer.hpp"
#include "json.hpp"

namespace fairgrad {

/// Shortest text that reads back to the same double: 17 significant digits.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trajectory_header(Eigen::Index m, Eigen::Index k) {
  std::string h = "step";
  for (Eigen::Index j = 1; j <= m; ++j) h += ",x" + std::to_string(j);
  for (Eigen::Index i = 1; i <= k; ++i) h += ",l" + std::to_string(i);
  for (Eigen::Index i = 1; i <= k; ++i) h += ",w" + std::to_string(i);
  return h + ",dnorm,stationarity,sigma_min,eta";
}

/// step,x1..xm,l1..lK,w1..wK,dnorm,stationarity,sigma_min,eta
inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRecord>& trajectory, Eigen::Index m,
                                 Eigen::Index k) {
  out << trajectory_header(m, k) << '\n';
  std::string line;
  for (const auto& r : trajectory) {
    line = std::to_string(r.step);
    for (double v : r.point) line += ',' + format_real(v);
    for (double v : r.losses) line += ',' + format_real(v);
    for (double v : r.weights) line += ',' + format_real(v);
    line += ',' + format_real(r.direction_norm);
    line += ',' + format_real(r.stationarity);
    line += ',' + format_real(r.sigma_min);
    line += ',' + format_real(r.step_size);
    out << line << '\n';
  }
}

// ---------------------------------------------------------------------------
// Config files: a flat JSON object whose keys are ExperimentConfig field names.

namespace detail {

template <typename T>
T json_field(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(key + ": wrong type");
  }
}

template <typename E, typename Parse>
E json_enum(const nlohmann::json& j, const std::string& key, Parse parse) {
  const auto s = json_field<std::string>(j, key);
  const auto v = parse(s);
  if (!v) throw std::invalid_argument(key + ": unknown value '" + s + "'");
  return *v;
}

inline std::optional<PcgradReduce> parse_pcgrad_reduce(std::string_view s) {
  if (s == "mean") return PcgradReduce::mean;
  if (s == "sum") return PcgradReduce::sum;
  return std::nullopt;
}

}  // namespace detail

/// Applies every recognized key of `j` to cfg. Keys it does not know are
/// returned so the caller can consume its own (problem settings and the like).
inline nlohmann::json apply_config_json(const nlohmann::json& j, ExperimentConfig& cfg) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  nlohmann::json rest = nlohmann::json::object();
  using detail::json_field;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") cfg.alpha = json_field<double>(v, key);
    else if (key == "method") cfg.method = detail::json_enum<Method>(v, key, parse_method);
    else if (key == "step_rule") cfg.step_rule = detail::json_enum<StepRule>(v, key, parse_step_rule);
    else if (key == "learning_rate") cfg.learning_rate = json_field<double>(v, key);
    else if (key == "smoothness_L") cfg.smoothness_L = json_field<double>(v, key);
    else if (key == "max_steps") cfg.max_steps = json_field<long>(v, key);
    else if (key == "stationarity_tol") cfg.stationarity_tol = json_field<double>(v, key);
    else if (key == "seed") cfg.seed = json_field<std::uint64_t>(v, key);
    else if (key == "w_min") cfg.w_min = json_field<double>(v, key);
    else if (key == "solver_mode") cfg.solver_mode = detail::json_enum<SolverMode>(v, key, parse_solver_mode);
    else if (key == "fair_loss_alpha") cfg.fair_loss_alpha = v.is_null() ? std::nullopt : std::optional(json_field<double>(v, key));
    else if (key == "loss_floor") cfg.loss_floor = v.is_null() ? std::nullopt : std::optional(json_field<double>(v, key));
    else if (key == "solver_tol_per_task") cfg.solver_tol_per_task = json_field<double>(v, key);
    else if (key == "solver_max_iterations") cfg.solver_max_iterations = json_field<int>(v, key);
    else if (key == "sgd_inner_lr") cfg.sgd_inner_lr = json_field<double>(v, key);
    else if (key == "sgd_epochs") cfg.sgd_epochs = json_field<int>(v, key);
    else if (key == "dwa_temperature") cfg.dwa_temperature = json_field<double>(v, key);
    else if (key == "pcgrad_reduce") cfg.pcgrad_reduce = detail::json_enum<PcgradReduce>(v, key, detail::parse_pcgrad_reduce);
    else if (key == "check_every") cfg.check_every = json_field<long>(v, key);
    else if (key == "ball_radius") cfg.ball_radius = json_field<double>(v, key);
    else rest[key] = v;
  }
  return rest;
}

inline std::string_view to_string(PcgradReduce r) { return r == PcgradReduce::mean ? "mean" : "sum"; }

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["alpha"] = cfg.alpha;
  j["method"] = to_string(cfg.method);
  j["step_rule"] = to_string(cfg.step_rule);
  j["learning_rate"] = cfg.learning_rate;
  j["smoothness_L"] = cfg.smoothness_L;
  j["max_steps"] = cfg.max_steps;
  j["stationarity_tol"] = cfg.stationarity_tol;
  j["seed"] = cfg.seed;
  j["w_min"] = cfg.w_min;
  j["solver_mode"] = to_string(cfg.solver_mode);
  j["fair_loss_alpha"] = cfg.fair_loss_alpha ? nlohmann::json(*cfg.fair_loss_alpha) : nlohmann::json(nullptr);
  j["loss_floor"] = cfg.loss_floor ? nlohmann::json(*cfg.loss_floor) : nlohmann::json(nullptr);
  j["solver_tol_per_task"] = cfg.solver_tol_per_task;
  j["solver_max_iterations"] = cfg.solver_max_iterations;
  j["sgd_inner_lr"] = cfg.sgd_inner_lr;
  j["sgd_epochs"] = cfg.sgd_epochs;
  j["dwa_temperature"] = cfg.dwa_temperature;
  j["pcgrad_reduce"] = to_string(cfg.pcgrad_reduce);
  j["check_every"] = cfg.check_every;
  j["ball_radius"] = cfg.ball_radius;
  return j;
}

inline nlohmann::json to_json(const Vector& v) { return nlohmann::json(std::vector<double>(v.begin(), v.end())); }

inline Vector vector_from_json(const nlohmann::json& j, const std::string& key) {
  const auto v = detail::json_field<std::vector<double>>(j, key);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Run summary. Doubles are written by nlohmann::json's shortest round-trip
/// formatting, so reading the file back gives the same bits.
inline nlohmann::json summarize(const RunResult& r, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["termination"] = to_string(r.termination);
  j["steps"] = r.trajectory.size();
  j["final_point"] = to_json(r.final_point);
  const TrajectoryRecord& last = r.trajectory.back();
  j["final_losses"] = to_json(last.losses);
  j["final_weights"] = to_json(last.weights);
  j["final_stationarity"] = last.stationarity;
  j["final_sigma_min"] = last.sigma_min;
  j["unconverged_solves"] = r.unconverged_solves;
  double gain = 0.0, unit_gain = 0.0;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < r.gains.size(); ++t) {
    if (r.trajectory[t].direction_norm == 0.0) continue;
    gain += r.gains[t].min_gain;
    unit_gain += r.gains[t].min_unit_gain;
    ++counted;
  }
  j["mean_min_gain"] = counted ? gain / static_cast<double>(counted) : 0.0;
  j["mean_min_unit_gain"] = counted ? unit_gain / static_cast<double>(counted) : 0.0;
  j["wall_time_s"] = r.wall_time;
  if (!r.failure.empty()) j["failure"] = r.failure;
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

}  // namespace fairgrad
