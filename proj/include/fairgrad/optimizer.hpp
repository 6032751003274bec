#pragma once

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fairgrad/aggregators.hpp"
#include "fairgrad/core_types.hpp"
#include "fairgrad/fairness.hpp"
#include "fairgrad/pareto.hpp"

namespace fairgrad {

/// Step size under which the average loss provably decreases for L-smooth
/// tasks when w solves the FairGrad weight equation:
///   sum_i w_i^(-1/alpha) / (L K sum_i w_i^(1 - 1/alpha)).
inline double theoretical_step_size(const WeightVector& w, double alpha, double smoothness, Eigen::Index k) {
  if (alpha == 0.0) throw std::invalid_argument("theoretical step size requires alpha > 0");
  if (!(alpha > 0.0) || !(smoothness > 0.0)) throw std::invalid_argument("theoretical step size: alpha, L must be > 0");
  if (w.size() != k || k == 0) throw std::invalid_argument("theoretical step size: weight count mismatch");
  if ((w.array() <= 0.0).any()) throw std::invalid_argument("theoretical step size: weights must be positive");
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double root = alpha == 1.0 ? 1.0 / w(i) : std::pow(w(i), -1.0 / alpha);
    num += root;
    den += w(i) * root;
  }
  return num / (smoothness * static_cast<double>(k) * den);
}

/// First and second moment estimates for the adaptive-moment rule.
struct AdamState {
  Vector first;
  Vector second;
  long steps = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index dim) : first(Vector::Zero(dim)), second(Vector::Zero(dim)) {}
};

/// Bias-corrected adaptive-moment update lr * m_hat / (sqrt(v_hat) + eps);
/// the caller subtracts it from the parameters.
inline Vector adaptive_moment_step(AdamState& state, const Direction& d, double lr, double beta1 = 0.9,
                                   double beta2 = 0.999, double eps = 1e-8) {
  if (state.first.size() != d.size() || state.second.size() != d.size()) {
    throw std::invalid_argument("adaptive_moment_step: state dimension mismatch");
  }
  ++state.steps;
  state.first = beta1 * state.first + (1.0 - beta1) * d;
  state.second = beta2 * state.second + (1.0 - beta2) * d.cwiseProduct(d);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  const Vector m_hat = state.first / c1;
  const Vector v_hat = state.second / c2;
  return lr * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + eps).matrix());
}

enum class Termination { stationary, budget_exhausted, solver_failure };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::stationary: return "stationary";
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::solver_failure: return "solver_failure";
  }
  return "?";
}

/// Per-step quantity not part of the trajectory file: min_i g_i^T d over the
/// original gradients, and the same gain for the unit-norm direction.
struct StepGain {
  double min_gain = 0.0;
  double min_unit_gain = 0.0;
};

struct RunResult {
  Vector final_point;
  std::vector<TrajectoryRecord> trajectory;
  std::vector<StepGain> gains;  // parallel to trajectory
  Termination termination = Termination::budget_exhausted;
  double wall_time = 0.0;  // seconds
  long unconverged_solves = 0;
  std::string failure;  // set on solver_failure
};

/// The outer loop. Each iteration evaluates losses and gradients at the
/// current point, measures stationarity, aggregates with config.method, picks
/// the step with config.step_rule and updates the point.
///
/// When the stationarity measure is at or below config.stationarity_tol the run
/// stops before updating; that last record carries the previous weights, a
/// zero direction norm and the configured learning rate. A non-finite loss,
/// gradient or direction aborts with termination solver_failure after
/// recording the offending step.
template <MultiObjective P>
RunResult run(const P& problem, const ExperimentConfig& cfg, const Vector& initial_point) {
  cfg.validate();
  const Eigen::Index m = problem.dimension();
  const Eigen::Index k = problem.task_count();
  if (initial_point.size() != m) throw std::invalid_argument("run: initial point has wrong dimension");
  require_finite(initial_point, "run: initial point");

  const auto started = std::chrono::steady_clock::now();
  RunResult result;
  AggregatorState agg_state(cfg.method, CounterRng(cfg.seed).split(1), cfg.dwa_temperature);
  AdamState adam(m);
  std::optional<LossTransform> transform;
  if (cfg.fair_loss_alpha) transform = LossTransform{*cfg.fair_loss_alpha, cfg.loss_floor, &std::cerr};

  Vector x = initial_point;
  WeightVector last_weights = WeightVector::Ones(k);
  double stationarity = 0.0;
  result.termination = Termination::budget_exhausted;

  for (long t = 0; t < cfg.max_steps; ++t) {
    TrajectoryRecord rec;
    rec.step = t;
    rec.point = x;
    rec.losses = problem.losses(x);
    const GradientMatrix grads = problem.gradients(x);
    if (rec.losses.size() != k || grads.rows() != m || grads.cols() != k) {
      throw std::invalid_argument("run: problem returned wrongly sized losses or gradients");
    }

    auto fail = [&](std::string why) {
      rec.weights = last_weights;
      rec.step_size = cfg.learning_rate;
      rec.stationarity = stationarity;
      result.trajectory.push_back(std::move(rec));
      result.gains.push_back({});
      result.termination = Termination::solver_failure;
      result.failure = std::move(why);
    };
    if (!rec.losses.allFinite() || !grads.allFinite()) {
      fail("non-finite loss or gradient at step " + std::to_string(t));
      break;
    }

    rec.sigma_min = smallest_singular_value(build_gram(grads));
    if (t % cfg.check_every == 0) stationarity = stationarity_measure(grads);
    rec.stationarity = stationarity;

    if (t % cfg.check_every == 0 && stationarity <= cfg.stationarity_tol) {
      rec.weights = last_weights;
      rec.direction_norm = 0.0;
      rec.step_size = cfg.learning_rate;
      result.trajectory.push_back(std::move(rec));
      result.gains.push_back({});
      result.termination = Termination::stationary;
      break;
    }

    Vector agg_losses = rec.losses;
    GradientMatrix agg_grads = grads;
    if (transform) {
      agg_grads = transform_gradients(rec.losses, grads, *transform);
      agg_losses = transform_losses(rec.losses, *transform);
    }
    const Aggregate agg = aggregate(agg_losses, agg_grads, cfg, agg_state);
    if (cfg.method == Method::fairgrad && !agg.solver.converged) ++result.unconverged_solves;
    if (!agg.direction.allFinite()) {
      fail("non-finite direction at step " + std::to_string(t));
      break;
    }

    double eta = cfg.learning_rate;
    Vector update;
    switch (cfg.step_rule) {
      case StepRule::fixed:
        update = eta * agg.direction;
        break;
      case StepRule::theoretical:
        eta = theoretical_step_size(agg.weights, cfg.alpha, cfg.smoothness_L, k);
        update = eta * agg.direction;
        break;
      case StepRule::adaptive_moment:
        update = adaptive_moment_step(adam, agg.direction, cfg.learning_rate);
        break;
    }

    rec.weights = agg.weights;
    rec.direction_norm = agg.direction.norm();
    rec.step_size = eta;
    const Vector gain = grads.transpose() * agg.direction;
    StepGain sg;
    sg.min_gain = gain.minCoeff();
    sg.min_unit_gain = rec.direction_norm > 0.0 ? sg.min_gain / rec.direction_norm : 0.0;
    last_weights = agg.weights;

    result.trajectory.push_back(std::move(rec));
    result.gains.push_back(sg);
    x -= update;
  }

  result.final_point = result.termination == Termination::budget_exhausted ? x : result.trajectory.back().point;
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

/// Average loss (1/K) sum_i l_i.
inline double average_loss(const Vector& losses) { return losses.mean(); }

}  // namespace fairgrad
