#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fairgrad/core_types.hpp"

namespace fairgrad {

struct SolverReport {
  WeightVector weights;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  SolverMode mode = SolverMode::least_squares;
};

struct WeightSolverOptions {
  double w_min = 1e-8;
  /// Convergence threshold on ||f(w)||_2 is tol_per_task * K.
  double tol_per_task = 1e-8;
  int max_iterations = 200;
  double initial_damping = 1e-3;
  /// Starting point; all-ones when absent.
  std::optional<WeightVector> warm_start;

  static WeightSolverOptions from(const ExperimentConfig& cfg) {
    WeightSolverOptions o;
    o.w_min = cfg.w_min;
    o.tol_per_task = cfg.solver_tol_per_task;
    o.max_iterations = cfg.solver_max_iterations;
    return o;
  }
};

namespace detail {

// w^(-1/alpha) elementwise, exact reciprocal at alpha = 1.
inline Vector neg_root(const Vector& w, double alpha) {
  if (alpha == 1.0) return w.cwiseInverse();
  const double p = -1.0 / alpha;
  return w.unaryExpr([p](double v) { return std::pow(v, p); });
}

inline void check_alpha(double alpha) {
  if (alpha == 0.0) {
    throw std::invalid_argument("weight equation undefined at alpha = 0 (weights are all ones)");
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be a positive finite real");
  }
}

inline void check_floor(const WeightVector& w, double w_min) {
  if (!w.allFinite() || (w.array() < w_min).any()) {
    throw std::domain_error("weights must be finite and >= w_min");
  }
}

// Residual without validation, for the solver's inner loop.
inline Vector residual_unchecked(const Matrix& gram, const Vector& w, double alpha) {
  return gram * w - neg_root(w, alpha);
}

// d f / d w = G^T G + (1/alpha) diag(w^(-1/alpha - 1))
inline Matrix jacobian(const Matrix& gram, const Vector& w, double alpha) {
  Matrix jac = gram;
  const double p = -1.0 / alpha - 1.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    jac(i, i) += std::pow(w(i), p) / alpha;
  }
  return jac;
}

inline Vector clamp_floor(Vector w, double w_min) { return w.cwiseMax(w_min); }

}  // namespace detail

/// f(w) = G^T G w - w^(-1/alpha). Zero exactly at FairGrad weights.
inline Vector residual(const GramMatrix& gram, const WeightVector& w, double alpha, double w_min = 1e-8) {
  detail::check_alpha(alpha);
  if (w.size() != gram.size()) throw std::invalid_argument("residual: size mismatch");
  detail::check_floor(w, w_min);
  return detail::residual_unchecked(gram.entries(), w, alpha);
}

/// Closed form for uncorrelated gradients: w_i = gram_ii^(-alpha/(alpha+1)).
inline WeightVector solve_diagonal(const GramMatrix& gram, double alpha) {
  detail::check_alpha(alpha);
  if (!gram.is_diagonal()) throw std::invalid_argument("solve_diagonal: gram is not diagonal");
  const Vector diag = gram.entries().diagonal();
  if ((diag.array() <= 0.0).any()) {
    throw std::invalid_argument("solve_diagonal: diagonal entries must be positive");
  }
  const double p = -alpha / (alpha + 1.0);
  return diag.unaryExpr([p](double v) { return std::pow(v, p); });
}

/// Solves G^T G w = w^(-1/alpha) over w >= w_min with a damped Gauss-Newton
/// (Levenberg-Marquardt) iteration. Steps are clamped onto the bound and
/// accepted only when ||f||^2 decreases; the damping is scaled by diag(J^T J).
/// alpha = 0 short-circuits to all-ones weights.
///
/// Running out of iterations is not an error: the report carries the best
/// iterate with converged = false.
inline SolverReport solve_weights(const GramMatrix& gram, double alpha, const WeightSolverOptions& opts = {}) {
  const Eigen::Index k = gram.size();
  SolverReport report;
  if (alpha == 0.0) {
    report.weights = WeightVector::Ones(k);
    report.converged = true;
    report.mode = SolverMode::closed_form;
    return report;
  }
  detail::check_alpha(alpha);
  if (!(opts.w_min > 0.0)) throw std::invalid_argument("solve_weights: w_min must be positive");

  const Matrix& a = gram.entries();
  const double tol = opts.tol_per_task * static_cast<double>(k);

  Vector w = opts.warm_start ? *opts.warm_start : Vector::Ones(k);
  if (w.size() != k) throw std::invalid_argument("solve_weights: warm start size mismatch");
  if (!w.allFinite()) w = Vector::Ones(k);
  w = detail::clamp_floor(std::move(w), opts.w_min);

  Vector f = detail::residual_unchecked(a, w, alpha);
  double cost = f.squaredNorm();
  double damping = opts.initial_damping;
  // One damped Gauss-Newton step; taken only if the cost falls below
  // `required` times its current value.
  auto lm_step = [&](double required) {
    const Matrix jac = detail::jacobian(a, w, alpha);
    const Matrix jtj = jac.transpose() * jac;
    const Vector jtf = jac.transpose() * f;
    const Vector scale = jtj.diagonal().cwiseMax(1e-300);
    while (damping < 1e16) {
      Matrix lhs = jtj;
      lhs.diagonal() += damping * scale;
      const Vector step = lhs.ldlt().solve(-jtf);
      Vector trial = detail::clamp_floor(w + step, opts.w_min);
      Vector f_trial = detail::residual_unchecked(a, trial, alpha);
      const double trial_cost = f_trial.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < required * cost) {
        w = std::move(trial);
        f = std::move(f_trial);
        cost = trial_cost;
        damping = std::max(damping / 10.0, 1e-12);
        return true;
      }
      damping *= 10.0;
    }
    return false;  // no descent available from here
  };

  int it = 0;
  for (; it < opts.max_iterations && std::sqrt(cost) > tol; ++it) {
    if (!lm_step(1.0)) break;
  }
  // The tolerance bounds the residual, not the weights: where G^T G is small
  // the Jacobian is too, and w can still be off by tol / sigma. Near the root
  // the steps converge quadratically, so a few more pin w down.
  if (std::sqrt(cost) <= tol) {
    damping = 1e-12;
    for (int polish = 0; polish < 4 && cost > 0.0 && it < opts.max_iterations; ++polish, ++it) {
      if (!lm_step(0.25)) break;
    }
  }

  report.weights = std::move(w);
  report.residual_norm = std::sqrt(cost);
  report.iterations = it;
  report.converged = report.residual_norm <= tol;
  report.mode = SolverMode::least_squares;
  return report;
}

/// Approximate solver: projected gradient descent on 0.5 ||f(w)||^2 starting
/// at all-ones, one gradient step per epoch. The step starts at inner_lr and
/// is halved until the objective does not increase, so the residual never
/// grows. No convergence guarantee; the report states the final residual.
inline SolverReport solve_weights_sgd(const GramMatrix& gram, double alpha, double inner_lr = 0.1, int epochs = 20,
                                      double w_min = 1e-8, double tol_per_task = 1e-8,
                                      std::vector<WeightVector>* history = nullptr) {
  const Eigen::Index k = gram.size();
  SolverReport report;
  report.mode = SolverMode::sgd_inner;
  if (alpha == 0.0) {
    report.weights = WeightVector::Ones(k);
    report.converged = true;
    report.mode = SolverMode::closed_form;
    return report;
  }
  detail::check_alpha(alpha);
  if (!(inner_lr > 0.0)) throw std::invalid_argument("solve_weights_sgd: inner_lr must be positive");
  if (epochs <= 0) throw std::invalid_argument("solve_weights_sgd: epochs must be positive");

  const Matrix& a = gram.entries();
  Vector w = Vector::Ones(k).cwiseMax(w_min);
  Vector f = detail::residual_unchecked(a, w, alpha);
  double cost = 0.5 * f.squaredNorm();
  if (history) history->push_back(w);

  int epoch = 0;
  for (; epoch < epochs && cost > 0.0; ++epoch) {
    const Vector grad = detail::jacobian(a, w, alpha).transpose() * f;
    for (double lr = inner_lr; lr > 1e-30; lr *= 0.5) {
      Vector trial = detail::clamp_floor(w - lr * grad, w_min);
      Vector f_trial = detail::residual_unchecked(a, trial, alpha);
      const double trial_cost = 0.5 * f_trial.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        w = std::move(trial);
        f = std::move(f_trial);
        cost = trial_cost;
        break;
      }
    }
    if (history) history->push_back(w);
  }

  report.weights = std::move(w);
  report.residual_norm = f.norm();
  report.iterations = epoch;
  report.converged = report.residual_norm <= tol_per_task * static_cast<double>(k);
  return report;
}

}  // namespace fairgrad
