#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fairgrad/core_types.hpp"
#include "fairgrad/min_norm.hpp"
#include "fairgrad/random.hpp"
#include "fairgrad/weight_solver.hpp"

namespace fairgrad {

/// Direction plus the per-task weights that produced it (d = G w where the
/// method is a weighting; PCGrad reports its nominal 1/K or 1 weights).
struct Aggregate {
  Direction direction;
  WeightVector weights;
  SolverReport solver;  // populated by fairgrad only
  bool flagged = false;  // solver did not converge, or constraint slack violated
};

namespace detail {

inline void check_grads(const GradientMatrix& g) {
  if (g.cols() == 0 || g.rows() == 0) throw std::invalid_argument("gradient matrix must be non-empty");
  require_finite(g, "gradients");
}

inline Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FairGrad

/// Weights from G^T G w = w^(-1/alpha) and d = G w. When the solver converges
/// every task gets a nonnegative directional gain g_i^T d; a violation beyond
/// 1e-8 is flagged, not repaired.
inline Aggregate aggregate_fairgrad(const GradientMatrix& grads, double alpha, const WeightSolverOptions& opts = {},
                                    SolverMode mode = SolverMode::least_squares, double sgd_lr = 0.1,
                                    int sgd_epochs = 20) {
  detail::check_grads(grads);
  const GramMatrix gram = build_gram(grads);
  Aggregate out;
  if (mode == SolverMode::sgd_inner && alpha != 0.0) {
    out.solver = solve_weights_sgd(gram, alpha, sgd_lr, sgd_epochs, opts.w_min, opts.tol_per_task);
  } else {
    out.solver = solve_weights(gram, alpha, opts);
  }
  out.weights = out.solver.weights;
  out.direction = grads * out.weights;
  out.flagged = !out.solver.converged;
  if (out.solver.converged) {
    const Vector gain = grads.transpose() * out.direction;
    if ((gain.array() < -1e-8).any()) out.flagged = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear scalarization and scale-invariant weighting

inline Direction aggregate_ls(const GradientMatrix& grads) {
  detail::check_grads(grads);
  return grads.rowwise().sum();
}

inline Direction aggregate_si(const Vector& losses, const GradientMatrix& grads) {
  detail::check_grads(grads);
  if (losses.size() != grads.cols()) throw std::invalid_argument("aggregate_si: loss count mismatch");
  if ((losses.array() <= 0.0).any()) throw std::domain_error("aggregate_si: losses must be positive");
  return grads * losses.cwiseInverse();
}

// ---------------------------------------------------------------------------
// Random loss weighting

/// Softmax of K standard-normal logits drawn from rng.
inline Aggregate aggregate_rlw(const GradientMatrix& grads, CounterRng& rng) {
  detail::check_grads(grads);
  const Eigen::Index k = grads.cols();
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector logits(k);
  for (Eigen::Index i = 0; i < k; ++i) logits(i) = normal(rng);
  Aggregate out;
  out.weights = detail::softmax(logits);
  out.direction = grads * out.weights;
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic weight average

/// Loss history for DWA. Holds at most the two most recent loss vectors.
class DwaState {
 public:
  explicit DwaState(double temperature = 2.0) : temperature_(temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("DwaState: temperature must be positive");
  }

  double temperature() const { return temperature_; }
  std::size_t history_size() const { return history_.size(); }

  /// K * softmax(r / T) with r_i = l_i(t-1) / l_i(t-2); uniform until two
  /// past vectors are available.
  Vector weights(Eigen::Index k) const {
    if (history_.size() < 2) return Vector::Ones(k);
    const Vector& prev = history_[1];
    const Vector& prev2 = history_[0];
    if (prev.size() != k || prev2.size() != k) throw std::invalid_argument("DwaState: task count changed");
    if ((prev2.array() == 0.0).any()) throw std::domain_error("DwaState: zero past loss");
    const Vector ratio = prev.cwiseQuotient(prev2);
    return static_cast<double>(k) * detail::softmax(ratio / temperature_);
  }

  void push(const Vector& losses) {
    history_.push_back(losses);
    if (history_.size() > 2) history_.pop_front();
  }

 private:
  double temperature_;
  std::deque<Vector> history_;
};

/// Weights from the stored history, then records the current losses.
inline Aggregate aggregate_dwa(const Vector& losses, const GradientMatrix& grads, DwaState& state) {
  detail::check_grads(grads);
  if (losses.size() != grads.cols()) throw std::invalid_argument("aggregate_dwa: loss count mismatch");
  Aggregate out;
  out.weights = state.weights(grads.cols());
  out.direction = grads * out.weights;
  state.push(losses);
  return out;
}

// ---------------------------------------------------------------------------
// MGDA

/// Min-norm convex combination of the task gradients.
inline Aggregate aggregate_mgda(const GradientMatrix& grads, const MinNormOptions& opts = {}) {
  detail::check_grads(grads);
  const Matrix gram = grads.transpose() * grads;
  const MinNormResult mn = min_norm_simplex(gram, opts);
  Aggregate out;
  out.weights = mn.weights;
  out.direction = grads * mn.weights;
  out.flagged = !mn.converged;
  return out;
}

// ---------------------------------------------------------------------------
// PCGrad

/// For each task, projects away conflicting components against every other
/// task (visited in an rng-shuffled order), then averages or sums.
inline Direction aggregate_pcgrad(const GradientMatrix& grads, CounterRng& rng,
                                  PcgradReduce reduce = PcgradReduce::mean) {
  detail::check_grads(grads);
  const Eigen::Index k = grads.cols();
  const Vector sq_norms = grads.colwise().squaredNorm().transpose();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  Direction total = Direction::Zero(grads.rows());
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector gi = grads.col(i);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index j : order) {
      if (j == i || sq_norms(j) == 0.0) continue;
      const double dot = gi.dot(grads.col(j));
      if (dot < 0.0) gi -= (dot / sq_norms(j)) * grads.col(j);
    }
    total += gi;
  }
  if (reduce == PcgradReduce::mean) total /= static_cast<double>(k);
  return total;
}

// ---------------------------------------------------------------------------
// Dispatch

/// Per-run state shared by the stateful baselines. Owned by a single run.
struct AggregatorState {
  Method method = Method::fairgrad;
  CounterRng rng;
  DwaState dwa{2.0};
  std::optional<WeightVector> warm_weights;  // fairgrad warm start

  AggregatorState() = default;
  AggregatorState(Method m, CounterRng r, double dwa_temperature) : method(m), rng(r), dwa(dwa_temperature) {}
};

/// Applies config.method to (losses, grads).
inline Aggregate aggregate(const Vector& losses, const GradientMatrix& grads, const ExperimentConfig& cfg,
                           AggregatorState& state) {
  const Eigen::Index k = grads.cols();
  switch (cfg.method) {
    case Method::fairgrad: {
      WeightSolverOptions opts = WeightSolverOptions::from(cfg);
      opts.warm_start = state.warm_weights;
      Aggregate out = aggregate_fairgrad(grads, cfg.alpha, opts, cfg.solver_mode, cfg.sgd_inner_lr, cfg.sgd_epochs);
      state.warm_weights = out.weights;
      return out;
    }
    case Method::ls: {
      Aggregate out;
      out.direction = aggregate_ls(grads);
      out.weights = Vector::Ones(k);
      return out;
    }
    case Method::si: {
      Aggregate out;
      out.direction = aggregate_si(losses, grads);
      out.weights = losses.cwiseInverse();
      return out;
    }
    case Method::rlw:
      return aggregate_rlw(grads, state.rng);
    case Method::dwa:
      return aggregate_dwa(losses, grads, state.dwa);
    case Method::mgda:
      return aggregate_mgda(grads);
    case Method::pcgrad: {
      Aggregate out;
      out.direction = aggregate_pcgrad(grads, state.rng, cfg.pcgrad_reduce);
      out.weights = Vector::Constant(k, cfg.pcgrad_reduce == PcgradReduce::mean ? 1.0 / static_cast<double>(k) : 1.0);
      return out;
    }
  }
  throw std::invalid_argument("aggregate: unknown method");
}

}  // namespace fairgrad
