#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "fairgrad/core_types.hpp"
#include "fairgrad/random.hpp"

namespace fairgrad {

// ---------------------------------------------------------------------------
// Utility and loss transformation

/// x^(1-alpha)/(1-alpha), or ln x at alpha = 1.
inline double alpha_utility(double x, double alpha) {
  if (!(x > 0.0)) throw std::domain_error("alpha_utility: x must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha_utility: alpha must be nonnegative");
  if (alpha == 1.0) return std::log(x);
  return std::pow(x, 1.0 - alpha) / (1.0 - alpha);
}

/// d/dx of alpha_utility: x^(-alpha).
inline double alpha_utility_derivative(double x, double alpha) { return std::pow(x, -alpha); }

/// Options for the loss transformation. alpha < 1; alpha == 1 selects the
/// logarithmic limit. With a floor set, nonpositive (or smaller) losses are
/// clamped to it and a warning goes to `warn`; without one they are rejected.
struct LossTransform {
  double alpha = 0.0;
  std::optional<double> floor;
  std::ostream* warn = &std::cerr;

  bool log_limit() const { return alpha == 1.0; }

  void check() const {
    if (!(alpha <= 1.0) || !std::isfinite(alpha)) {
      throw std::invalid_argument("loss transform: alpha must be < 1 (or 1 for the log limit)");
    }
    if (floor && !(*floor > 0.0)) throw std::invalid_argument("loss transform: floor must be positive");
  }

  Vector prepare(const Vector& losses) const {
    check();
    if (!floor) {
      if ((losses.array() <= 0.0).any() || !losses.allFinite()) {
        throw std::domain_error("loss transform: losses must be positive");
      }
      return losses;
    }
    Vector out = losses;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (!(out(i) >= *floor)) {
        if (warn) *warn << "warning: loss " << i << " = " << out(i) << " clamped to floor " << *floor << "\n";
        out(i) = *floor;
      }
    }
    return out;
  }
};

/// l_i^(1-alpha)/(1-alpha) elementwise, or ln l_i in the log limit.
inline Vector transform_losses(const Vector& losses, const LossTransform& t) {
  const Vector l = t.prepare(losses);
  if (t.log_limit()) return l.array().log().matrix();
  const double e = 1.0 - t.alpha;
  return l.unaryExpr([e](double v) { return std::pow(v, e) / e; });
}

inline Vector transform_losses(const Vector& losses, double alpha) {
  return transform_losses(losses, LossTransform{alpha, std::nullopt, nullptr});
}

/// Column i scaled by l_i^(-alpha): the chain rule through transform_losses.
inline GradientMatrix transform_gradients(const Vector& losses, const GradientMatrix& grads, const LossTransform& t) {
  if (losses.size() != grads.cols()) throw std::invalid_argument("transform_gradients: loss count mismatch");
  const Vector l = t.prepare(losses);
  GradientMatrix out = grads;
  for (Eigen::Index i = 0; i < out.cols(); ++i) out.col(i) *= std::pow(l(i), -t.alpha);
  return out;
}

inline GradientMatrix transform_gradients(const Vector& losses, const GradientMatrix& grads, double alpha) {
  return transform_gradients(losses, grads, LossTransform{alpha, std::nullopt, nullptr});
}

// ---------------------------------------------------------------------------
// Single-link resource allocation

/// K users sharing one link: {x >= 0, sum x <= capacity, x <= caps}. Optional
/// positive utility weights give the weighted objective sum a_i u(x_i).
struct AllocationProblem {
  double capacity = 1.0;
  Vector caps;     // +inf for uncapped users
  Vector weights;  // all ones when unweighted

  static AllocationProblem uniform(Eigen::Index users, double capacity) {
    return {capacity, Vector::Constant(users, std::numeric_limits<double>::infinity()), Vector::Ones(users)};
  }

  Eigen::Index users() const { return caps.size(); }

  void check() const {
    if (!(capacity > 0.0) || !std::isfinite(capacity)) throw std::invalid_argument("allocation: capacity must be positive");
    if (caps.size() == 0) throw std::invalid_argument("allocation: need at least one user");
    if (weights.size() != caps.size()) throw std::invalid_argument("allocation: weights/caps size mismatch");
    if ((caps.array() <= 0.0).any()) throw std::invalid_argument("allocation: caps must be positive");
    if ((weights.array() <= 0.0).any() || !weights.allFinite()) {
      throw std::invalid_argument("allocation: utility weights must be positive");
    }
  }
};

struct AllocationResult {
  Vector rates;
  double kkt_residual = 0.0;
  bool degenerate = false;  // every cap binds below the link capacity
};

namespace detail {

// Rate floor keeping every utility finite.
inline constexpr double kRateFloor = 1e-9;

// Smallest price whose rate response fits within target, for a response that
// is nonincreasing in the price. Bisection on a geometric scale.
template <typename Rates>
double bisect_price(Rates&& rates_at, double target, double rel_tol = 0.0) {
  double lo = 1e-300, hi = 1.0;
  while (rates_at(hi).sum() > target && hi < 1e300) hi *= 16.0;
  lo = hi / 16.0;
  while (rates_at(lo).sum() < target && lo > 1e-300) lo /= 16.0;
  for (int i = 0; i < 2000; ++i) {
    const double mid = std::sqrt(lo) * std::sqrt(hi);
    if (!(mid > lo && mid < hi) || hi - lo <= rel_tol * hi) break;
    if (rates_at(mid).sum() > target) lo = mid; else hi = mid;
  }
  // hi satisfies the capacity constraint.
  return hi;
}

}  // namespace detail

/// Maximizes sum_i a_i u_alpha(x_i) on the single-link region by water-filling
/// on the link price mu: x_i(mu) = clip((a_i/mu)^(1/alpha), floor, cap_i), with
/// mu found by bisection so the link is exactly full. alpha = 0 is linear and
/// filled greedily by weight, ties split evenly. If the caps sum to at most the
/// capacity, the answer is the caps and the result is marked degenerate.
///
/// tol is the relative width at which the price bisection stops; 0 runs it to
/// adjacent doubles. kkt_residual is the largest violation of the stationarity
/// conditions at the returned point, relative to the price.
inline AllocationResult solve_allocation(const AllocationProblem& prob, double alpha, double tol = 0.0) {
  prob.check();
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("solve_allocation: alpha must be >= 0");
  const Eigen::Index k = prob.users();
  const double floor = detail::kRateFloor;
  AllocationResult res;

  if (prob.caps.sum() <= prob.capacity) {
    res.rates = prob.caps;
    res.degenerate = true;
    return res;
  }

  // Even split of `budget` among `members`, respecting caps.
  auto water_fill_equal = [&](const std::vector<Eigen::Index>& members, double budget, Vector& x) {
    auto level_rates = [&](double level) {
      Vector r(static_cast<Eigen::Index>(members.size()));
      for (std::size_t j = 0; j < members.size(); ++j) r(static_cast<Eigen::Index>(j)) = std::min(level, prob.caps(members[j]));
      return r;
    };
    double capped_total = 0.0;
    for (auto m : members) capped_total += prob.caps(m);
    if (capped_total <= budget) {
      for (auto m : members) x(m) = prob.caps(m);
      return budget - capped_total;
    }
    // price = 1/level, response nonincreasing in price
    const double price = detail::bisect_price([&](double p) { return level_rates(1.0 / p); }, budget);
    const Vector r = level_rates(1.0 / price);
    for (std::size_t j = 0; j < members.size(); ++j) x(members[j]) = r(static_cast<Eigen::Index>(j));
    return 0.0;
  };

  if (alpha == 0.0) {
    res.rates = Vector::Zero(k);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return prob.weights(a) > prob.weights(b); });
    double budget = prob.capacity;
    for (std::size_t s = 0; s < order.size() && budget > 0.0;) {
      std::size_t e = s;
      std::vector<Eigen::Index> group;
      while (e < order.size() && prob.weights(order[e]) == prob.weights(order[s])) group.push_back(order[e++]);
      budget = water_fill_equal(group, budget, res.rates);
      s = e;
    }
    res.rates = res.rates.cwiseMax(floor);
    res.kkt_residual = 0.0;
    return res;
  }

  auto rates_at = [&](double price) {
    Vector x(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double unconstrained = std::exp(std::log(prob.weights(i) / price) / alpha);
      x(i) = std::clamp(unconstrained, floor, prob.caps(i));
    }
    return x;
  };
  const double price = detail::bisect_price(rates_at, prob.capacity, tol);
  res.rates = rates_at(price);

  // KKT: a_i x_i^-alpha = mu on free users, >= mu on capped ones, <= mu on
  // users at the floor.
  double worst = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double marginal = prob.weights(i) * alpha_utility_derivative(res.rates(i), alpha);
    const double rel = (marginal - price) / price;
    const bool at_cap = res.rates(i) >= prob.caps(i);
    const bool at_floor = res.rates(i) <= floor;
    double v = std::abs(rel);
    if (at_cap) v = std::max(0.0, -rel);
    if (at_floor) v = std::max(0.0, rel);
    worst = std::max(worst, v);
  }
  const double slack = std::abs(res.rates.sum() - prob.capacity) / prob.capacity;
  res.kkt_residual = std::max(worst, slack);
  return res;
}

/// Draws a feasible point: capacity times a flat Dirichlet over K users plus
/// one slack coordinate, clipped to the caps.
inline Vector sample_feasible(const AllocationProblem& prob, CounterRng& rng) {
  const Eigen::Index k = prob.users();
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Vector g(k + 1);
  for (Eigen::Index i = 0; i <= k; ++i) g(i) = gamma(rng);
  const Vector share = g.head(k) / g.sum();
  return (prob.capacity * share).cwiseMin(prob.caps);
}

/// max over feasible samples of sum_i (x_i - x*_i)/x*_i. Nonpositive exactly
/// when x* is the proportionally fair allocation.
inline double check_proportional_fairness(const AllocationProblem& prob, const Vector& x_star, int samples,
                                          CounterRng& rng) {
  prob.check();
  if (x_star.size() != prob.users()) throw std::invalid_argument("check_proportional_fairness: size mismatch");
  double worst = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const Vector x = sample_feasible(prob, rng);
    worst = std::max(worst, ((x - x_star).array() / x_star.array()).sum());
  }
  return worst;
}

/// sum_i (x_i - x*_i)/x*_i for one candidate point.
inline double proportional_change(const Vector& x, const Vector& x_star) {
  return ((x - x_star).array() / x_star.array()).sum();
}

}  // namespace fairgrad
