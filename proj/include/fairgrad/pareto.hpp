#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fairgrad/core_types.hpp"
#include "fairgrad/min_norm.hpp"

namespace fairgrad {

/// Minimization dominance: lu <= lv elementwise and lu != lv.
inline bool dominates(const Vector& lu, const Vector& lv) {
  if (lu.size() != lv.size()) throw std::invalid_argument("dominates: length mismatch");
  bool strict = false;
  for (Eigen::Index i = 0; i < lu.size(); ++i) {
    if (lu(i) > lv(i)) return false;
    if (lu(i) < lv(i)) strict = true;
  }
  return strict;
}

/// min over the probability simplex of ||G w||. Zero at Pareto-stationary points.
inline double stationarity_measure(const GradientMatrix& grads, const MinNormOptions& opts = {}) {
  require_finite(grads, "stationarity_measure");
  if (grads.cols() == 0) throw std::invalid_argument("stationarity_measure: no tasks");
  const Matrix gram = grads.transpose() * grads;
  const MinNormResult mn = min_norm_simplex(gram, opts);
  return (grads * mn.weights).norm();
}

inline bool is_stationary(const GradientMatrix& grads, double tol) { return stationarity_measure(grads) <= tol; }

/// Smallest eigenvalue of the (symmetric PSD) Gram matrix, clamped at zero.
inline double smallest_singular_value(const GramMatrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram.entries(), Eigen::EigenvaluesOnly);
  return std::max(0.0, eig.eigenvalues().minCoeff());
}

struct FrontPoint {
  Vector point;
  Vector losses;
};

struct GridBounds {
  double lo0, hi0, lo1, hi1;
};

/// Brute-force Pareto front for problems on R^2: evaluates the losses on a
/// resolution x resolution grid and keeps the nondominated points (duplicates
/// of the same loss vector collapse to one).
template <MultiObjective P>
std::vector<FrontPoint> sample_front_2d(const P& problem, const GridBounds& bounds, int resolution) {
  if (problem.dimension() != 2) throw std::invalid_argument("sample_front_2d: problem must be 2-dimensional");
  if (resolution < 1) throw std::invalid_argument("sample_front_2d: resolution must be positive");
  const bool single = bounds.lo0 == bounds.hi0 && bounds.lo1 == bounds.hi1;
  if (resolution < 2 && !single) throw std::invalid_argument("sample_front_2d: resolution must be >= 2");

  std::vector<FrontPoint> samples;
  const int n = single ? 1 : resolution;
  samples.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Vector x(2);
      x(0) = n == 1 ? bounds.lo0 : bounds.lo0 + (bounds.hi0 - bounds.lo0) * i / (n - 1);
      x(1) = n == 1 ? bounds.lo1 : bounds.lo1 + (bounds.hi1 - bounds.lo1) * j / (n - 1);
      samples.push_back({x, problem.losses(x)});
    }
  }

  // Lexicographic sort, then a sweep keeping each point not dominated by an
  // earlier survivor.
  std::sort(samples.begin(), samples.end(), [](const FrontPoint& a, const FrontPoint& b) {
    return std::lexicographical_compare(a.losses.begin(), a.losses.end(), b.losses.begin(), b.losses.end());
  });
  std::vector<FrontPoint> front;
  for (auto& s : samples) {
    bool keep = true;
    for (const auto& f : front) {
      if (dominates(f.losses, s.losses) || f.losses == s.losses) {
        keep = false;
        break;
      }
    }
    if (keep) front.push_back(std::move(s));
  }
  return front;
}

}  // namespace fairgrad
