#pragma once

#include <algorithm>
#include <cmath>

#include "fairgrad/core_types.hpp"

namespace fairgrad {

struct MinNormOptions {
  double gap_tol = 1e-10;
  int max_iterations = 1000;
};

struct MinNormResult {
  Vector weights;  // on the probability simplex
  double norm_sq = 0.0;
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimum-norm point of the convex hull of the task gradients, i.e.
/// argmin_{w in simplex} w^T A w for A = G^T G.
///
/// Frank-Wolfe with exact line search and away steps. The toward vertex is
/// argmin_i (A w)_i, ties to the lowest index. Stops when the Frank-Wolfe
/// duality gap w^T A w - min_i (A w)_i drops to gap_tol.
inline MinNormResult min_norm_simplex(const Matrix& gram, const MinNormOptions& opts = {}) {
  const Eigen::Index k = gram.rows();
  MinNormResult res;
  res.weights = Vector::Zero(k);
  if (k == 0) return res;

  // Start at the shortest gradient.
  Eigen::Index start = 0;
  for (Eigen::Index i = 1; i < k; ++i) {
    if (gram(i, i) < gram(start, start)) start = i;
  }
  Vector& w = res.weights;
  w(start) = 1.0;
  Vector aw = gram.col(start);

  for (int it = 0; it < opts.max_iterations; ++it) {
    const double waw = w.dot(aw);

    Eigen::Index toward = 0;
    for (Eigen::Index i = 1; i < k; ++i) {
      if (aw(i) < aw(toward)) toward = i;
    }
    Eigen::Index away = -1;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (w(i) > 0.0 && (away < 0 || aw(i) > aw(away))) away = i;
    }

    const double fw_gap = waw - aw(toward);
    res.gap = fw_gap;
    res.iterations = it;
    if (fw_gap <= opts.gap_tol) {
      res.converged = true;
      break;
    }
    const double away_gap = aw(away) - waw;

    // Direction dir = e_toward - w (FW) or w - e_away (away); all quantities
    // below are expressed through A so the cost is O(K^2) per iteration.
    double slope, curvature, step_max;
    Vector a_dir;
    if (fw_gap >= away_gap) {
      a_dir = gram.col(toward) - aw;
      slope = aw(toward) - waw;
      curvature = gram(toward, toward) - 2.0 * aw(toward) + waw;
      step_max = 1.0;
    } else {
      a_dir = aw - gram.col(away);
      slope = waw - aw(away);
      curvature = waw - 2.0 * aw(away) + gram(away, away);
      step_max = w(away) / (1.0 - w(away));
    }
    if (!(curvature > 0.0)) break;
    const double step = std::clamp(-slope / curvature, 0.0, step_max);
    if (step <= 0.0) break;

    if (fw_gap >= away_gap) {
      w *= (1.0 - step);
      w(toward) += step;
    } else {
      w *= (1.0 + step);
      w(away) -= step;
      if (step == step_max) w(away) = 0.0;
    }
    w = w.cwiseMax(0.0);
    aw += step * a_dir;
    res.iterations = it + 1;
  }

  w /= w.sum();
  aw = gram * w;
  res.norm_sq = std::max(0.0, w.dot(aw));
  double min_aw = aw.minCoeff();
  res.gap = res.norm_sq - min_aw;
  if (res.gap <= opts.gap_tol) res.converged = true;
  return res;
}

}  // namespace fairgrad
