#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "fairgrad/core_types.hpp"
#include "fairgrad/random.hpp"

namespace fairgrad {

// ---------------------------------------------------------------------------
// Two-task toy problem on R^2
//
//   L1 = 0.1 (f1 g1 + f2 h1),   L2 = f1 g2 + f2 h2
//   f1 = max(tanh(x2/2), 0),    f2 = max(tanh(-x2/2), 0)
//   g1 = log(max(|-(x1+7)/2 - tanh(-x2)|, 5e-6)) + 6
//   g2 = log(max(|(3-x1)/2 - tanh(-x2) + 2|, 5e-6)) + 6
//   h1 = ((7-x1)^2 + 0.1 (x1+8)^2)/10 - 20
//   h2 = ((x1+7)^2 + 0.1 (x1+8)^2)/10 - 20
//
// Derivative conventions at the kinks: max(t, 0) passes the derivative of t
// when t >= 0; |z| has derivative sign(z) with sign(0) = 0; the clamp
// max(|z|, 5e-6) passes the |z| branch when |z| >= 5e-6.

class ToyProblem {
 public:
  static constexpr double kClamp = 0.000005;

  Eigen::Index dimension() const { return 2; }
  Eigen::Index task_count() const { return 2; }

  Vector losses(const Vector& x) const {
    const Terms t = terms(x);
    Vector l(2);
    l(0) = 0.1 * (t.f1 * t.g1 + t.f2 * t.h1);
    l(1) = t.f1 * t.g2 + t.f2 * t.h2;
    return l;
  }

  GradientMatrix gradients(const Vector& x) const {
    const Terms t = terms(x);
    GradientMatrix g(2, 2);
    // task 1
    g(0, 0) = 0.1 * (t.f1 * t.dg1_dx1 + t.f2 * t.dh1_dx1);
    g(1, 0) = 0.1 * (t.df1 * t.g1 + t.f1 * t.dg1_dx2 + t.df2 * t.h1);
    // task 2
    g(0, 1) = t.f1 * t.dg2_dx1 + t.f2 * t.dh2_dx1;
    g(1, 1) = t.df1 * t.g2 + t.f1 * t.dg2_dx2 + t.df2 * t.h2;
    return g;
  }

  /// The five documented initial points, addressed as p1..p5.
  static constexpr std::array<std::array<double, 2>, 5> kStarts{{
      {-8.5, 7.5},
      {0.0, 0.0},
      {9.0, 9.0},
      {-7.5, -0.5},
      {9.0, -1.0},
  }};

  static Vector start(std::size_t index) {
    if (index >= kStarts.size()) throw std::out_of_range("toy start index");
    Vector x(2);
    x << kStarts[index][0], kStarts[index][1];
    return x;
  }

  /// "p1".."p5" -> index 0..4.
  static std::optional<std::size_t> parse_start(std::string_view name) {
    if (name.size() == 2 && name[0] == 'p' && name[1] >= '1' && name[1] <= '5') {
      return static_cast<std::size_t>(name[1] - '1');
    }
    return std::nullopt;
  }

  /// Arguments of the clamped logs; the gradient is not smooth where either
  /// is within the clamp, where either changes sign, or at x2 = 0.
  static std::pair<double, double> log_arguments(const Vector& x) {
    const double tm = std::tanh(-x(1));
    return {0.5 * (-x(0) - 7.0) - tm, 0.5 * (-x(0) + 3.0) - tm + 2.0};
  }

 private:
  struct Terms {
    double f1, f2, df1, df2;
    double g1, g2, dg1_dx1, dg1_dx2, dg2_dx1, dg2_dx2;
    double h1, h2, dh1_dx1, dh2_dx1;
  };

  // log(max(|z|, clamp)) + 6 and its derivative with respect to z.
  static std::pair<double, double> clamped_log(double z) {
    const double a = std::abs(z);
    if (a >= kClamp) {
      const double sign = z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
      return {std::log(a) + 6.0, sign / a};
    }
    return {std::log(kClamp) + 6.0, 0.0};
  }

  static Terms terms(const Vector& x) {
    if (x.size() != 2) throw std::invalid_argument("toy problem is 2-dimensional");
    const double x1 = x(0), x2 = x(1);
    Terms t{};

    const double tp = std::tanh(0.5 * x2);
    const double tn = std::tanh(-0.5 * x2);
    t.f1 = std::max(tp, 0.0);
    t.f2 = std::max(tn, 0.0);
    t.df1 = tp >= 0.0 ? 0.5 * (1.0 - tp * tp) : 0.0;
    t.df2 = tn >= 0.0 ? -0.5 * (1.0 - tn * tn) : 0.0;

    // d/dx2 of -tanh(-x2) is 1 - tanh(-x2)^2
    const double tm = std::tanh(-x2);
    const double dz_dx2 = 1.0 - tm * tm;
    const auto [z1, z2] = log_arguments(x);
    const auto [g1, dg1] = clamped_log(z1);
    const auto [g2, dg2] = clamped_log(z2);
    t.g1 = g1;
    t.g2 = g2;
    t.dg1_dx1 = -0.5 * dg1;
    t.dg1_dx2 = dz_dx2 * dg1;
    t.dg2_dx1 = -0.5 * dg2;
    t.dg2_dx2 = dz_dx2 * dg2;

    t.h1 = ((-x1 + 7.0) * (-x1 + 7.0) + 0.1 * (-x1 - 8.0) * (-x1 - 8.0)) / 10.0 - 20.0;
    t.h2 = ((-x1 - 7.0) * (-x1 - 7.0) + 0.1 * (-x1 - 8.0) * (-x1 - 8.0)) / 10.0 - 20.0;
    t.dh1_dx1 = (-2.0 * (-x1 + 7.0) - 0.2 * (-x1 - 8.0)) / 10.0;
    t.dh2_dx1 = (-2.0 * (-x1 - 7.0) - 0.2 * (-x1 - 8.0)) / 10.0;
    return t;
  }
};

static_assert(MultiObjective<ToyProblem>);

// ---------------------------------------------------------------------------
// Random convex quadratics: l_i(x) = 0.5 (x - c_i)^T A_i (x - c_i) + b_i

class QuadraticProblem {
 public:
  /// With `smoothness` absent, L is the largest eigenvalue found by a
  /// symmetric eigensolve of each A_i.
  QuadraticProblem(std::vector<Matrix> curvatures, std::vector<Vector> centers, Vector offsets,
                   std::optional<double> smoothness = std::nullopt)
      : a_(std::move(curvatures)), c_(std::move(centers)), b_(std::move(offsets)) {
    if (a_.empty() || a_.size() != c_.size() || static_cast<Eigen::Index>(a_.size()) != b_.size()) {
      throw std::invalid_argument("QuadraticProblem: inconsistent task data");
    }
    const Eigen::Index m = c_.front().size();
    smoothness_ = 0.0;
    for (std::size_t i = 0; i < a_.size(); ++i) {
      if (a_[i].rows() != m || a_[i].cols() != m || c_[i].size() != m) {
        throw std::invalid_argument("QuadraticProblem: dimension mismatch");
      }
      Eigen::SelfAdjointEigenSolver<Matrix> eig(a_[i], Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() <= 0.0) throw std::invalid_argument("QuadraticProblem: A_i must be SPD");
      smoothness_ = std::max(smoothness_, eig.eigenvalues().maxCoeff());
    }
    if (smoothness) smoothness_ = std::max(smoothness_, *smoothness);
  }

  /// K tasks on R^m with A_i = Q diag(lambda) Q^T, lambda ~ U[0.1, condition_bound],
  /// Q Haar-random; centers standard normal; offsets 1 so every loss is >= 1.
  static QuadraticProblem random(Eigen::Index tasks, Eigen::Index dim, CounterRng& rng, double condition_bound = 10.0) {
    if (tasks < 1 || dim < 1) throw std::invalid_argument("QuadraticProblem::random: K, m must be >= 1");
    if (!(condition_bound >= 0.1)) throw std::invalid_argument("QuadraticProblem::random: condition bound < 0.1");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> eig(0.1, condition_bound);
    std::vector<Matrix> as;
    std::vector<Vector> cs;
    double largest = 0.0;
    for (Eigen::Index i = 0; i < tasks; ++i) {
      Matrix gauss(dim, dim);
      for (Eigen::Index r = 0; r < dim; ++r) {
        for (Eigen::Index c = 0; c < dim; ++c) gauss(r, c) = normal(rng);
      }
      const Matrix q = Eigen::HouseholderQR<Matrix>(gauss).householderQ();
      Vector lambda(dim);
      for (Eigen::Index r = 0; r < dim; ++r) lambda(r) = eig(rng);
      largest = std::max(largest, lambda.maxCoeff());
      Matrix a = q * lambda.asDiagonal() * q.transpose();
      a = 0.5 * (a + a.transpose()).eval();
      as.push_back(std::move(a));
      Vector c(dim);
      for (Eigen::Index r = 0; r < dim; ++r) c(r) = normal(rng);
      cs.push_back(std::move(c));
    }
    return QuadraticProblem(std::move(as), std::move(cs), Vector::Ones(tasks), largest);
  }

  Eigen::Index dimension() const { return c_.front().size(); }
  Eigen::Index task_count() const { return static_cast<Eigen::Index>(a_.size()); }

  /// Exact smoothness constant: the largest eigenvalue over all A_i.
  double smoothness() const { return smoothness_; }

  const Matrix& curvature(std::size_t i) const { return a_.at(i); }
  const Vector& center(std::size_t i) const { return c_.at(i); }

  Vector losses(const Vector& x) const {
    Vector l(task_count());
    for (std::size_t i = 0; i < a_.size(); ++i) {
      const Vector r = x - c_[i];
      l(static_cast<Eigen::Index>(i)) = 0.5 * r.dot(a_[i] * r) + b_(static_cast<Eigen::Index>(i));
    }
    return l;
  }

  GradientMatrix gradients(const Vector& x) const {
    GradientMatrix g(dimension(), task_count());
    for (std::size_t i = 0; i < a_.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = a_[i] * (x - c_[i]);
    return g;
  }

 private:
  std::vector<Matrix> a_;
  std::vector<Vector> c_;
  Vector b_;
  double smoothness_ = 0.0;
};

static_assert(MultiObjective<QuadraticProblem>);

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Central differences of problem.losses around x, one column per task.
template <MultiObjective P>
GradientMatrix finite_difference_gradients(const P& problem, const Vector& x, double h = 1e-6) {
  GradientMatrix g(problem.dimension(), problem.task_count());
  Vector xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp(j) = x(j) + h;
    xm(j) = x(j) - h;
    g.row(j) = ((problem.losses(xp) - problem.losses(xm)) / (2.0 * h)).transpose();
    xp(j) = x(j);
    xm(j) = x(j);
  }
  return g;
}

/// Largest over tasks of ||analytic_i - fd_i|| / max(1, ||analytic_i||, ||fd_i||).
inline double gradient_relative_error(const GradientMatrix& analytic, const GradientMatrix& fd) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.cols(); ++i) {
    const double scale = std::max({1.0, analytic.col(i).norm(), fd.col(i).norm()});
    worst = std::max(worst, (analytic.col(i) - fd.col(i)).norm() / scale);
  }
  return worst;
}

}  // namespace fairgrad
