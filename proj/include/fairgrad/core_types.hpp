#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace fairgrad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// m x K matrix of per-task gradients; column i is the gradient of task i.
using GradientMatrix = Matrix;
/// Per-task weights, every entry >= the configured floor.
using WeightVector = Vector;
/// Update direction in parameter space.
using Direction = Vector;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

inline void require_finite(const Eigen::Ref<const Matrix>& m, std::string_view what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

/// K x K Gram matrix G^T G. Construct through build_gram() or from_entries(),
/// both of which check symmetry and positive semidefiniteness.
class GramMatrix {
 public:
  static constexpr double kSymmetryTol = 1e-12;
  static constexpr double kPsdTol = 1e-10;

  GramMatrix() = default;

  static GramMatrix from_entries(Matrix entries) {
    require_finite(entries, "gram");
    if (entries.rows() != entries.cols() || entries.rows() == 0) {
      throw std::invalid_argument("gram: must be square and non-empty");
    }
    const double scale = std::max(1.0, entries.cwiseAbs().maxCoeff());
    if ((entries - entries.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
      throw std::invalid_argument("gram: not symmetric");
    }
    entries = 0.5 * (entries + entries.transpose());
    const double trace = entries.trace();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(entries, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -kPsdTol * std::max(trace, 1e-300)) {
      throw std::invalid_argument("gram: not positive semidefinite");
    }
    GramMatrix g;
    g.entries_ = std::move(entries);
    return g;
  }

  const Matrix& entries() const { return entries_; }
  Eigen::Index size() const { return entries_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

  /// True when every off-diagonal magnitude is at most tol * trace.
  bool is_diagonal(double tol = 1e-12) const {
    const double bound = tol * std::abs(entries_.trace());
    for (Eigen::Index i = 0; i < size(); ++i) {
      for (Eigen::Index j = 0; j < size(); ++j) {
        if (i != j && std::abs(entries_(i, j)) > bound) return false;
      }
    }
    return true;
  }

 private:
  Matrix entries_;
};

inline GramMatrix build_gram(const GradientMatrix& grads) {
  require_finite(grads, "build_gram");
  Matrix gram = grads.transpose() * grads;
  // G^T G is symmetric up to summation order; force exact symmetry.
  gram = 0.5 * (gram + gram.transpose()).eval();
  return GramMatrix::from_entries(std::move(gram));
}

enum class Method { fairgrad, ls, si, rlw, dwa, mgda, pcgrad };
enum class StepRule { fixed, theoretical, adaptive_moment };
enum class SolverMode { least_squares, sgd_inner, closed_form };
enum class PcgradReduce { mean, sum };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::fairgrad: return "fairgrad";
    case Method::ls: return "ls";
    case Method::si: return "si";
    case Method::rlw: return "rlw";
    case Method::dwa: return "dwa";
    case Method::mgda: return "mgda";
    case Method::pcgrad: return "pcgrad";
  }
  return "?";
}

inline std::string_view to_string(StepRule r) {
  switch (r) {
    case StepRule::fixed: return "fixed";
    case StepRule::theoretical: return "theoretical";
    case StepRule::adaptive_moment: return "adaptive_moment";
  }
  return "?";
}

inline std::string_view to_string(SolverMode m) {
  switch (m) {
    case SolverMode::least_squares: return "least_squares";
    case SolverMode::sgd_inner: return "sgd_inner";
    case SolverMode::closed_form: return "closed_form";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::fairgrad, Method::ls, Method::si, Method::rlw, Method::dwa, Method::mgda,
                 Method::pcgrad}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

inline std::optional<StepRule> parse_step_rule(std::string_view s) {
  for (auto r : {StepRule::fixed, StepRule::theoretical, StepRule::adaptive_moment}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

inline std::optional<SolverMode> parse_solver_mode(std::string_view s) {
  if (s == "least_squares") return SolverMode::least_squares;
  if (s == "sgd_inner") return SolverMode::sgd_inner;
  return std::nullopt;
}

/// Everything a single optimization run needs besides the problem itself.
struct ExperimentConfig {
  double alpha = 1.0;
  Method method = Method::fairgrad;
  StepRule step_rule = StepRule::fixed;
  double learning_rate = 1e-3;
  double smoothness_L = 1.0;  // theoretical rule only
  long max_steps = 200000;
  double stationarity_tol = 1e-3;
  std::uint64_t seed = 0;
  double w_min = 1e-8;
  SolverMode solver_mode = SolverMode::least_squares;
  std::optional<double> fair_loss_alpha;  // < 1, or exactly 1 for the log limit
  std::optional<double> loss_floor;

  // Weight solver.
  double solver_tol_per_task = 1e-8;
  int solver_max_iterations = 200;
  double sgd_inner_lr = 0.1;
  int sgd_epochs = 20;

  // Baselines.
  double dwa_temperature = 2.0;
  PcgradReduce pcgrad_reduce = PcgradReduce::mean;

  long check_every = 1;

  // Radius of the trust ball the direction is nominally confined to. Not used by
  // any computation: the weight equation fixes the alignment constant to 1.
  double ball_radius = 1.0;

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const {
    auto fail = [](const char* field, const char* why) {
      throw std::invalid_argument(std::string(field) + ": " + why);
    };
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha", "must be a finite nonnegative real");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be positive");
    if (!(smoothness_L > 0.0) || !std::isfinite(smoothness_L)) fail("smoothness_L", "must be positive");
    if (max_steps <= 0) fail("max_steps", "must be a positive integer");
    if (!(stationarity_tol > 0.0)) fail("stationarity_tol", "must be positive");
    if (!(w_min > 0.0)) fail("w_min", "must be positive");
    if (solver_mode == SolverMode::closed_form) fail("solver_mode", "closed_form is not selectable");
    if (fair_loss_alpha && !(*fair_loss_alpha <= 1.0)) fail("fair_loss_alpha", "must be < 1 (or 1 for the log limit)");
    if (loss_floor && !(*loss_floor > 0.0)) fail("loss_floor", "must be positive");
    if (!(dwa_temperature > 0.0)) fail("dwa_temperature", "must be positive");
    if (check_every <= 0) fail("check_every", "must be a positive integer");
    if (step_rule == StepRule::theoretical) {
      if (method != Method::fairgrad) fail("step_rule", "theoretical rule requires method fairgrad");
      if (alpha == 0.0) fail("step_rule", "theoretical rule requires alpha > 0");
    }
  }
};

/// One completed iteration of the outer loop.
struct TrajectoryRecord {
  long step = 0;
  Vector point;
  Vector losses;
  Vector weights;
  double direction_norm = 0.0;
  double stationarity = 0.0;
  double sigma_min = 0.0;
  double step_size = 0.0;
};

/// A problem exposes K losses and the m x K gradient matrix at any point.
template <typename P>
concept MultiObjective = requires(const P& p, const Vector& x) {
  { p.dimension() } -> std::convertible_to<Eigen::Index>;
  { p.task_count() } -> std::convertible_to<Eigen::Index>;
  { p.losses(x) } -> std::convertible_to<Vector>;
  { p.gradients(x) } -> std::convertible_to<GradientMatrix>;
};

/// Type-erased problem, used where the concrete type is chosen at runtime.
class MultiObjectiveProblem {
 public:
  using LossFn = std::function<Vector(const Vector&)>;
  using GradFn = std::function<GradientMatrix(const Vector&)>;

  MultiObjectiveProblem(Eigen::Index dimension, Eigen::Index task_count, LossFn losses, GradFn gradients)
      : dimension_(dimension), task_count_(task_count), losses_(std::move(losses)),
        gradients_(std::move(gradients)) {
    if (dimension <= 0 || task_count <= 0) {
      throw std::invalid_argument("MultiObjectiveProblem: dimension and task_count must be positive");
    }
  }

  template <MultiObjective P>
  static MultiObjectiveProblem wrap(P problem) {
    auto shared = std::make_shared<const P>(std::move(problem));
    return MultiObjectiveProblem(
        shared->dimension(), shared->task_count(),
        [shared](const Vector& x) { return Vector(shared->losses(x)); },
        [shared](const Vector& x) { return GradientMatrix(shared->gradients(x)); });
  }

  Eigen::Index dimension() const { return dimension_; }
  Eigen::Index task_count() const { return task_count_; }
  Vector losses(const Vector& x) const { return losses_(x); }
  GradientMatrix gradients(const Vector& x) const { return gradients_(x); }

 private:
  Eigen::Index dimension_;
  Eigen::Index task_count_;
  LossFn losses_;
  GradFn gradients_;
};

static_assert(MultiObjective<MultiObjectiveProblem>);

}  // namespace fairgrad
