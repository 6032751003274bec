// fairgrad command-line driver: run, sweep, checkgrad, metrics.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairgrad/fairgrad.hpp"
#include "fairgrad/io.hpp"

namespace fs = std::filesystem;
using namespace fairgrad;

namespace {

enum Exit { kOk = 0, kError = 1, kNotConverged = 2 };

struct ProblemSettings {
  std::string name;
  std::string start = "p1";
  std::vector<double> x0;
  long tasks = 2;
  long dim = 2;
  double condition = 10.0;
  std::uint64_t problem_seed = 0;
};

struct Built {
  MultiObjectiveProblem problem;
  Vector initial;
  std::optional<double> smoothness;  // certified L, quadratics only
};

Built build_problem(const ProblemSettings& s) {
  if (s.name == "toy") {
    Vector x0;
    if (!s.x0.empty()) {
      x0 = Eigen::Map<const Vector>(s.x0.data(), static_cast<Eigen::Index>(s.x0.size()));
    } else {
      const auto idx = ToyProblem::parse_start(s.start);
      if (!idx) throw std::invalid_argument("start: expected p1..p5, got '" + s.start + "'");
      x0 = ToyProblem::start(*idx);
    }
    if (x0.size() != 2) throw std::invalid_argument("x0: toy problem needs 2 coordinates");
    return {MultiObjectiveProblem::wrap(ToyProblem{}), x0, std::nullopt};
  }
  if (s.name == "quadratic") {
    if (s.tasks < 1) throw std::invalid_argument("tasks: must be >= 1");
    if (s.dim < 1) throw std::invalid_argument("dim: must be >= 1");
    CounterRng rng(s.problem_seed);
    QuadraticProblem q = QuadraticProblem::random(s.tasks, s.dim, rng, s.condition);
    Vector x0 = Vector::Constant(s.dim, 2.0);
    if (!s.x0.empty()) {
      if (static_cast<long>(s.x0.size()) != s.dim) throw std::invalid_argument("x0: length must equal dim");
      x0 = Eigen::Map<const Vector>(s.x0.data(), s.dim);
    }
    const double L = q.smoothness();
    return {MultiObjectiveProblem::wrap(std::move(q)), x0, L};
  }
  if (s.name.empty()) throw std::invalid_argument("problem: missing (toy or quadratic)");
  throw std::invalid_argument("problem: unknown '" + s.name + "' (toy or quadratic)");
}

// Consumes problem keys left over after the experiment fields.
void apply_problem_json(const nlohmann::json& rest, ProblemSettings& s) {
  using detail::json_field;
  for (const auto& [key, v] : rest.items()) {
    if (key == "problem") s.name = json_field<std::string>(v, key);
    else if (key == "start") s.start = json_field<std::string>(v, key);
    else if (key == "x0") s.x0 = json_field<std::vector<double>>(v, key);
    else if (key == "tasks") s.tasks = json_field<long>(v, key);
    else if (key == "dim") s.dim = json_field<long>(v, key);
    else if (key == "condition") s.condition = json_field<double>(v, key);
    else if (key == "problem_seed") s.problem_seed = json_field<std::uint64_t>(v, key);
    else throw std::invalid_argument(key + ": unknown config field");
  }
}

// Flags shared by run and sweep. Values land here first and are copied onto
// the config only when given, so flags override the file.
struct RunFlags {
  std::string config_path;
  std::string out = ".";
  ProblemSettings problem;
  ExperimentConfig cfg;
  std::string method, step_rule, solver_mode, pcgrad_reduce;
  std::optional<double> fair_loss_alpha, loss_floor;

  std::vector<CLI::Option*> given;
  CLI::Option *o_problem, *o_start, *o_x0, *o_tasks, *o_dim, *o_condition, *o_problem_seed;
  CLI::Option *o_method, *o_alpha, *o_lr, *o_step_rule, *o_L, *o_max_steps, *o_tol, *o_seed, *o_w_min;
  CLI::Option *o_solver_mode, *o_fair, *o_floor, *o_check_every, *o_pcgrad, *o_dwa_t, *o_solver_iters, *o_sgd_lr,
      *o_sgd_epochs;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Flat JSON config file; flags override it");
    app->add_option("--out", out, "Output directory")->capture_default_str();
    o_problem = app->add_option("--problem", problem.name, "toy | quadratic");
    o_start = app->add_option("--start", problem.start, "Toy preset start p1..p5");
    o_x0 = app->add_option("--x0", problem.x0, "Explicit initial point")->delimiter(',');
    o_tasks = app->add_option("--tasks", problem.tasks, "Quadratic: number of tasks K");
    o_dim = app->add_option("--dim", problem.dim, "Quadratic: dimension m");
    o_condition = app->add_option("--condition", problem.condition, "Quadratic: largest curvature eigenvalue");
    o_problem_seed = app->add_option("--problem-seed", problem.problem_seed, "Quadratic: generator seed");
    o_method = app->add_option("--method", method, "fairgrad | ls | si | rlw | dwa | mgda | pcgrad");
    o_alpha = app->add_option("--alpha", cfg.alpha, "Fairness parameter");
    o_lr = app->add_option("--lr", cfg.learning_rate, "Learning rate");
    o_step_rule = app->add_option("--step-rule", step_rule, "fixed | theoretical | adaptive_moment");
    o_L = app->add_option("--L", cfg.smoothness_L, "Smoothness constant for the theoretical rule");
    o_max_steps = app->add_option("--max-steps", cfg.max_steps, "Step budget");
    o_tol = app->add_option("--tol", cfg.stationarity_tol, "Stationarity tolerance");
    o_seed = app->add_option("--seed", cfg.seed, "Seed (falls back to FAIRGRAD_SEED)");
    o_w_min = app->add_option("--w-min", cfg.w_min, "Weight floor");
    o_solver_mode = app->add_option("--solver-mode", solver_mode, "least_squares | sgd_inner");
    o_solver_iters = app->add_option("--solver-max-iterations", cfg.solver_max_iterations, "Weight solver budget");
    o_sgd_lr = app->add_option("--sgd-inner-lr", cfg.sgd_inner_lr, "sgd_inner step size");
    o_sgd_epochs = app->add_option("--sgd-epochs", cfg.sgd_epochs, "sgd_inner epochs");
    o_fair = app->add_option("--fair-loss-alpha", fair_loss_alpha, "Apply the alpha-fair loss transform");
    o_floor = app->add_option("--loss-floor", loss_floor, "Clamp losses below this value before transforming");
    o_check_every = app->add_option("--check-every", cfg.check_every, "Stationarity check period");
    o_pcgrad = app->add_option("--pcgrad-reduce", pcgrad_reduce, "mean | sum");
    o_dwa_t = app->add_option("--dwa-temperature", cfg.dwa_temperature, "DWA temperature");
  }

  // Merges file, environment and flags into (problem settings, config).
  std::pair<ProblemSettings, ExperimentConfig> resolve() const {
    ExperimentConfig c;
    ProblemSettings p;
    bool seed_from_file = false;
    if (!config_path.empty()) {
      const nlohmann::json j = read_json_file(config_path);
      seed_from_file = j.contains("seed");
      apply_problem_json(apply_config_json(j, c), p);
    }
    if (!seed_from_file && !o_seed->count()) {
      if (const char* env = std::getenv("FAIRGRAD_SEED")) {
        try {
          std::size_t used = 0;
          c.seed = std::stoull(env, &used);
          if (used != std::string(env).size()) throw std::invalid_argument(env);
        } catch (const std::exception&) {
          throw std::invalid_argument("FAIRGRAD_SEED: not an unsigned integer");
        }
      }
    }
    auto set = [](CLI::Option* o, auto& dst, const auto& src) {
      if (o->count()) dst = src;
    };
    set(o_problem, p.name, problem.name);
    set(o_start, p.start, problem.start);
    set(o_x0, p.x0, problem.x0);
    set(o_tasks, p.tasks, problem.tasks);
    set(o_dim, p.dim, problem.dim);
    set(o_condition, p.condition, problem.condition);
    set(o_problem_seed, p.problem_seed, problem.problem_seed);
    set(o_alpha, c.alpha, cfg.alpha);
    set(o_lr, c.learning_rate, cfg.learning_rate);
    set(o_L, c.smoothness_L, cfg.smoothness_L);
    set(o_max_steps, c.max_steps, cfg.max_steps);
    set(o_tol, c.stationarity_tol, cfg.stationarity_tol);
    set(o_seed, c.seed, cfg.seed);
    set(o_w_min, c.w_min, cfg.w_min);
    set(o_solver_iters, c.solver_max_iterations, cfg.solver_max_iterations);
    set(o_sgd_lr, c.sgd_inner_lr, cfg.sgd_inner_lr);
    set(o_sgd_epochs, c.sgd_epochs, cfg.sgd_epochs);
    set(o_fair, c.fair_loss_alpha, fair_loss_alpha);
    set(o_floor, c.loss_floor, loss_floor);
    set(o_check_every, c.check_every, cfg.check_every);
    set(o_dwa_t, c.dwa_temperature, cfg.dwa_temperature);
    if (o_method->count()) {
      const auto m = parse_method(method);
      if (!m) throw std::invalid_argument("method: unknown value '" + method + "'");
      c.method = *m;
    }
    if (o_step_rule->count()) {
      const auto r = parse_step_rule(step_rule);
      if (!r) throw std::invalid_argument("step_rule: unknown value '" + step_rule + "'");
      c.step_rule = *r;
    }
    if (o_solver_mode->count()) {
      const auto s = parse_solver_mode(solver_mode);
      if (!s) throw std::invalid_argument("solver_mode: unknown value '" + solver_mode + "'");
      c.solver_mode = *s;
    }
    if (o_pcgrad->count()) {
      const auto r = detail::parse_pcgrad_reduce(pcgrad_reduce);
      if (!r) throw std::invalid_argument("pcgrad_reduce: unknown value '" + pcgrad_reduce + "'");
      c.pcgrad_reduce = *r;
    }
    return {p, c};
  }

  // The certified constant wins unless --L (or smoothness_L in the file) was set.
  bool smoothness_given() const {
    if (o_L->count()) return true;
    if (config_path.empty()) return false;
    return read_json_file(config_path).contains("smoothness_L");
  }
};

int exit_code(Termination t) {
  switch (t) {
    case Termination::stationary: return kOk;
    case Termination::budget_exhausted: return kNotConverged;
    case Termination::solver_failure: return kError;
  }
  return kError;
}

// Runs one configuration and writes trajectory.csv and summary.json into dir.
int run_one(const Built& built, const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  fs::create_directories(dir);
  const RunResult r = run(built.problem, cfg, built.initial);
  {
    std::ofstream csv(dir / "trajectory.csv");
    if (!csv) throw std::runtime_error("cannot write " + (dir / "trajectory.csv").string());
    write_trajectory_csv(csv, r.trajectory, built.problem.dimension(), built.problem.task_count());
  }
  {
    std::ofstream js(dir / "summary.json");
    js << summarize(r, cfg).dump(2) << '\n';
  }
  const auto& last = r.trajectory.back();
  log << to_string(cfg.method) << " alpha=" << cfg.alpha << ": " << to_string(r.termination) << " after "
      << r.trajectory.size() << " steps, stationarity " << last.stationarity << ", losses ["
      << last.losses.transpose() << "]";
  if (r.unconverged_solves) log << ", " << r.unconverged_solves << " unconverged weight solves";
  if (!r.failure.empty()) log << " (" << r.failure << ")";
  log << '\n';
  return exit_code(r.termination);
}

Built prepare(const RunFlags& flags, ProblemSettings& p, ExperimentConfig& c) {
  Built built = build_problem(p);
  if (built.smoothness && !flags.smoothness_given()) c.smoothness_L = *built.smoothness;
  c.validate();
  return built;
}

int cmd_run(const RunFlags& flags) {
  auto [p, c] = flags.resolve();
  const Built built = prepare(flags, p, c);
  return run_one(built, c, flags.out, std::cout);
}

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t"));
    cell.erase(cell.find_last_not_of(" \t") + 1);
    if (cell.empty()) continue;
    std::size_t used = 0;
    double a = 0.0;
    try {
      a = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size()) throw std::invalid_argument("alphas: bad value '" + cell + "'");
    out.push_back(a);
  }
  if (out.empty()) throw std::invalid_argument("alphas: empty list");
  return out;
}

std::string alpha_dir(double a) {
  std::ostringstream s;
  s << "alpha_" << a;
  return s.str();
}

// Static sweep: FairGrad weights at the initial point only, no updates.
int sweep_static(const Built& built, const ExperimentConfig& base, const std::vector<double>& alphas,
                 const fs::path& out) {
  const Vector losses = built.problem.losses(built.initial);
  const GradientMatrix grads = built.problem.gradients(built.initial);
  nlohmann::json rows = nlohmann::json::array();
  int worst = kOk;
  for (double a : alphas) {
    ExperimentConfig cfg = base;
    cfg.alpha = a;
    cfg.validate();
    const Aggregate agg = aggregate_fairgrad(grads, a, WeightSolverOptions::from(cfg), cfg.solver_mode,
                                             cfg.sgd_inner_lr, cfg.sgd_epochs);
    const Vector gain = grads.transpose() * agg.direction;
    const double dnorm = agg.direction.norm();
    nlohmann::json row;
    row["alpha"] = a;
    row["weights"] = to_json(agg.weights);
    row["gains"] = to_json(gain);
    row["min_gain"] = gain.minCoeff();
    row["min_unit_gain"] = dnorm > 0.0 ? gain.minCoeff() / dnorm : 0.0;
    row["direction_norm"] = dnorm;
    row["converged"] = agg.solver.converged;
    rows.push_back(row);
    if (!agg.solver.converged) worst = std::max(worst, int{kNotConverged});
    std::cout << "alpha=" << a << ": min gain " << gain.minCoeff() << ", min unit gain "
              << (dnorm > 0.0 ? gain.minCoeff() / dnorm : 0.0) << '\n';
  }
  nlohmann::json summary;
  summary["mode"] = "static";
  summary["point"] = to_json(built.initial);
  summary["losses"] = to_json(losses);
  summary["runs"] = rows;
  fs::create_directories(out);
  std::ofstream(out / "sweep_summary.json") << summary.dump(2) << '\n';
  return worst;
}

int cmd_sweep(const RunFlags& flags, const std::string& alpha_text, bool is_static) {
  const std::vector<double> alphas = parse_alpha_list(alpha_text);
  auto [p, base] = flags.resolve();
  const Built built = prepare(flags, p, base);
  const fs::path out = flags.out;
  if (is_static) return sweep_static(built, base, alphas, out);

  std::vector<ExperimentConfig> cfgs;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    ExperimentConfig c = base;
    c.alpha = alphas[i];
    c.seed = base.seed + i;  // first child matches a plain run
    c.validate();
    cfgs.push_back(c);
  }
  std::vector<std::ostringstream> logs(alphas.size());
  std::vector<std::future<int>> children;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    children.push_back(std::async(std::launch::async, [&, i] {
      return run_one(built, cfgs[i], out / alpha_dir(alphas[i]), logs[i]);
    }));
  }
  int worst = kOk;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    int code = kError;
    try {
      code = children[i].get();
    } catch (const std::exception& e) {
      logs[i] << "alpha=" << alphas[i] << ": error: " << e.what() << '\n';
    }
    std::cout << logs[i].str();
    // 1 (error) outranks 2 (not converged) outranks 0
    if (code == kError || (code == kNotConverged && worst == kOk)) worst = code;
    nlohmann::json row;
    row["alpha"] = alphas[i];
    row["seed"] = cfgs[i].seed;
    row["exit_code"] = code;
    row["directory"] = alpha_dir(alphas[i]);
    if (code != kError || fs::exists(out / alpha_dir(alphas[i]) / "summary.json")) {
      const nlohmann::json s = read_json_file((out / alpha_dir(alphas[i]) / "summary.json").string());
      for (const char* key : {"termination", "steps", "final_losses", "final_stationarity", "mean_min_gain",
                              "mean_min_unit_gain"}) {
        row[key] = s[key];
      }
    }
    rows.push_back(row);
  }
  nlohmann::json summary;
  summary["mode"] = "trajectory";
  summary["runs"] = rows;
  std::ofstream(out / "sweep_summary.json") << summary.dump(2) << '\n';
  return worst;
}

// Random points away from the toy problem's kinks.
bool toy_smooth_at(const Vector& x, double margin) {
  if (std::abs(x(1)) < margin) return false;
  const auto [z1, z2] = ToyProblem::log_arguments(x);
  for (double z : {z1, z2}) {
    if (std::abs(z) < margin || std::abs(std::abs(z) - ToyProblem::kClamp) < margin) return false;
  }
  return true;
}

int cmd_checkgrad(const std::string& problem, int samples, std::uint64_t seed, double corrupt) {
  if (samples < 1) throw std::invalid_argument("samples: must be >= 1");
  CounterRng rng(seed);
  double worst = 0.0;
  auto check = [&](const auto& prob, const Vector& x) {
    GradientMatrix g = prob.gradients(x);
    g(0, 0) += corrupt * std::max(1.0, g.col(0).norm());
    worst = std::max(worst, gradient_relative_error(g, finite_difference_gradients(prob, x)));
  };
  if (problem == "toy") {
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    const ToyProblem toy;
    for (int s = 0; s < samples;) {
      Vector x(2);
      x << u(rng), u(rng);
      if (!toy_smooth_at(x, 1e-3)) continue;
      check(toy, x);
      ++s;
    }
  } else if (problem == "quadratic") {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int s = 0; s < samples; ++s) {
      const QuadraticProblem q = QuadraticProblem::random(1 + s % 4, 1 + s % 6, rng);
      Vector x(q.dimension());
      for (auto& v : x) v = 3.0 * normal(rng);
      check(q, x);
    }
  } else {
    throw std::invalid_argument("problem: unknown '" + problem + "' (toy or quadratic)");
  }
  const bool pass = worst <= 1e-5;
  std::cout << problem << ": max relative error " << std::scientific << std::setprecision(3) << worst << " over "
            << samples << " points: " << (pass ? "pass" : "FAIL") << '\n';
  return pass ? kOk : kError;
}

int cmd_metrics(const std::string& path, const std::string& baseline) {
  const MetricTable table = read_metric_table(path, baseline);
  const std::vector<double> ranks =
      table.method_count() >= 2 ? mean_rank(table) : std::vector<double>(table.method_count(), 1.0);
  std::size_t width = 6;
  for (const auto& m : table.methods) width = std::max(width, m.size());
  std::cout << std::left << std::setw(static_cast<int>(width)) << "method" << std::right << std::setw(10) << "MR"
            << std::setw(12) << "delta_m%" << '\n';
  std::cout << std::fixed;
  for (std::size_t i = 0; i < table.method_count(); ++i) {
    const double dm = delta_m_percent(table.values[i], table.baseline, table.directions);
    std::cout << std::left << std::setw(static_cast<int>(width)) << table.methods[i] << std::right
              << std::setprecision(2) << std::setw(10) << ranks[i] << std::setw(12) << dm << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FairGrad: alpha-fair gradient aggregation for multi-task optimization"};
  app.require_subcommand(1);

  RunFlags run_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one experiment");
  run_flags.attach(run_cmd);

  RunFlags sweep_flags;
  std::string alphas;
  bool is_static = false;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per alpha, concurrently");
  sweep_flags.attach(sweep_cmd);
  sweep_cmd->add_option("--alphas", alphas, "Comma-separated alpha values")->required();
  sweep_cmd->add_flag("--static", is_static, "Solve at the initial point only, without updates");

  std::string cg_problem;
  int cg_samples = 1000;
  std::uint64_t cg_seed = 0;
  double cg_corrupt = 0.0;
  CLI::App* cg_cmd = app.add_subcommand("checkgrad", "Compare analytic gradients with central differences");
  cg_cmd->add_option("--problem", cg_problem, "toy | quadratic")->required();
  cg_cmd->add_option("--samples", cg_samples, "Number of sample points")->capture_default_str();
  cg_cmd->add_option("--seed", cg_seed, "Sampling seed")->capture_default_str();
  cg_cmd->add_option("--corrupt", cg_corrupt)->group("");  // negative-control hook

  std::string table_path, baseline = "STL";
  CLI::App* metrics_cmd = app.add_subcommand("metrics", "Delta m% and mean rank from a result table");
  metrics_cmd->add_option("table", table_path, "CSV table")->required();
  metrics_cmd->add_option("--baseline", baseline, "Label of the single-task baseline row")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kError;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags, alphas, is_static);
    if (cg_cmd->parsed()) return cmd_checkgrad(cg_problem, cg_samples, cg_seed, cg_corrupt);
    if (metrics_cmd->parsed()) return cmd_metrics(table_path, baseline);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}
