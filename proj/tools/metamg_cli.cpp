// metamg: solve, train, bench, compare-smoothers, export-stencil.
// Exit codes: 0 success, 1 solver non-convergence, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>

#include "metamg/bench.hpp"
#include "metamg/config.hpp"
#include "metamg/discretization.hpp"
#include "metamg/mgnet.hpp"
#include "metamg/multigrid.hpp"
#include "metamg/training.hpp"

using namespace metamg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNoConvergence = 1;
constexpr int kExitUsage = 2;

struct ProblemOpts {
  std::string pde = "aniso2d";
  double eps = 1.0;
  double theta = 0.0;
  double eps1 = 1.0;
  double eps2 = 1.0;
  std::size_t n = 256;
};

struct CycleOpts {
  std::size_t levels = 5;
  std::string nu = "2,1,1,1,1";
  double tol = 1e-6;
  std::size_t max_iters = 10000;

  MgConfig config() const {
    MgConfig c;
    c.levels = levels;
    c.nu = parse_size_list(nu);
    c.tolerance = tol;
    c.max_iters = max_iters;
    c.validate();
    return c;
  }
};

struct SolverOpts {
  double omega = 2.0 / 3.0;
  std::size_t krylov_depth = 9;
  std::string mgnet_ckpt, meta_sc_ckpt, meta_direct_ckpt, checkpoint;

  SolverOptions options(const std::string& solver) const {
    SolverOptions o;
    o.omega = omega;
    o.krylov_depth = krylov_depth;
    if (!mgnet_ckpt.empty()) o.checkpoints["mgnet"] = mgnet_ckpt;
    if (!meta_sc_ckpt.empty()) o.checkpoints["meta_sc"] = meta_sc_ckpt;
    if (!meta_direct_ckpt.empty()) o.checkpoints["meta_direct"] = meta_direct_ckpt;
    if (!checkpoint.empty() && is_learned_solver(solver)) o.checkpoints[solver] = checkpoint;
    return o;
  }
};

void add_problem(CLI::App* app, ProblemOpts& p) {
  app->add_option("--pde", p.pde, "PDE family: aniso2d | aniso3d")->capture_default_str();
  app->add_option("--eps", p.eps, "2D anisotropy eps in (0, 1]")->capture_default_str();
  app->add_option("--theta", p.theta, "2D rotation angle in [0, pi]")->capture_default_str();
  app->add_option("--eps1", p.eps1, "3D coefficient eps1")->capture_default_str();
  app->add_option("--eps2", p.eps2, "3D coefficient eps2")->capture_default_str();
  app->add_option("--n", p.n, "cells per axis (power of two)")->capture_default_str();
}

void add_cycle(CLI::App* app, CycleOpts& c) {
  app->add_option("--levels", c.levels, "multigrid levels J")->capture_default_str();
  app->add_option("--nu", c.nu, "smoothing steps per level, comma separated")->capture_default_str();
  app->add_option("--tol", c.tol, "relative residual tolerance")->capture_default_str();
  app->add_option("--max-iters", c.max_iters, "outer iteration cap")->capture_default_str();
}

void add_solver(CLI::App* app, SolverOpts& s) {
  app->add_option("--omega", s.omega, "Jacobi damping")->capture_default_str();
  app->add_option("--krylov-depth", s.krylov_depth, "Krylov subspace depth k")->capture_default_str();
  app->add_option("--mgnet-ckpt", s.mgnet_ckpt, "PDE-MgNet checkpoint");
  app->add_option("--meta-sc-ckpt", s.meta_sc_ckpt, "Meta-MgNet (subspace correction) checkpoint");
  app->add_option("--meta-direct-ckpt", s.meta_direct_ckpt, "Meta-MgNet (direct kernel) checkpoint");
}

PdeSpec make_pde(const ProblemOpts& p) {
  PdeSpec s;
  s.family = parse_pde_family(p.pde);
  s.eps = p.eps;
  s.theta = p.theta;
  s.eps1 = p.eps1;
  s.eps2 = p.eps2;
  s.cells = p.n;
  s.validate();
  return s;
}

std::string num(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

// --- solve -----------------------------------------------------------------

struct SolveCmd {
  ProblemOpts prob;
  CycleOpts cycle;
  SolverOpts solver_opts;
  std::string smoother = "gs";
  std::uint64_t seed = 0;
  std::string history;

  int run() const {
    const PdeSpec pde = make_pde(prob);
    const MgConfig mg = cycle.config();
    auto smoother_ptr = make_smoother(smoother, solver_opts.options(smoother), pde.dim(), mg);
    const Hierarchy h = make_hierarchy(pde, mg.levels);
    BenchCase bc;
    bc.family = pde.family;
    bc.cells = pde.cells;
    bc.etas = {pde.family == PdeFamily::aniso3d ? std::pair{pde.eps1, pde.eps2}
                                                : std::pair{pde.eps, pde.theta}};
    bc.seed = seed;
    const GridField f = bench_rhs(bc, 0, 0);

    SolveReport rep;
    bool diverged = false;
    try {
      rep = solve(h, f, *smoother_ptr, mg).report;
    } catch (const DivergenceError& e) {
      diverged = true;
      std::cout << "diverged: " << e.what() << '\n';
    }
    std::cout << "pde: " << to_string(pde.family);
    if (pde.family == PdeFamily::aniso3d)
      std::cout << " eps1=" << num(pde.eps1) << " eps2=" << num(pde.eps2);
    else
      std::cout << " eps=" << num(pde.eps) << " theta=" << num(pde.theta);
    std::cout << " n=" << pde.cells << " levels=" << mg.levels << " nu=" << cycle.nu << '\n';
    std::cout << "solver: " << smoother << '\n';
    if (!diverged) {
      std::cout << "iterations: " << (rep.converged ? std::to_string(rep.iterations) : "-") << '\n';
      std::cout << "converged: " << (rep.converged ? "yes" : "no") << '\n';
      std::cout << "relative residual: " << num(rep.history.back(), "%.3e") << '\n';
      std::cout << "wall time: " << num(rep.wall_seconds, "%.3f") << " s\n";
      if (!history.empty()) {
        std::ostringstream os;
        os << "iteration,relative_residual\n";
        for (std::size_t t = 0; t < rep.history.size(); ++t)
          os << t << ',' << num(rep.history[t], "%.10e") << '\n';
        write_or_print(history, os.str());
      }
    }
    return rep.converged && !diverged ? kExitOk : kExitNoConvergence;
  }
};

// --- train -----------------------------------------------------------------

struct TrainCmd {
  std::string config_path;
  std::string model;
  std::optional<double> per_eta;
  std::optional<double> theta;
  std::optional<std::size_t> epochs, n, levels, batch, tasks, rhs_per_task, taps, hidden;
  std::optional<std::string> nu, inv_eps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string out = "model.ckpt";
  std::string loss_csv;
  bool quiet = false;

  int run() const {
    TrainConfig c;
    c.threads = thread_limit();
    if (!config_path.empty()) apply_train_config(ConfigFile::load(config_path), c);
    if (!model.empty()) c.model = parse_model_kind(model);
    if (epochs) c.epochs = *epochs;
    if (n) c.cells = *n;
    if (levels) c.levels = *levels;
    if (nu) c.nu = parse_size_list(*nu);
    if (batch) c.batch = *batch;
    if (tasks) c.tasks = *tasks;
    if (rhs_per_task) c.rhs_per_task = *rhs_per_task;
    if (taps) c.taps = *taps;
    if (hidden) c.hidden = *hidden;
    if (lr) c.lr = *lr;
    if (seed) c.seed = *seed;
    if (inv_eps) std::tie(c.eta.inv_eps_lo, c.eta.inv_eps_hi) = parse_range(*inv_eps);
    if (theta) c.eta.theta_lo = c.eta.theta_hi = *theta;
    if (per_eta) {
      if (!(*per_eta > 0.0 && *per_eta <= 1.0)) throw ContractError("--per-eta must lie in (0, 1]");
      const double th = c.eta.theta_lo;
      c.eta = EtaDistribution::fixed(*per_eta, th);
    }
    c.validate();

    const TrainResult res = train(c, {}, [this](std::size_t e, double l) {
      if (!quiet) std::cout << "epoch " << e << " mean_loss " << num(l, "%.6e") << std::endl;
    });
    save_checkpoint(res.params, out);
    if (!loss_csv.empty()) write_loss_csv(loss_csv, res.epoch_loss);
    if (res.epoch_loss.empty())
      std::cout << "no training steps; initial model written to " << out << '\n';
    else
      std::cout << "final epoch loss: " << num(res.epoch_loss.back(), "%.6e") << '\n'
                << "checkpoint: " << out << '\n';
    return kExitOk;
  }
};

// --- bench / compare-smoothers ---------------------------------------------

struct BenchCmd {
  std::string pde = "aniso2d";
  std::string eps = "1";
  std::string theta = "0";
  std::string eps1 = "1";
  std::string eps2 = "1";
  std::size_t n = 256;
  CycleOpts cycle;
  SolverOpts solver_opts;
  std::string solvers = "gs,jacobi";
  std::size_t rhs_count = 10;
  std::uint64_t seed = 0;
  std::string out;
  std::string history;

  int run(const std::vector<std::string>& forced_solvers = {}) const {
    BenchCase b;
    b.family = parse_pde_family(pde);
    const bool three = b.family == PdeFamily::aniso3d;
    for (double a : parse_double_list(three ? eps1 : eps))
      for (double c : parse_double_list(three ? eps2 : theta)) b.etas.emplace_back(a, c);
    b.cells = n;
    b.solvers = forced_solvers.empty() ? split_names(solvers) : forced_solvers;
    b.rhs_count = rhs_count;
    b.seed = seed;
    b.mg = cycle.config();
    b.options = solver_opts.options("");
    b.threads = thread_limit();
    const auto rows = run_bench(b, &std::cerr);
    std::ostringstream csv;
    write_bench_csv(csv, rows);
    write_or_print(out, csv.str());
    if (!history.empty()) {
      std::ostringstream hs;
      write_history_csv(hs, rows);
      write_or_print(history, hs.str());
    }
    return kExitOk;
  }
};

void add_bench_options(CLI::App* app, BenchCmd& b, bool with_solvers) {
  app->add_option("--pde", b.pde, "PDE family: aniso2d | aniso3d")->capture_default_str();
  app->add_option("--eps", b.eps, "comma-separated eps values (2D)")->capture_default_str();
  app->add_option("--theta", b.theta, "comma-separated theta values (2D)")->capture_default_str();
  app->add_option("--eps1", b.eps1, "comma-separated eps1 values (3D)")->capture_default_str();
  app->add_option("--eps2", b.eps2, "comma-separated eps2 values (3D)")->capture_default_str();
  app->add_option("--n", b.n, "cells per axis")->capture_default_str();
  add_cycle(app, b.cycle);
  add_solver(app, b.solver_opts);
  if (with_solvers)
    app->add_option("--solvers", b.solvers, "comma-separated solver names")->capture_default_str();
  app->add_option("--rhs-count", b.rhs_count, "right-hand sides per parameter point")->capture_default_str();
  app->add_option("--seed", b.seed, "master seed")->capture_default_str();
  app->add_option("--out", b.out, "CSV output path (default stdout)");
  app->add_option("--history", b.history, "optional residual-history CSV path");
}

// --- export-stencil --------------------------------------------------------

struct ExportCmd {
  ProblemOpts prob;
  std::size_t levels = 5;
  std::size_t level = 0;
  std::size_t step = 0;
  std::string checkpoint;
  std::string out;

  int run() const {
    std::string text;
    if (!checkpoint.empty()) {
      const ModelParams p = load_checkpoint(checkpoint);
      const NetArch arch = model_arch(p);
      if (arch.kind != ModelKind::pde_mgnet)
        throw ContractError("export-stencil --checkpoint expects a PDE-MgNet checkpoint");
      text = "# PDE-MgNet kernel level " + std::to_string(level) + " step " + std::to_string(step) +
             "\n" + format_stencil(conv_smoother_kernel(p, level, step));
    } else {
      const PdeSpec pde = make_pde(prob);
      const Hierarchy h = make_hierarchy(pde, levels);
      if (level >= h.levels()) throw ContractError("--level exceeds the number of levels");
      text = "# " + to_string(pde.family) + " operator level " + std::to_string(level) + "\n" +
             format_stencil(h.op(level).stencil);
    }
    write_or_print(out, text);
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned multigrid smoothers for parameterized elliptic PDEs", "metamg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "metamg 1.0");

  SolveCmd solve_cmd;
  auto* solve_app = app.add_subcommand("solve", "solve one problem with a random right-hand side");
  add_problem(solve_app, solve_cmd.prob);
  add_cycle(solve_app, solve_cmd.cycle);
  add_solver(solve_app, solve_cmd.solver_opts);
  solve_app->add_option("--smoother", solve_cmd.smoother,
                        "gs | jacobi | line_gs_x | line_gs_y | krylov | mgnet | meta_sc | meta_direct")
      ->capture_default_str();
  solve_app->add_option("--checkpoint", solve_cmd.solver_opts.checkpoint,
                        "checkpoint for a learned smoother");
  solve_app->add_option("--seed", solve_cmd.seed, "right-hand side seed")->capture_default_str();
  solve_app->add_option("--history", solve_cmd.history, "write the residual history CSV here");

  TrainCmd train_cmd;
  auto* train_app = app.add_subcommand("train", "train a learned smoother");
  train_app->add_option("--config", train_cmd.config_path, "key=value config file");
  train_app->add_option("--model", train_cmd.model, "mgnet | meta_sc | meta_direct");
  train_app->add_option("--per-eta", train_cmd.per_eta, "train on a single fixed eps");
  train_app->add_option("--theta", train_cmd.theta, "fixed theta of the training tasks");
  train_app->add_option("--inv-eps", train_cmd.inv_eps, "range lo,hi of lg(1/eps)");
  train_app->add_option("--epochs", train_cmd.epochs);
  train_app->add_option("--n", train_cmd.n, "cells per axis");
  train_app->add_option("--levels", train_cmd.levels);
  train_app->add_option("--nu", train_cmd.nu);
  train_app->add_option("--batch", train_cmd.batch);
  train_app->add_option("--tasks", train_cmd.tasks, "number of sampled PDE parameters");
  train_app->add_option("--rhs-per-task", train_cmd.rhs_per_task);
  train_app->add_option("--taps", train_cmd.taps, "taps per axis of learned kernels");
  train_app->add_option("--hidden", train_cmd.hidden, "hidden width of the dense layers");
  train_app->add_option("--lr", train_cmd.lr);
  train_app->add_option("--seed", train_cmd.seed);
  train_app->add_option("--out", train_cmd.out, "checkpoint path")->capture_default_str();
  train_app->add_option("--loss-csv", train_cmd.loss_csv, "per-epoch loss CSV path");
  train_app->add_flag("--quiet", train_cmd.quiet, "suppress per-epoch output");

  BenchCmd bench_cmd;
  auto* bench_app = app.add_subcommand("bench", "iteration/time table over a parameter grid");
  add_bench_options(bench_app, bench_cmd, true);

  BenchCmd compare_cmd;
  compare_cmd.eps = "1,1e-1,1e-2,1e-3,1e-4";
  auto* compare_app =
      app.add_subcommand("compare-smoothers", "direct kernel vs subspace-correction meta-smoother");
  add_bench_options(compare_app, compare_cmd, false);

  ExportCmd export_cmd;
  auto* export_app = app.add_subcommand("export-stencil", "print a level operator or learned kernel");
  add_problem(export_app, export_cmd.prob);
  export_app->add_option("--levels", export_cmd.levels)->capture_default_str();
  export_app->add_option("--level", export_cmd.level)->capture_default_str();
  export_app->add_option("--step", export_cmd.step)->capture_default_str();
  export_app->add_option("--checkpoint", export_cmd.checkpoint, "PDE-MgNet checkpoint");
  export_app->add_option("--out", export_cmd.out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*solve_app) return solve_cmd.run();
    if (*train_app) return train_cmd.run();
    if (*bench_app) return bench_cmd.run();
    if (*compare_app) {
      if (compare_cmd.solver_opts.meta_sc_ckpt.empty() || compare_cmd.solver_opts.meta_direct_ckpt.empty())
        throw ContractError("compare-smoothers needs --meta-sc-ckpt and --meta-direct-ckpt");
      return compare_cmd.run({"meta_direct", "meta_sc"});
    }
    if (*export_app) return export_cmd.run();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNoConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
