#pragma once

// Benchmark driver: iteration counts and wall times of the registered
// solvers over a grid of PDE parameters, written as deterministic CSV.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "metamg/discretization.hpp"
#include "metamg/multigrid.hpp"
#include "metamg/smoothers.hpp"

namespace metamg {

/// Solver names accepted by the benchmark and the solve command.
const std::vector<std::string>& registered_solvers();
bool is_learned_solver(const std::string& name);

/// Worker cap from METAMG_THREADS (default 1; invalid values fall back to 1).
std::size_t thread_limit();

struct SolverOptions {
  double omega = 2.0 / 3.0;
  std::size_t krylov_depth = 9;
  /// Checkpoint path per learned solver name (mgnet, meta_sc, meta_direct).
  std::map<std::string, std::filesystem::path> checkpoints;
};

/// Builds the smoother for `name`. Learned solvers load their checkpoint and
/// check that its dimension and cycle shape match `config`.
std::unique_ptr<Smoother> make_smoother(const std::string& name, const SolverOptions& options,
                                        int dim, const MgConfig& config);

struct BenchCase {
  PdeFamily family = PdeFamily::aniso2d;
  /// (eps, theta) pairs in 2D, (eps1, eps2) in 3D.
  std::vector<std::pair<double, double>> etas;
  std::size_t cells = 256;
  std::vector<std::string> solvers;
  std::size_t rhs_count = 10;  // M_m-test
  std::uint64_t seed = 0;
  MgConfig mg;
  SolverOptions options;
  std::size_t threads = 1;

  void validate() const;
  PdeSpec pde(std::size_t eta_index) const;
};

struct BenchRow {
  PdeFamily family = PdeFamily::aniso2d;
  double eta1 = 0.0;
  double eta2 = 0.0;
  std::size_t cells = 0;
  std::string solver;
  double iters_mean = 0.0;
  double iters_std = 0.0;
  double time_mean = 0.0;
  double time_std = 0.0;
  bool converged = false;
  /// Relative residual history per right-hand side.
  std::vector<std::vector<double>> histories;
};

/// Right-hand side k of parameter point i: i.i.d. N(0, 1) entries from the
/// stream derive_seed(seed, 0x100 + i, k), shared by all solvers.
GridField bench_rhs(const BenchCase& bench, std::size_t eta_index, std::size_t k);

/// One row per (eta, solver) in input order. Learned solvers whose
/// checkpoint is missing are skipped with a warning on `warn`.
std::vector<BenchRow> run_bench(const BenchCase& bench, std::ostream* warn = nullptr);

inline constexpr const char* kBenchCsvHeader =
    "family,eps,theta,n,solver,iters_mean,iters_std,time_mean,time_std,converged";

/// Non-converged rows write "-" in both iteration columns.
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);
/// Long format: solver,eps,theta,rhs,iteration,relative_residual.
void write_history_csv(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace metamg
