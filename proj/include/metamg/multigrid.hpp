#pragma once

// Backslash-cycle multigrid: smoothing on the way down, exact solve on the
// coarsest level, prolongated corrections on the way up, no post-smoothing.
// PDE-MgNet and Meta-MgNet reuse this control flow with their own smoothers.

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "metamg/discretization.hpp"
#include "metamg/grid.hpp"
#include "metamg/smoothers.hpp"

namespace metamg {

/// Raised when the relative residual exceeds the divergence threshold.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MgConfig {
  std::size_t levels = 5;
  /// Smoothing steps per level; entries past levels - 1 are ignored.
  std::vector<std::size_t> nu{2, 1, 1, 1, 1};
  double tolerance = 1e-6;
  std::size_t max_iters = 10000;
  double divergence_threshold = 1e6;

  /// Throws ContractError unless J >= 2, nu_l >= 1 for l < J, tol > 0, max_iters >= 1.
  void validate() const;
  std::size_t smoothing_steps(std::size_t level) const { return nu.at(level); }
};

/// Sparse LU of the coarsest-level matrix, factorized once.
class CoarseSolver {
 public:
  explicit CoarseSolver(const SparseMatrix& matrix);
  ~CoarseSolver();
  CoarseSolver(CoarseSolver&&) noexcept;
  CoarseSolver& operator=(CoarseSolver&&) noexcept;

  std::size_t size() const { return n_; }
  void solve(std::span<const double> rhs, std::span<double> x) const;
  void solve_transpose(std::span<const double> rhs, std::span<double> x) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t n_ = 0;
};

/// Level operators, extents and transfer stencils for one fine operator.
class Hierarchy {
 public:
  Hierarchy(const StencilKernel& fine, const Extent& fine_extent, std::size_t levels);

  std::size_t levels() const { return ops_.size(); }
  int dim() const { return extents_.front().dim; }
  const LevelOperator& op(std::size_t level) const { return ops_.at(level); }
  const Extent& extent(std::size_t level) const { return extents_.at(level); }
  const StencilKernel& prolongation() const { return transfer_.prolongation; }
  const StencilKernel& restriction() const { return transfer_.restriction; }
  const Sampling& sampling() const { return sampling_; }
  const CoarseSolver& coarse_solver() const { return *coarse_; }
  std::shared_ptr<const CoarseSolver> shared_coarse_solver() const { return coarse_; }
  const StencilKernel& fine_stencil() const { return ops_.front().stencil; }

  GridField restrict_residual(const GridField& r) const;
  GridField prolongate(const GridField& coarse) const;
  GridField coarse_solve(const GridField& rhs) const;
  GridField residual(std::size_t level, const GridField& f, const GridField& u) const;

 private:
  std::vector<LevelOperator> ops_;
  std::vector<Extent> extents_;
  TransferPair transfer_;
  Sampling sampling_;
  std::shared_ptr<const CoarseSolver> coarse_;
};

Hierarchy make_hierarchy(const PdeSpec& pde, std::size_t levels);

/// One backslash cycle with zero initial guess; returns u ~ A^{-1} f.
GridField mg_cycle(const GridField& f, const Hierarchy& h, const Smoother& smoother,
                   const MgConfig& config);

struct SolveReport {
  std::size_t iterations = 0;
  bool converged = false;
  /// Relative residual ||f - A u_t|| / ||f|| for t = 0..iterations.
  std::vector<double> history;
  double wall_seconds = 0.0;
};

struct SolveResult {
  GridField u;
  SolveReport report;
};

/// Called after every outer iterate (t = 0 is the zero start).
using IterateObserver = std::function<void(std::size_t t, const GridField& u)>;

/// u_{t+1} = u_t + Mg(f - A u_t) from u_0 = 0 until the relative residual
/// drops below the tolerance or max_iters is reached. A zero right-hand side
/// is reported converged at t = 0. Throws DivergenceError when the relative
/// residual exceeds the divergence threshold.
SolveResult solve(const Hierarchy& h, const GridField& f, const Smoother& smoother,
                  const MgConfig& config, const IterateObserver& observer = {});

}  // namespace metamg
