#include "metamg/multigrid.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <chrono>
#include <cmath>

namespace metamg {

void MgConfig::validate() const {
  if (levels < 2) throw ContractError("MgConfig: need at least two levels");
  if (nu.size() + 1 < levels) throw ContractError("MgConfig: nu must list a count for every smoothed level");
  for (std::size_t l = 0; l + 1 < levels; ++l)
    if (nu[l] < 1) throw ContractError("MgConfig: smoothing counts must be >= 1");
  if (!(tolerance > 0.0)) throw ContractError("MgConfig: tolerance must be positive");
  if (max_iters < 1) throw ContractError("MgConfig: max_iters must be >= 1");
}

struct CoarseSolver::Impl {
  Eigen::SparseMatrix<double> matrix;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
};

CoarseSolver::CoarseSolver(const SparseMatrix& m) : impl_(std::make_unique<Impl>()), n_(m.rows) {
  if (m.rows != m.cols) throw ContractError("CoarseSolver: matrix must be square");
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(m.nonzeros());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(m.col_index[k]), m.values[k]);
  impl_->matrix.resize(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
  impl_->matrix.setFromTriplets(triplets.begin(), triplets.end());
  impl_->matrix.makeCompressed();
  impl_->lu.analyzePattern(impl_->matrix);
  impl_->lu.factorize(impl_->matrix);
  if (impl_->lu.info() != Eigen::Success)
    throw SingularError("coarsest-level factorization failed: " + impl_->lu.lastErrorMessage());
}

CoarseSolver::~CoarseSolver() = default;
CoarseSolver::CoarseSolver(CoarseSolver&&) noexcept = default;
CoarseSolver& CoarseSolver::operator=(CoarseSolver&&) noexcept = default;

void CoarseSolver::solve(std::span<const double> rhs, std::span<double> x) const {
  Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  Eigen::Map<Eigen::VectorXd> out(x.data(), static_cast<Eigen::Index>(x.size()));
  out = impl_->lu.solve(b);
}

void CoarseSolver::solve_transpose(std::span<const double> rhs, std::span<double> x) const {
  Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  Eigen::Map<Eigen::VectorXd> out(x.data(), static_cast<Eigen::Index>(x.size()));
  out = impl_->lu.transpose().solve(b);
}

Hierarchy::Hierarchy(const StencilKernel& fine, const Extent& fine_extent, std::size_t levels)
    : transfer_(transfer_stencils(fine_extent.dim)), sampling_(coarsening_sampling(fine_extent.dim)) {
  if (levels < 2) throw ContractError("Hierarchy: need at least two levels");
  if (fine.dim() != fine_extent.dim) throw ContractError("Hierarchy: stencil/extent dimension mismatch");
  ops_.push_back({fine, 0});
  extents_.push_back(fine_extent);
  for (std::size_t l = 1; l < levels; ++l) {
    extents_.push_back(coarse_extent(extents_.back()));
    ops_.push_back(galerkin_coarse(ops_.back(), transfer_.prolongation, transfer_.restriction));
  }
  coarse_ = std::make_shared<const CoarseSolver>(assemble_matrix(ops_.back(), extents_.back()));
}

Hierarchy make_hierarchy(const PdeSpec& pde, std::size_t levels) {
  return Hierarchy(pde_stencil(pde), pde.fine_extent(), levels);
}

GridField Hierarchy::restrict_residual(const GridField& r) const {
  return conv_strided(transfer_.restriction, r, sampling_);
}

GridField Hierarchy::prolongate(const GridField& coarse) const {
  return deconv(transfer_.prolongation, coarse, sampling_);
}

GridField Hierarchy::coarse_solve(const GridField& rhs) const {
  GridField u = GridField::zeros_like(rhs);
  coarse_->solve(rhs.data(), u.data());
  return u;
}

GridField Hierarchy::residual(std::size_t level, const GridField& f, const GridField& u) const {
  GridField r = f;
  r -= conv(ops_.at(level).stencil, u);
  return r;
}

GridField mg_cycle(const GridField& f, const Hierarchy& h, const Smoother& smoother,
                   const MgConfig& config) {
  const std::size_t J = config.levels;
  if (J != h.levels()) throw ContractError("mg_cycle: config levels != hierarchy levels");
  if (f.extent() != h.extent(0)) throw ContractError("mg_cycle: rhs extent != finest level extent");

  std::vector<GridField> u(J);
  GridField rhs = f;
  for (std::size_t l = 0; l + 1 < J; ++l) {
    const LevelOperator& a = h.op(l);
    u[l] = GridField::zeros_like(rhs);
    GridField r = rhs;
    for (std::size_t i = 0; i < config.smoothing_steps(l); ++i) {
      u[l] += smoother.apply(a, r, i);
      r = h.residual(l, rhs, u[l]);
    }
    rhs = h.restrict_residual(r);
  }
  u[J - 1] = h.coarse_solve(rhs);
  for (std::size_t l = J - 1; l-- > 0;) u[l] += h.prolongate(u[l + 1]);
  return std::move(u[0]);
}

SolveResult solve(const Hierarchy& h, const GridField& f, const Smoother& smoother,
                  const MgConfig& config, const IterateObserver& observer) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  SolveResult out{GridField::zeros_like(f), {}};
  auto& rep = out.report;
  const double fn = norm2(f);
  if (observer) observer(0, out.u);
  if (fn == 0.0) {
    rep.history.push_back(0.0);
    rep.converged = true;
    return out;
  }
  GridField r = f;
  rep.history.push_back(1.0);
  for (std::size_t t = 1; t <= config.max_iters; ++t) {
    out.u += mg_cycle(r, h, smoother, config);
    r = h.residual(0, f, out.u);
    const double rel = norm2(r) / fn;
    rep.history.push_back(rel);
    rep.iterations = t;
    if (observer) observer(t, out.u);
    if (!std::isfinite(rel) || rel > config.divergence_threshold)
      throw DivergenceError("solver diverged: relative residual " + std::to_string(rel) +
                            " at iteration " + std::to_string(t));
    if (rel < config.tolerance) {
      rep.converged = true;
      break;
    }
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace metamg
