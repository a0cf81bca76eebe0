#pragma once

// Stencils for the target PDE families, grid-transfer stencils, Galerkin
// coarse operators and an explicit CSR view for reference solves.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metamg/grid.hpp"

namespace metamg {

enum class PdeFamily { aniso2d, aniso3d, fdm_custom };

PdeFamily parse_pde_family(std::string_view name);
std::string to_string(PdeFamily family);

/// A parameterized elliptic problem on the unit square/cube with N cells per
/// axis. For aniso2d, eta = (eps, theta); for aniso3d eta = (1, eps1, eps2).
struct PdeSpec {
  PdeFamily family = PdeFamily::aniso2d;
  double eps = 1.0;
  double theta = 0.0;
  double eps1 = 1.0;
  double eps2 = 1.0;
  std::size_t cells = 64;
  /// Fine-level stencil for fdm_custom problems.
  std::optional<StencilKernel> custom_stencil;

  int dim() const { return family == PdeFamily::aniso3d ? 3 : 2; }
  double h() const { return 1.0 / static_cast<double>(cells); }
  /// Interior node extent of the finest grid, (N - 1) per axis.
  Extent fine_extent() const { return Extent::cube(dim(), cells - 1); }

  /// Throws ContractError on eps <= 0, eps > 1 (2D), theta outside [0, pi],
  /// or N not a power of two >= 4.
  void validate() const;
};

/// Discretized operator on one level of the hierarchy (level 0 = finest).
struct LevelOperator {
  StencilKernel stencil;
  std::size_t level = 0;
};

enum class FdmOperator { dx_b, dx_f, dy_b, dy_f, dxx, dxy, dyy, laplace };

FdmOperator parse_fdm_operator(std::string_view tag);

/// Finite-difference kernel for `op` on spacing h (scaled by 1/h or 1/h^2).
StencilKernel fdm_stencil(FdmOperator op, double h);

using Coefficient2 = std::array<std::array<double, 2>, 2>;

/// C(eps, theta) = R(theta) diag(1, eps) R(theta)^T, indexed (x, y).
Coefficient2 anisotropic_coefficient(double eps, double theta);

/// Bilinear (Q1) stiffness stencil of -div(C grad u) on a square mesh of
/// spacing h. The 2D stencil does not depend on h.
StencilKernel q1_stencil_2d(const Coefficient2& c, double h = 1.0);

/// Trilinear (Q1) stiffness stencil for C = diag(eps[0], eps[1], eps[2]) along
/// (x, y, z); scales linearly with h.
StencilKernel q1_stencil_3d(const std::array<double, 3>& eps, double h = 1.0);

/// Fine-level stencil of `pde`.
StencilKernel pde_stencil(const PdeSpec& pde);

struct TransferPair {
  StencilKernel prolongation;
  StencilKernel restriction;
};

/// Tensor-product linear-interpolation stencil [1/2, 1, 1/2]^{(x)d} for both P and R.
TransferPair transfer_stencils(int dim);

/// Vertex-centered stride-2 sampling: coarse node p sits on fine node 2p + 1.
Sampling coarsening_sampling(int dim);
/// Extent of the next-coarser vertex-centered grid, (n - 1) / 2 per axis.
Extent coarse_extent(const Extent& fine);

/// Coarse operator R * A * P computed by composing the three stencils on a
/// patch of coarse nodes. `patch` (per active axis, coarse nodes) defaults to
/// the smallest size that captures every coarse tap away from the boundary.
LevelOperator galerkin_coarse(const LevelOperator& a, const StencilKernel& p,
                              const StencilKernel& r, std::optional<std::size_t> patch = {});

/// Compressed-row sparse matrix with sorted column indices per row.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_index;
  std::vector<double> values;

  std::size_t nonzeros() const { return values.size(); }
  void multiply(std::span<const double> x, std::span<double> y) const;
  std::vector<double> multiply(std::span<const double> x) const;
  /// Row-major dense copy, for small reference computations.
  std::vector<double> to_dense() const;
};

/// Matrix M with M * flatten(v) == flatten(conv(stencil, v)) on `extent`.
SparseMatrix assemble_matrix(const StencilKernel& stencil, const Extent& extent);
inline SparseMatrix assemble_matrix(const LevelOperator& a, const Extent& extent) {
  return assemble_matrix(a.stencil, extent);
}

/// Plain-text dump of a stencil: one block per (l, k, z), rows of 6
/// significant digits.
std::string format_stencil(const StencilKernel& stencil);

}  // namespace metamg
