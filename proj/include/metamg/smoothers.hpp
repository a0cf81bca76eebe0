#pragma once

// Classical smoothers and the subspace-correction kernel shared with the
// learned smoothers. Every smoother maps a residual r to a correction e that
// approximates A^{-1} r.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "metamg/discretization.hpp"
#include "metamg/grid.hpp"

namespace metamg {

/// Columns g_1..g_L of the correction subspace, each shaped like the residual.
struct SubspaceBasis {
  std::vector<GridField> vectors;

  std::size_t columns() const { return vectors.size(); }
  /// Throws ContractError unless L >= 1, shapes agree, entries are finite and
  /// at least one column is nonzero.
  void validate() const;
};

/// omega * r / diag(A).
GridField jacobi_apply(const LevelOperator& a, const GridField& r, double omega);

/// tril(A)^{-1} r in lexicographic (z, y, x) order.
GridField gs_apply(const LevelOperator& a, const GridField& r);

enum class LineAxis { x, y };

/// Block forward substitution over grid lines parallel to `axis`; each line
/// block is solved exactly with the Thomas algorithm. 2D only.
GridField line_gs_apply(const LevelOperator& a, const GridField& r, LineAxis axis);

/// e = G (G^T A G)^{-1} G^T r.
GridField sc_apply(const LevelOperator& a, const SubspaceBasis& g, const GridField& r);

/// sc_apply over the Krylov space span{r, A r, ..., A^k r}. The basis is
/// orthonormalized before the solve, which leaves the range unchanged.
GridField krylov_sc_apply(const LevelOperator& a, const GridField& r, std::size_t k);

namespace detail {

/// Dense SPD solver for the small L x L Galerkin matrix of a subspace
/// correction. The matrix is symmetrically scaled by its diagonal, then
/// Cholesky factorized; on breakdown 1e-12 * trace / L is added to the scaled
/// diagonal and the factorization is retried once.
class SmallSpdSolver {
 public:
  explicit SmallSpdSolver(std::vector<double> matrix, std::size_t n);

  std::size_t size() const { return n_; }
  bool jittered() const { return jittered_; }
  /// Solves (M + jitter) x = b, where the jitter is the one actually applied.
  std::vector<double> solve(std::span<const double> b) const;

 private:
  bool factor(double jitter);

  std::size_t n_;
  std::vector<double> matrix_;
  std::vector<double> scale_;
  std::vector<double> chol_;
  bool jittered_ = false;
};

}  // namespace detail

struct JacobiSpec {
  double omega = 2.0 / 3.0;
};
struct GaussSeidelSpec {};
struct LineGsSpec {
  LineAxis axis = LineAxis::x;
};
struct KrylovSpec {
  std::size_t depth = 9;
};

/// Classical smoother choice. Learned smoothers live in mgnet.hpp.
using SmootherSpec = std::variant<JacobiSpec, GaussSeidelSpec, LineGsSpec, KrylovSpec>;

/// Throws ContractError if omega is outside (0, 1].
void validate(const SmootherSpec& spec);
std::string describe(const SmootherSpec& spec);

/// A smoother as seen by the multigrid cycle.
class Smoother {
 public:
  virtual ~Smoother() = default;
  /// Correction for residual `r` on the level of `a`, smoothing step `step`.
  virtual GridField apply(const LevelOperator& a, const GridField& r, std::size_t step) const = 0;
};

class ClassicalSmoother final : public Smoother {
 public:
  explicit ClassicalSmoother(SmootherSpec spec);
  GridField apply(const LevelOperator& a, const GridField& r, std::size_t step) const override;
  const SmootherSpec& spec() const { return spec_; }

 private:
  SmootherSpec spec_;
};

}  // namespace metamg
