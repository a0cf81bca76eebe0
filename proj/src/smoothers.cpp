#include "metamg/smoothers.hpp"

#include <cmath>
#include <sstream>

namespace metamg {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

void check_scalar(const LevelOperator& a, const GridField& r, const char* who) {
  require(a.stencil.in_channels() == 1 && a.stencil.out_channels() == 1,
          std::string(who) + ": single-channel operators only");
  require(r.channels() == 1, std::string(who) + ": residual must have one channel");
  require(a.stencil.dim() == r.dim(), std::string(who) + ": dimension mismatch");
}

struct Tap {
  long dz, dy, dx;
  double w;
};

bool lex_negative(long dz, long dy, long dx) {
  if (dz != 0) return dz < 0;
  if (dy != 0) return dy < 0;
  return dx < 0;
}

std::vector<Tap> collect_taps(const StencilKernel& k) {
  std::vector<Tap> taps;
  const auto& t = k.taps().n;
  const auto r = k.radius();
  for (std::size_t z = 0; z < t[0]; ++z)
    for (std::size_t y = 0; y < t[1]; ++y)
      for (std::size_t x = 0; x < t[2]; ++x) {
        const double w = k.at(0, 0, z, y, x);
        if (w == 0.0) continue;
        taps.push_back({static_cast<long>(z) - static_cast<long>(r[0]),
                        static_cast<long>(y) - static_cast<long>(r[1]),
                        static_cast<long>(x) - static_cast<long>(r[2]), w});
      }
  return taps;
}

// Solves the tridiagonal system (lower, diag, upper constant) in place.
void thomas(double lower, double diag, double upper, std::vector<double>& rhs,
            std::vector<double>& work) {
  const std::size_t n = rhs.size();
  work.assign(n, 0.0);
  double pivot = diag;
  if (pivot == 0.0) throw SingularError("line_gs_apply: zero pivot in line solve");
  rhs[0] /= pivot;
  for (std::size_t i = 1; i < n; ++i) {
    work[i] = upper / pivot;
    pivot = diag - lower * work[i];
    if (pivot == 0.0) throw SingularError("line_gs_apply: zero pivot in line solve");
    rhs[i] = (rhs[i] - lower * rhs[i - 1]) / pivot;
  }
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= work[i + 1] * rhs[i + 1];
}

}  // namespace

void SubspaceBasis::validate() const {
  require(!vectors.empty(), "SubspaceBasis: at least one column required");
  bool any_nonzero = false;
  for (const auto& v : vectors) {
    require(v.channels() == vectors.front().channels() &&
                v.extent() == vectors.front().extent(),
            "SubspaceBasis: columns must share one shape");
    require(v.all_finite(), "SubspaceBasis: non-finite column entries");
    for (double x : v.data())
      if (x != 0.0) {
        any_nonzero = true;
        break;
      }
  }
  require(any_nonzero, "SubspaceBasis: all columns are zero");
}

GridField jacobi_apply(const LevelOperator& a, const GridField& r, double omega) {
  require(a.stencil.in_channels() == r.channels() && a.stencil.out_channels() == r.channels(),
          "jacobi_apply: channel mismatch");
  require(a.stencil.dim() == r.dim(), "jacobi_apply: dimension mismatch");
  GridField e = r;
  const std::size_t n = r.nodes();
  for (std::size_t c = 0; c < r.channels(); ++c) {
    const double d = a.stencil.center(c, c);
    if (d == 0.0) throw ContractError("jacobi_apply: zero center tap");
    const double s = omega / d;
    auto block = e.data().subspan(c * n, n);
    for (double& v : block) v *= s;
  }
  return e;
}

GridField gs_apply(const LevelOperator& a, const GridField& r) {
  check_scalar(a, r, "gs_apply");
  const double diag = a.stencil.center();
  if (diag == 0.0) throw SingularError("gs_apply: zero diagonal");
  std::vector<Tap> lower;
  for (const Tap& t : collect_taps(a.stencil))
    if (lex_negative(t.dz, t.dy, t.dx)) lower.push_back(t);

  const auto& n = r.extent().n;
  GridField e(1, r.extent());
  auto ed = e.data();
  auto rd = r.data();
  const double inv = 1.0 / diag;
  std::size_t p = 0;
  for (std::size_t z = 0; z < n[0]; ++z)
    for (std::size_t y = 0; y < n[1]; ++y)
      for (std::size_t x = 0; x < n[2]; ++x, ++p) {
        double acc = rd[p];
        for (const Tap& t : lower) {
          const long iz = static_cast<long>(z) + t.dz, iy = static_cast<long>(y) + t.dy,
                     ix = static_cast<long>(x) + t.dx;
          if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(n[0]) ||
              iy >= static_cast<long>(n[1]) || ix >= static_cast<long>(n[2]))
            continue;
          acc -= t.w * ed[(static_cast<std::size_t>(iz) * n[1] + static_cast<std::size_t>(iy)) * n[2] +
                          static_cast<std::size_t>(ix)];
        }
        ed[p] = acc * inv;
      }
  return e;
}

GridField line_gs_apply(const LevelOperator& a, const GridField& r, LineAxis axis) {
  check_scalar(a, r, "line_gs_apply");
  require(r.dim() == 2, "line_gs_apply: 2D problems only");
  const std::size_t ny = r.extent().n[1], nx = r.extent().n[2];
  const bool along_x = axis == LineAxis::x;

  // Split taps into the in-line tridiagonal part and the lower block part.
  double lo = 0.0, di = 0.0, up = 0.0;
  std::vector<Tap> lower;
  for (const Tap& t : collect_taps(a.stencil)) {
    const long along = along_x ? t.dx : t.dy;
    const long across = along_x ? t.dy : t.dx;
    if (across == 0) {
      if (along == -1) lo = t.w;
      else if (along == 0) di = t.w;
      else if (along == 1) up = t.w;
      else throw ContractError("line_gs_apply: line coupling is not tridiagonal");
    } else if (across < 0) {
      lower.push_back(t);
    }
  }

  GridField e(1, r.extent());
  auto ed = e.data();
  auto rd = r.data();
  const std::size_t lines = along_x ? ny : nx;
  const std::size_t len = along_x ? nx : ny;
  std::vector<double> rhs(len), work;
  auto idx = [&](std::size_t line, std::size_t pos) {
    return along_x ? line * nx + pos : pos * nx + line;
  };
  for (std::size_t line = 0; line < lines; ++line) {
    for (std::size_t pos = 0; pos < len; ++pos) {
      const std::size_t y = along_x ? line : pos, x = along_x ? pos : line;
      double acc = rd[idx(line, pos)];
      for (const Tap& t : lower) {
        const long iy = static_cast<long>(y) + t.dy, ix = static_cast<long>(x) + t.dx;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(ny) || ix >= static_cast<long>(nx))
          continue;
        acc -= t.w * ed[static_cast<std::size_t>(iy) * nx + static_cast<std::size_t>(ix)];
      }
      rhs[pos] = acc;
    }
    thomas(lo, di, up, rhs, work);
    for (std::size_t pos = 0; pos < len; ++pos) ed[idx(line, pos)] = rhs[pos];
  }
  return e;
}

namespace detail {

SmallSpdSolver::SmallSpdSolver(std::vector<double> matrix, std::size_t n)
    : n_(n), matrix_(std::move(matrix)), scale_(n, 1.0) {
  require(matrix_.size() == n * n && n > 0, "SmallSpdSolver: bad matrix size");
  for (std::size_t i = 0; i < n; ++i) {
    const double d = matrix_[i * n + i];
    if (!std::isfinite(d)) throw NonFiniteError("subspace correction: non-finite Galerkin matrix");
    scale_[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
  }
  if (factor(0.0)) return;
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += matrix_[i * n + i] * scale_[i] * scale_[i];
  jittered_ = true;
  if (!factor(1e-12 * trace / static_cast<double>(n)))
    throw SingularError("subspace correction: Galerkin matrix G^T A G is not factorizable");
}

bool SmallSpdSolver::factor(double jitter) {
  const std::size_t n = n_;
  chol_.assign(n * n, 0.0);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    max_diag = std::max(max_diag, matrix_[i * n + i] * scale_[i] * scale_[i] + jitter);
  const double floor = 1e-14 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double d = matrix_[j * n + j] * scale_[j] * scale_[j] + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= chol_[j * n + k] * chol_[j * n + k];
    if (!(d > floor)) return false;
    const double ljj = std::sqrt(d);
    chol_[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = matrix_[i * n + j] * scale_[i] * scale_[j];
      for (std::size_t k = 0; k < j; ++k) s -= chol_[i * n + k] * chol_[j * n + k];
      chol_[i * n + j] = s / ljj;
    }
  }
  return true;
}

std::vector<double> SmallSpdSolver::solve(std::span<const double> b) const {
  const std::size_t n = n_;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i] * scale_[i];
    for (std::size_t k = 0; k < i; ++k) s -= chol_[i * n + k] * y[k];
    y[i] = s / chol_[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= chol_[k * n + i] * y[k];
    y[i] = s / chol_[i * n + i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] *= scale_[i];
  return y;
}

}  // namespace detail

GridField sc_apply(const LevelOperator& a, const SubspaceBasis& g, const GridField& r) {
  g.validate();
  require(g.vectors.front().extent() == r.extent() && g.vectors.front().channels() == r.channels(),
          "sc_apply: basis and residual shapes differ");
  const std::size_t L = g.columns();
  std::vector<double> b(L);
  bool zero_rhs = true;
  for (std::size_t i = 0; i < L; ++i) {
    b[i] = dot(g.vectors[i], r);
    if (b[i] != 0.0) zero_rhs = false;
  }
  if (zero_rhs) return GridField::zeros_like(r);

  std::vector<GridField> s;
  s.reserve(L);
  for (const auto& col : g.vectors) s.push_back(conv(a.stencil, col));
  std::vector<double> m(L * L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) m[i * L + j] = dot(g.vectors[i], s[j]);

  const detail::SmallSpdSolver solver(std::move(m), L);
  const std::vector<double> c = solver.solve(b);
  GridField e = GridField::zeros_like(r);
  for (std::size_t i = 0; i < L; ++i) e.axpy(c[i], g.vectors[i]);
  if (!e.all_finite()) throw NonFiniteError("sc_apply: non-finite correction");
  return e;
}

GridField krylov_sc_apply(const LevelOperator& a, const GridField& r, std::size_t k) {
  const double rn = norm2(r);
  if (rn == 0.0) return GridField::zeros_like(r);
  SubspaceBasis g;
  g.vectors.push_back((1.0 / rn) * r);
  for (std::size_t i = 0; i < k; ++i) {
    GridField v = conv(a.stencil, g.vectors.back());
    const double before = norm2(v);
    // two passes of modified Gram-Schmidt
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : g.vectors) v.axpy(-dot(q, v), q);
    const double after = norm2(v);
    if (!(after > 1e-10 * before)) break;  // invariant subspace reached
    g.vectors.push_back((1.0 / after) * v);
  }
  return sc_apply(a, g, r);
}

void validate(const SmootherSpec& spec) {
  if (const auto* j = std::get_if<JacobiSpec>(&spec))
    require(j->omega > 0.0 && j->omega <= 1.0, "Jacobi damping omega must lie in (0, 1]");
}

std::string describe(const SmootherSpec& spec) {
  std::ostringstream os;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, JacobiSpec>) os << "jacobi(omega=" << s.omega << ")";
        else if constexpr (std::is_same_v<T, GaussSeidelSpec>) os << "gs";
        else if constexpr (std::is_same_v<T, LineGsSpec>)
          os << "line-gs(" << (s.axis == LineAxis::x ? "x" : "y") << ")";
        else os << "krylov(k=" << s.depth << ")";
      },
      spec);
  return os.str();
}

ClassicalSmoother::ClassicalSmoother(SmootherSpec spec) : spec_(spec) { validate(spec_); }

GridField ClassicalSmoother::apply(const LevelOperator& a, const GridField& r,
                                   std::size_t /*step*/) const {
  return std::visit(
      [&](const auto& s) -> GridField {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, JacobiSpec>) return jacobi_apply(a, r, s.omega);
        else if constexpr (std::is_same_v<T, GaussSeidelSpec>) return gs_apply(a, r);
        else if constexpr (std::is_same_v<T, LineGsSpec>) return line_gs_apply(a, r, s.axis);
        else return krylov_sc_apply(a, r, s.depth);
      },
      spec_);
}

}  // namespace metamg
