#include "metamg/discretization.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace metamg {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Q1 stiffness stencil of -div(C grad u) for a d x d coefficient matrix C
// given in physical axis order (x, y[, z]). Each of the 2^d elements around
// the origin node is integrated with the tensor 2-point Gauss rule, which is
// exact for products of Q1 gradients.
StencilKernel q1_stencil(const std::vector<double>& coef, int dim, double h) {
  const std::size_t d = static_cast<std::size_t>(dim);
  StencilKernel k(1, 1, Extent::cube(dim, 3));
  const double g = 0.5 / std::sqrt(3.0);
  const std::array<double, 2> gauss{0.5 - g, 0.5 + g};
  const double scale = std::pow(h, dim - 2);
  const std::size_t corners = std::size_t{1} << d;
  const std::size_t points = corners;

  // physical axis p lives on storage axis 2 - p
  auto storage = [](std::size_t p) { return 2 - p; };

  for (std::size_t elem = 0; elem < corners; ++elem) {
    // element lower corner e_p in {-1, 0}; origin node local index a0_p = -e_p
    std::array<int, 3> e{0, 0, 0}, a0{0, 0, 0};
    for (std::size_t p = 0; p < d; ++p) {
      e[p] = ((elem >> p) & 1U) ? 0 : -1;
      a0[p] = -e[p];
    }
    for (std::size_t b = 0; b < corners; ++b) {
      std::array<int, 3> bl{0, 0, 0};
      for (std::size_t p = 0; p < d; ++p) bl[p] = static_cast<int>((b >> p) & 1U);

      double integral = 0.0;
      for (std::size_t q = 0; q < points; ++q) {
        std::array<double, 3> xi{0.0, 0.0, 0.0};
        for (std::size_t p = 0; p < d; ++p) xi[p] = gauss[(q >> p) & 1U];
        // reference gradients of the two local shape functions
        std::array<double, 3> grad_b{}, grad_0{};
        for (std::size_t p = 0; p < d; ++p) {
          double gb = 1.0, g0 = 1.0;
          for (std::size_t s = 0; s < d; ++s) {
            const double vb = bl[s] ? xi[s] : 1.0 - xi[s];
            const double v0 = a0[s] ? xi[s] : 1.0 - xi[s];
            const double db = bl[s] ? 1.0 : -1.0;
            const double d0 = a0[s] ? 1.0 : -1.0;
            gb *= (s == p) ? db : vb;
            g0 *= (s == p) ? d0 : v0;
          }
          grad_b[p] = gb;
          grad_0[p] = g0;
        }
        double form = 0.0;
        for (std::size_t p = 0; p < d; ++p)
          for (std::size_t s = 0; s < d; ++s) form += grad_0[p] * coef[p * d + s] * grad_b[s];
        integral += form;
      }
      integral /= static_cast<double>(points);

      std::array<std::size_t, 3> tap{0, 0, 0};
      for (std::size_t p = 0; p < d; ++p)
        tap[storage(p)] = static_cast<std::size_t>(e[p] + bl[p] + 1);
      k.at(0, 0, tap[0], tap[1], tap[2]) += scale * integral;
    }
  }
  return k;
}

}  // namespace

PdeFamily parse_pde_family(std::string_view name) {
  if (name == "aniso2d") return PdeFamily::aniso2d;
  if (name == "aniso3d") return PdeFamily::aniso3d;
  if (name == "fdm_custom") return PdeFamily::fdm_custom;
  throw ContractError("unknown PDE family '" + std::string(name) + "'");
}

std::string to_string(PdeFamily family) {
  switch (family) {
    case PdeFamily::aniso2d: return "aniso2d";
    case PdeFamily::aniso3d: return "aniso3d";
    case PdeFamily::fdm_custom: return "fdm_custom";
  }
  return "?";
}

void PdeSpec::validate() const {
  require(cells >= 4 && is_power_of_two(cells), "mesh cells N must be a power of two >= 4");
  switch (family) {
    case PdeFamily::aniso2d:
      require(std::isfinite(eps) && eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1]");
      require(std::isfinite(theta) && theta >= 0.0 && theta <= std::numbers::pi,
              "theta must lie in [0, pi]");
      break;
    case PdeFamily::aniso3d:
      require(std::isfinite(eps1) && eps1 > 0.0, "eps1 must be positive");
      require(std::isfinite(eps2) && eps2 > 0.0, "eps2 must be positive");
      break;
    case PdeFamily::fdm_custom:
      require(custom_stencil.has_value(), "fdm_custom requires a stencil");
      break;
  }
}

FdmOperator parse_fdm_operator(std::string_view tag) {
  if (tag == "dx_b") return FdmOperator::dx_b;
  if (tag == "dx_f") return FdmOperator::dx_f;
  if (tag == "dy_b") return FdmOperator::dy_b;
  if (tag == "dy_f") return FdmOperator::dy_f;
  if (tag == "dxx") return FdmOperator::dxx;
  if (tag == "dxy") return FdmOperator::dxy;
  if (tag == "dyy") return FdmOperator::dyy;
  if (tag == "laplace") return FdmOperator::laplace;
  throw ContractError("unknown finite-difference operator '" + std::string(tag) + "'");
}

StencilKernel fdm_stencil(FdmOperator op, double h) {
  require(h > 0.0 && std::isfinite(h), "fdm_stencil: h must be positive");
  const double ih = 1.0 / h, ih2 = 1.0 / (h * h);
  auto row = [](std::vector<double> v, double s) {
    for (double& x : v) x *= s;
    return StencilKernel(1, 1, Extent::grid2(1, 3), std::move(v));
  };
  auto col = [](std::vector<double> v, double s) {
    for (double& x : v) x *= s;
    return StencilKernel(1, 1, Extent::grid2(3, 1), std::move(v));
  };
  switch (op) {
    case FdmOperator::dx_b: return row({-1, 1, 0}, ih);
    case FdmOperator::dx_f: return row({0, -1, 1}, ih);
    case FdmOperator::dy_b: return col({-1, 1, 0}, ih);
    case FdmOperator::dy_f: return col({0, -1, 1}, ih);
    case FdmOperator::dxx: return row({1, -2, 1}, ih2);
    case FdmOperator::dyy: return col({1, -2, 1}, ih2);
    case FdmOperator::dxy: {
      const double s = 1.0 / (4.0 * h * h);
      return StencilKernel(1, 1, Extent::grid2(3, 3), {s, 0, -s, 0, 0, 0, -s, 0, s});
    }
    case FdmOperator::laplace:
      return StencilKernel(1, 1, Extent::grid2(3, 3),
                           {0, ih2, 0, ih2, -4 * ih2, ih2, 0, ih2, 0});
  }
  throw ContractError("fdm_stencil: unknown operator");
}

Coefficient2 anisotropic_coefficient(double eps, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  // R diag(1, eps) R^T with R = [[c, -s], [s, c]]
  Coefficient2 out{};
  out[0][0] = c * c + eps * s * s;
  out[0][1] = c * s - eps * s * c;
  out[1][0] = out[0][1];
  out[1][1] = s * s + eps * c * c;
  return out;
}

StencilKernel q1_stencil_2d(const Coefficient2& c, double h) {
  require(h > 0.0, "q1_stencil_2d: h must be positive");
  const double sym = std::abs(c[0][1] - c[1][0]);
  require(sym <= 1e-12 * (std::abs(c[0][0]) + std::abs(c[1][1])),
          "q1_stencil_2d: coefficient must be symmetric");
  const double det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
  require(c[0][0] > 0.0 && det > 0.0, "q1_stencil_2d: coefficient must be positive definite");
  return q1_stencil({c[0][0], c[0][1], c[1][0], c[1][1]}, 2, h);
}

StencilKernel q1_stencil_3d(const std::array<double, 3>& eps, double h) {
  require(h > 0.0, "q1_stencil_3d: h must be positive");
  for (double e : eps) require(e > 0.0 && std::isfinite(e), "q1_stencil_3d: eps must be positive");
  return q1_stencil({eps[0], 0, 0, 0, eps[1], 0, 0, 0, eps[2]}, 3, h);
}

StencilKernel pde_stencil(const PdeSpec& pde) {
  pde.validate();
  switch (pde.family) {
    case PdeFamily::aniso2d:
      return q1_stencil_2d(anisotropic_coefficient(pde.eps, pde.theta), pde.h());
    case PdeFamily::aniso3d:
      return q1_stencil_3d({1.0, pde.eps1, pde.eps2}, pde.h());
    case PdeFamily::fdm_custom:
      return *pde.custom_stencil;
  }
  throw ContractError("pde_stencil: unknown family");
}

TransferPair transfer_stencils(int dim) {
  require(dim == 2 || dim == 3, "transfer_stencils: dimension must be 2 or 3");
  const std::array<double, 3> w{0.5, 1.0, 0.5};
  StencilKernel p(1, 1, Extent::cube(dim, 3));
  const std::size_t nz = dim == 3 ? 3 : 1;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) p.at(0, 0, z, y, x) = (dim == 3 ? w[z] : 1.0) * w[y] * w[x];
  return {p, p};
}

Sampling coarsening_sampling(int dim) { return Sampling::uniform(dim, 2, 1); }

Extent coarse_extent(const Extent& fine) {
  for (std::size_t a = fine.first_axis(); a < 3; ++a)
    require(fine.n[a] >= 3 && fine.n[a] % 2 == 1, "coarse_extent: fine extent must be odd >= 3");
  return sampled_extent(fine, coarsening_sampling(fine.dim));
}

LevelOperator galerkin_coarse(const LevelOperator& a, const StencilKernel& p,
                              const StencilKernel& r, std::optional<std::size_t> patch) {
  const int dim = a.stencil.dim();
  require(p.dim() == dim && r.dim() == dim, "galerkin_coarse: dimension mismatch");
  require(a.stencil.in_channels() == 1 && a.stencil.out_channels() == 1 &&
              p.in_channels() == 1 && p.out_channels() == 1 && r.in_channels() == 1 &&
              r.out_channels() == 1,
          "galerkin_coarse: single-channel stencils only");

  const auto ra = a.stencil.radius(), rp = p.radius(), rr = r.radius();
  std::size_t rc = 0;
  for (std::size_t ax = a.stencil.taps().first_axis(); ax < 3; ++ax)
    rc = std::max(rc, (ra[ax] + rp[ax] + rr[ax]) / 2);
  const std::size_t needed = 4 * rc + 3;
  const std::size_t m = patch.value_or(needed);
  require(m >= needed, "galerkin_coarse: patch of " + std::to_string(m) +
                           " coarse nodes cannot capture stencil radius " + std::to_string(rc) +
                           " (need " + std::to_string(needed) + ")");

  const Extent cext = Extent::cube(dim, m);
  const Sampling s = coarsening_sampling(dim);
  const Extent taps = Extent::cube(dim, 2 * rc + 1);
  StencilKernel coarse(1, 1, taps);
  const std::size_t c = (m - 1) / 2;
  const std::size_t zc = dim == 3 ? c : 0;
  const long rz = dim == 3 ? static_cast<long>(rc) : 0;

  for (long dz = -rz; dz <= rz; ++dz)
    for (long dy = -static_cast<long>(rc); dy <= static_cast<long>(rc); ++dy)
      for (long dx = -static_cast<long>(rc); dx <= static_cast<long>(rc); ++dx) {
        GridField delta(1, cext);
        delta.at(0, static_cast<std::size_t>(static_cast<long>(zc) + dz),
                 static_cast<std::size_t>(static_cast<long>(c) + dy),
                 static_cast<std::size_t>(static_cast<long>(c) + dx)) = 1.0;
        const GridField fine = deconv(p, delta, s);
        const GridField applied = conv(a.stencil, fine);
        const GridField back = conv_strided(r, applied, s);
        coarse.at(0, 0, static_cast<std::size_t>(dz + rz), static_cast<std::size_t>(dy + static_cast<long>(rc)),
                  static_cast<std::size_t>(dx + static_cast<long>(rc))) = back.at(0, zc, c, c);
      }
  return {std::move(coarse), a.level + 1};
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  require(x.size() == cols && y.size() == rows, "SparseMatrix::multiply: size mismatch");
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += values[k] * x[col_index[k]];
    y[i] = acc;
  }
}

std::vector<double> SparseMatrix::multiply(std::span<const double> x) const {
  std::vector<double> y(rows);
  multiply(x, y);
  return y;
}

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> d(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d[i * cols + col_index[k]] = values[k];
  return d;
}

SparseMatrix assemble_matrix(const StencilKernel& stencil, const Extent& extent) {
  require(stencil.dim() == extent.dim, "assemble_matrix: dimension mismatch");
  const std::size_t n = extent.size();
  const auto& e = extent.n;
  const auto& t = stencil.taps().n;
  const auto rad = stencil.radius();
  SparseMatrix m;
  m.rows = stencil.out_channels() * n;
  m.cols = stencil.in_channels() * n;
  m.row_ptr.reserve(m.rows + 1);
  m.row_ptr.push_back(0);

  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t l = 0; l < stencil.out_channels(); ++l)
    for (std::size_t z = 0; z < e[0]; ++z)
      for (std::size_t y = 0; y < e[1]; ++y)
        for (std::size_t x = 0; x < e[2]; ++x) {
          row.clear();
          for (std::size_t k = 0; k < stencil.in_channels(); ++k)
            for (std::size_t tz = 0; tz < t[0]; ++tz)
              for (std::size_t ty = 0; ty < t[1]; ++ty)
                for (std::size_t tx = 0; tx < t[2]; ++tx) {
                  const double w = stencil.at(l, k, tz, ty, tx);
                  if (w == 0.0) continue;
                  const long iz = static_cast<long>(z + tz) - static_cast<long>(rad[0]);
                  const long iy = static_cast<long>(y + ty) - static_cast<long>(rad[1]);
                  const long ix = static_cast<long>(x + tx) - static_cast<long>(rad[2]);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(e[0]) ||
                      iy >= static_cast<long>(e[1]) || ix >= static_cast<long>(e[2]))
                    continue;
                  const std::size_t col =
                      k * n + (static_cast<std::size_t>(iz) * e[1] + static_cast<std::size_t>(iy)) * e[2] +
                      static_cast<std::size_t>(ix);
                  row.emplace_back(col, w);
                }
          std::sort(row.begin(), row.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
          for (const auto& [col, w] : row) {
            if (!m.col_index.empty() && m.col_index.size() > m.row_ptr.back() &&
                m.col_index.back() == col) {
              m.values.back() += w;
            } else {
              m.col_index.push_back(col);
              m.values.push_back(w);
            }
          }
          m.row_ptr.push_back(m.values.size());
        }
  return m;
}

std::string format_stencil(const StencilKernel& stencil) {
  std::ostringstream os;
  os << std::setprecision(6);
  const auto& t = stencil.taps().n;
  for (std::size_t l = 0; l < stencil.out_channels(); ++l)
    for (std::size_t k = 0; k < stencil.in_channels(); ++k)
      for (std::size_t z = 0; z < t[0]; ++z) {
        if (stencil.out_channels() > 1 || stencil.in_channels() > 1 || t[0] > 1)
          os << "# out=" << l << " in=" << k << " z=" << z << "\n";
        for (std::size_t y = 0; y < t[1]; ++y) {
          for (std::size_t x = 0; x < t[2]; ++x) {
            if (x) os << ' ';
            os << std::setw(13) << stencil.at(l, k, z, y, x);
          }
          os << '\n';
        }
      }
  return os.str();
}

}  // namespace metamg
