#pragma once

// Independent reference computations for the tests: brute-force
// correlation, closed-form Q1 stencils from 1D mass/stiffness products and
// dense linear algebra through Eigen.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "metamg/discretization.hpp"
#include "metamg/grid.hpp"

namespace oracle {

using metamg::Extent;
using metamg::GridField;
using metamg::Sampling;
using metamg::StencilKernel;

inline GridField random_field(std::size_t channels, const Extent& e, std::mt19937_64& rng) {
  GridField f(channels, e);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : f.values()) v = n(rng);
  return f;
}

inline StencilKernel random_kernel(std::size_t out, std::size_t in, const Extent& taps,
                                   std::mt19937_64& rng) {
  StencilKernel k(out, in, taps);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : k.values()) v = u(rng);
  return k;
}

/// Output p reads input s*p + o + (t - taps/2), zero outside.
inline GridField correlate(const StencilKernel& k, const GridField& v, const Sampling& s = {}) {
  const Extent& in = v.extent();
  Extent out = in;
  for (std::size_t a = 0; a < 3; ++a)
    out.n[a] = in.n[a] > s.offset[a] ? (in.n[a] - 1 - s.offset[a]) / s.stride[a] + 1 : 0;
  GridField y(k.out_channels(), out);
  const auto r = k.radius();
  for (std::size_t l = 0; l < k.out_channels(); ++l)
    for (std::size_t z = 0; z < out.n[0]; ++z)
      for (std::size_t yy = 0; yy < out.n[1]; ++yy)
        for (std::size_t x = 0; x < out.n[2]; ++x) {
          double acc = 0.0;
          for (std::size_t c = 0; c < k.in_channels(); ++c)
            for (std::size_t tz = 0; tz < k.taps().n[0]; ++tz)
              for (std::size_t ty = 0; ty < k.taps().n[1]; ++ty)
                for (std::size_t tx = 0; tx < k.taps().n[2]; ++tx) {
                  const long iz = static_cast<long>(s.stride[0] * z + s.offset[0] + tz) - static_cast<long>(r[0]);
                  const long iy = static_cast<long>(s.stride[1] * yy + s.offset[1] + ty) - static_cast<long>(r[1]);
                  const long ix = static_cast<long>(s.stride[2] * x + s.offset[2] + tx) - static_cast<long>(r[2]);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(in.n[0]) ||
                      iy >= static_cast<long>(in.n[1]) || ix >= static_cast<long>(in.n[2]))
                    continue;
                  acc += k.at(l, c, tz, ty, tx) *
                         v.at(c, static_cast<std::size_t>(iz), static_cast<std::size_t>(iy),
                              static_cast<std::size_t>(ix));
                }
          y.at(l, z, yy, x) = acc;
        }
  return y;
}

/// Dense matrix of v -> correlate(k, v) on a single-channel extent.
inline Eigen::MatrixXd dense_operator(const StencilKernel& k, const Extent& e) {
  const std::size_t n = e.size();
  Eigen::MatrixXd m(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    GridField b(1, e);
    b.values()[j] = 1.0;
    const GridField col = correlate(k, b);
    for (std::size_t i = 0; i < n; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col.values()[i];
  }
  return m;
}

inline Eigen::VectorXd vec(const GridField& f) {
  return Eigen::Map<const Eigen::VectorXd>(f.values().data(), static_cast<Eigen::Index>(f.size()));
}

// 1D hat-function integrals on unit spacing, offsets -1, 0, 1.
inline double mass1(int d) { return d == 0 ? 2.0 / 3.0 : 1.0 / 6.0; }
inline double stiff1(int d) { return d == 0 ? 2.0 : -1.0; }
inline double grad_val1(int d) { return 0.5 * d; }  // integral of phi_d' * phi_0

/// Q1 stiffness stencil of -div(C grad) from tensor products of 1D
/// integrals; C indexed (x, y), storage rows are y.
inline StencilKernel q1_2d(const metamg::Coefficient2& c) {
  StencilKernel k(1, 1, Extent::grid2(3, 3));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double v = c[0][0] * stiff1(dx) * mass1(dy) + c[1][1] * mass1(dx) * stiff1(dy) -
                       (c[0][1] + c[1][0]) * grad_val1(dx) * grad_val1(dy);
      k.at(0, 0, 0, static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1)) = v;
    }
  return k;
}

/// Trilinear stencil for diag(eps_x, eps_y, eps_z) with spacing h.
inline StencilKernel q1_3d(const std::array<double, 3>& eps, double h) {
  StencilKernel k(1, 1, Extent::grid3(3, 3, 3));
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const double v = eps[0] * stiff1(dx) * mass1(dy) * mass1(dz) +
                         eps[1] * mass1(dx) * stiff1(dy) * mass1(dz) +
                         eps[2] * mass1(dx) * mass1(dy) * stiff1(dz);
        k.at(0, 0, static_cast<std::size_t>(dz + 1), static_cast<std::size_t>(dy + 1),
             static_cast<std::size_t>(dx + 1)) = h * v;
      }
  return k;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// max |a - s b| with s = a_center / b_center (uniform-scale comparison).
inline double scaled_deviation(const StencilKernel& a, const StencilKernel& b) {
  const double s = a.center() / b.center();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - s * b.values()[i]));
  return m;
}

}  // namespace oracle
