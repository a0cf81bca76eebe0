#include "metamg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metamg/smoothers.hpp"

namespace metamg::ad {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace

Var Tape::constant(std::vector<double> value) {
  nodes_.push_back({std::move(value), {}, false, {}, nullptr});
  return {nodes_.size() - 1};
}

Var Tape::parameter(ParamTensor& p) {
  nodes_.push_back({p.values, {}, true, {}, &p});
  return {nodes_.size() - 1};
}

double Tape::scalar(Var v) const {
  const auto& n = nodes_.at(v.id);
  require(n.value.size() == 1, "Tape::scalar: node is not a scalar");
  return n.value[0];
}

Var Tape::push(std::vector<double> value, bool needs_grad, Backward fn) {
  nodes_.push_back({std::move(value), {}, needs_grad, needs_grad ? std::move(fn) : Backward{}, nullptr});
  return {nodes_.size() - 1};
}

std::span<double> Tape::accumulator(Var v) {
  auto& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(nodes_.at(loss.id).value.size() == 1, "Tape::backward: loss must be a scalar");
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) {
        if (!std::isfinite(n.grad[k]))
          throw NonFiniteError("non-finite gradient for parameter '" + n.param->name + "'");
        n.param->grad[k] += n.grad[k];
      }
    }
  }
}

// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const auto av = t.value(a), bv = t.value(b);
  require(av.size() == bv.size(), "ad::add: size mismatch");
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.push(std::move(y), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& t, std::span<const double> g) {
                  for (Var v : {a, b}) {
                    if (!t.needs_grad(v)) continue;
                    auto acc = t.accumulator(v);
                    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                  }
                });
}

Var sub(Tape& t, Var a, Var b) {
  const auto av = t.value(a), bv = t.value(b);
  require(av.size() == bv.size(), "ad::sub: size mismatch");
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return t.push(std::move(y), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& t, std::span<const double> g) {
                  if (t.needs_grad(a)) {
                    auto acc = t.accumulator(a);
                    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                  }
                  if (t.needs_grad(b)) {
                    auto acc = t.accumulator(b);
                    for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
                  }
                });
}

Var scale(Tape& t, Var a, double alpha) {
  const auto av = t.value(a);
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * av[i];
  return t.push(std::move(y), t.needs_grad(a), [a, alpha](Tape& t, std::span<const double> g) {
    auto acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += alpha * g[i];
  });
}

Var relu(Tape& t, Var a) {
  const auto av = t.value(a);
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] > 0.0 ? av[i] : 0.0;
  return t.push(std::move(y), t.needs_grad(a), [a](Tape& t, std::span<const double> g) {
    const auto x = t.value(a);
    auto acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) acc[i] += g[i];
  });
}

Var slice(Tape& t, Var a, std::size_t offset, std::size_t length) {
  const auto av = t.value(a);
  require(offset + length <= av.size(), "ad::slice: out of range");
  std::vector<double> y(av.begin() + static_cast<long>(offset),
                        av.begin() + static_cast<long>(offset + length));
  return t.push(std::move(y), t.needs_grad(a), [a, offset](Tape& t, std::span<const double> g) {
    auto acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[offset + i] += g[i];
  });
}

Var concat(Tape& t, const std::vector<Var>& parts) {
  std::vector<double> y;
  bool grad = false;
  for (Var p : parts) {
    const auto v = t.value(p);
    y.insert(y.end(), v.begin(), v.end());
    grad = grad || t.needs_grad(p);
  }
  return t.push(std::move(y), grad, [parts](Tape& t, std::span<const double> g) {
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t n = t.value(p).size();
      if (t.needs_grad(p)) {
        auto acc = t.accumulator(p);
        for (std::size_t i = 0; i < n; ++i) acc[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var linear(Tape& t, Var w, Var b, Var x, std::size_t rows, std::size_t cols) {
  const auto wv = t.value(w), bv = t.value(b), xv = t.value(x);
  require(wv.size() == rows * cols && bv.size() == rows && xv.size() == cols,
          "ad::linear: shape mismatch");
  std::vector<double> y(rows);
  for (std::size_t i = 0; i < rows; ++i) y[i] = bv[i] + dot(wv.subspan(i * cols, cols), xv);
  const bool grad = t.needs_grad(w) || t.needs_grad(b) || t.needs_grad(x);
  return t.push(std::move(y), grad, [w, b, x, rows, cols](Tape& t, std::span<const double> g) {
    const auto wv = t.value(w), xv = t.value(x);
    if (t.needs_grad(b)) {
      auto acc = t.accumulator(b);
      for (std::size_t i = 0; i < rows; ++i) acc[i] += g[i];
    }
    if (t.needs_grad(w)) {
      auto acc = t.accumulator(w);
      for (std::size_t i = 0; i < rows; ++i) {
        if (g[i] == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) acc[i * cols + j] += g[i] * xv[j];
      }
    }
    if (t.needs_grad(x)) {
      auto acc = t.accumulator(x);
      for (std::size_t i = 0; i < rows; ++i) {
        if (g[i] == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) acc[j] += g[i] * wv[i * cols + j];
      }
    }
  });
}

Var normalize(Tape& t, Var v) {
  const auto x = t.value(v);
  const double n = std::sqrt(dot(x, x));
  std::vector<double> y(x.size(), 0.0);
  if (n > 0.0)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / n;
  return t.push(std::move(y), t.needs_grad(v) && n > 0.0,
                [v, n, self = t.size()](Tape& t, std::span<const double> g) {
                  const auto y = t.value(Var{self});
                  const double yg = dot(y, g);
                  auto acc = t.accumulator(v);
                  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += (g[i] - y[i] * yg) / n;
                });
}

Var sum_squares(Tape& t, Var v) {
  const auto x = t.value(v);
  return t.push({dot(x, x)}, t.needs_grad(v), [v](Tape& t, std::span<const double> g) {
    const auto x = t.value(v);
    auto acc = t.accumulator(v);
    for (std::size_t i = 0; i < x.size(); ++i) acc[i] += 2.0 * g[0] * x[i];
  });
}

namespace {

struct PoolBins {
  // per axis: [lo, hi) ranges for each bin; inactive axes get one bin [0, 1)
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, 3> ranges;
};

PoolBins pool_bins(const Extent& e, std::size_t bins) {
  PoolBins p;
  for (std::size_t a = 0; a < 3; ++a) {
    if (a < e.first_axis()) {
      p.ranges[a].push_back({0, 1});
      continue;
    }
    const std::size_t n = e.n[a];
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t lo = b * n / bins;
      const std::size_t hi = ((b + 1) * n + bins - 1) / bins;
      p.ranges[a].push_back({lo, std::max(hi, lo + 1)});
    }
  }
  return p;
}

template <typename F>
void for_each_bin(const Extent& e, const PoolBins& p, F&& f) {
  std::size_t out = 0;
  for (const auto& [z0, z1] : p.ranges[0])
    for (const auto& [y0, y1] : p.ranges[1])
      for (const auto& [x0, x1] : p.ranges[2]) {
        const double w = 1.0 / static_cast<double>((z1 - z0) * (y1 - y0) * (x1 - x0));
        for (std::size_t z = z0; z < z1; ++z)
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) f(out, (z * e.n[1] + y) * e.n[2] + x, w);
        ++out;
      }
}

}  // namespace

Var avg_pool(Tape& t, Var v, const Extent& extent, std::size_t bins) {
  const auto x = t.value(v);
  require(x.size() == extent.size(), "ad::avg_pool: size mismatch");
  require(bins >= 1, "ad::avg_pool: need at least one bin");
  const PoolBins p = pool_bins(extent, bins);
  std::size_t nout = 1;
  for (const auto& r : p.ranges) nout *= r.size();
  std::vector<double> y(nout, 0.0);
  for_each_bin(extent, p, [&](std::size_t o, std::size_t i, double w) { y[o] += w * x[i]; });
  return t.push(std::move(y), t.needs_grad(v), [v, extent, p](Tape& t, std::span<const double> g) {
    auto acc = t.accumulator(v);
    for_each_bin(extent, p, [&](std::size_t o, std::size_t i, double w) { acc[i] += w * g[o]; });
  });
}

// ---------------------------------------------------------------------------

Var conv(Tape& t, Var kernel, Var in, const kernels::ConvShape& shape) {
  const auto kv = t.value(kernel), xv = t.value(in);
  require(kv.size() == shape.out_channels * shape.in_channels * shape.taps.size(),
          "ad::conv: kernel size mismatch");
  require(xv.size() == shape.in_channels * shape.in_extent.size(), "ad::conv: input size mismatch");
  std::vector<double> y(shape.out_channels * shape.out_extent.size(), 0.0);
  kernels::correlate(shape, kv, xv, y);
  const bool grad = t.needs_grad(kernel) || t.needs_grad(in);
  return t.push(std::move(y), grad, [kernel, in, shape](Tape& t, std::span<const double> g) {
    if (t.needs_grad(kernel))
      kernels::correlate_kernel_adjoint(shape, t.value(in), g, t.accumulator(kernel));
    if (t.needs_grad(in))
      kernels::correlate_input_adjoint(shape, t.value(kernel), g, t.accumulator(in));
  });
}

Var conv_fixed(Tape& t, const StencilKernel& kernel, Var in, const Extent& in_extent,
               const Sampling& s) {
  const kernels::ConvShape shape{kernel.out_channels(), kernel.in_channels(), kernel.taps(),
                                 in_extent, sampled_extent(in_extent, s), s};
  const auto xv = t.value(in);
  require(xv.size() == shape.in_channels * in_extent.size(), "ad::conv_fixed: input size mismatch");
  std::vector<double> y(shape.out_channels * shape.out_extent.size(), 0.0);
  kernels::correlate(shape, kernel.coefficients(), xv, y);
  return t.push(std::move(y), t.needs_grad(in),
                [in, shape, k = kernel.values()](Tape& t, std::span<const double> g) {
                  kernels::correlate_input_adjoint(shape, k, g, t.accumulator(in));
                });
}

Var deconv_fixed(Tape& t, const StencilKernel& kernel, Var in, const Extent& coarse,
                 const Sampling& s) {
  const Extent fine = upsampled_extent(coarse, s);
  const std::size_t ch = kernel.in_channels();
  const auto xv = t.value(in);
  require(xv.size() == ch * coarse.size(), "ad::deconv_fixed: input size mismatch");
  std::vector<double> up(ch * fine.size(), 0.0);
  kernels::upsample(ch, coarse, fine, s, xv, up);
  const kernels::ConvShape shape{kernel.out_channels(), ch, kernel.taps(), fine, fine, Sampling{}};
  std::vector<double> y(shape.out_channels * fine.size(), 0.0);
  kernels::correlate(shape, kernel.coefficients(), up, y);
  return t.push(std::move(y), t.needs_grad(in),
                [in, shape, coarse, s, k = kernel.values()](Tape& t, std::span<const double> g) {
                  std::vector<double> tmp(shape.in_channels * shape.in_extent.size(), 0.0);
                  kernels::correlate_input_adjoint(shape, k, g, tmp);
                  kernels::subsample(shape.in_channels, shape.in_extent, coarse, s, tmp,
                                     t.accumulator(in));
                });
}

// ---------------------------------------------------------------------------

Var subspace_correction(Tape& t, Var g, Var r, std::size_t columns, const StencilKernel& a,
                        const Extent& extent) {
  const std::size_t L = columns;
  const std::size_t n = extent.size();
  const auto gv = t.value(g), rv = t.value(r);
  require(L >= 1 && gv.size() == L * n && rv.size() == n, "ad::subspace_correction: shape mismatch");
  auto col = [n](std::span<const double> v, std::size_t i) { return v.subspan(i * n, n); };

  std::vector<double> b(L);
  bool zero_rhs = true;
  for (std::size_t i = 0; i < L; ++i) {
    b[i] = dot(col(gv, i), rv);
    if (b[i] != 0.0) zero_rhs = false;
  }
  if (zero_rhs) return t.constant(std::vector<double>(n, 0.0));

  const kernels::ConvShape shape{1, 1, a.taps(), extent, extent, Sampling{}};
  std::vector<double> s(L * n, 0.0);
  for (std::size_t j = 0; j < L; ++j)
    kernels::correlate(shape, a.coefficients(), col(gv, j), std::span<double>(s).subspan(j * n, n));
  std::vector<double> m(L * L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) m[i * L + j] = dot(col(gv, i), col(s, j));

  auto solver = std::make_shared<const detail::SmallSpdSolver>(std::move(m), L);
  std::vector<double> c = solver->solve(b);
  std::vector<double> e(n, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    const auto gi = col(gv, i);
    for (std::size_t k = 0; k < n; ++k) e[k] += c[i] * gi[k];
  }
  for (double v : e)
    if (!std::isfinite(v)) throw NonFiniteError("subspace correction: non-finite correction");

  // Adjoint with w = G b_bar, q = A e:
  //   G_bar_i += c_i (e_bar - A^T w) + b_bar_i (r - q),  r_bar += w.
  const bool grad = t.needs_grad(g) || t.needs_grad(r);
  return t.push(std::move(e), grad,
                [g, r, L, n, shape, solver, c = std::move(c), s = std::move(s),
                 k = a.values()](Tape& t, std::span<const double> eg) {
                  const auto gv = t.value(g), rv = t.value(r);
                  std::vector<double> cbar(L);
                  for (std::size_t i = 0; i < L; ++i) cbar[i] = dot(gv.subspan(i * n, n), eg);
                  const std::vector<double> bbar = solver->solve(cbar);
                  std::vector<double> w(n, 0.0);
                  for (std::size_t i = 0; i < L; ++i)
                    for (std::size_t p = 0; p < n; ++p) w[p] += bbar[i] * gv[i * n + p];
                  if (t.needs_grad(r)) {
                    auto acc = t.accumulator(r);
                    for (std::size_t p = 0; p < n; ++p) acc[p] += w[p];
                  }
                  if (!t.needs_grad(g)) return;
                  std::vector<double> atw(n, 0.0);
                  kernels::correlate_input_adjoint(shape, k, w, atw);
                  std::vector<double> q(n, 0.0);
                  for (std::size_t j = 0; j < L; ++j)
                    for (std::size_t p = 0; p < n; ++p) q[p] += c[j] * s[j * n + p];
                  auto acc = t.accumulator(g);
                  for (std::size_t i = 0; i < L; ++i)
                    for (std::size_t p = 0; p < n; ++p)
                      acc[i * n + p] += c[i] * (eg[p] - atw[p]) + bbar[i] * (rv[p] - q[p]);
                });
}

Var coarse_solve(Tape& t, Var rhs, std::shared_ptr<const CoarseSolver> solver) {
  const auto bv = t.value(rhs);
  require(bv.size() == solver->size(), "ad::coarse_solve: size mismatch");
  std::vector<double> x(bv.size(), 0.0);
  solver->solve(bv, x);
  return t.push(std::move(x), t.needs_grad(rhs),
                [rhs, solver](Tape& t, std::span<const double> g) {
                  std::vector<double> y(g.size(), 0.0);
                  solver->solve_transpose(g, y);
                  auto acc = t.accumulator(rhs);
                  for (std::size_t i = 0; i < y.size(); ++i) acc[i] += y[i];
                });
}

}  // namespace metamg::ad
