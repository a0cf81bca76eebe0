#pragma once

// Tape-based reverse-mode differentiation over the small, closed set of
// primitives that appear in one solver iteration of the learned multigrid
// methods. Values are flat double arrays; shape bookkeeping is left to the
// caller, which passes explicit ConvShape / extents to each primitive.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "metamg/grid.hpp"
#include "metamg/model.hpp"
#include "metamg/multigrid.hpp"

namespace metamg::ad {

struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double> out_grad)>;

  Var constant(std::vector<double> value);
  /// Leaf bound to `p`; backward() adds its gradient into p.grad.
  Var parameter(ParamTensor& p);

  std::span<const double> value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  /// Gradient of the last backward() for `v` (empty if none reached it).
  std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records a node. `fn` is dropped when no input requires a gradient.
  Var push(std::vector<double> value, bool needs_grad, Backward fn);
  /// Gradient accumulator of `v`, zero-allocated on first use.
  std::span<double> accumulator(Var v);

  /// Reverse sweep from a scalar node; each node is visited once, in
  /// reverse recording order. Leaf gradients are added into bound params.
  void backward(Var loss);

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward backward;
    ParamTensor* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// Elementwise and dense primitives.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double alpha);
Var relu(Tape& t, Var a);
Var slice(Tape& t, Var a, std::size_t offset, std::size_t length);
Var concat(Tape& t, const std::vector<Var>& parts);
/// y = W x + b with W stored row-major (rows x cols).
Var linear(Tape& t, Var w, Var b, Var x, std::size_t rows, std::size_t cols);
/// v / ||v||; a zero vector maps to zero with zero gradient.
Var normalize(Tape& t, Var v);
/// Sum of squares, a scalar.
Var sum_squares(Tape& t, Var v);
/// Adaptive average pooling of a single-channel field into bins^dim cells.
Var avg_pool(Tape& t, Var v, const Extent& extent, std::size_t bins);

// Convolution primitives.
/// Strided correlation with a trainable kernel (or any kernel node).
Var conv(Tape& t, Var kernel, Var in, const kernels::ConvShape& shape);
/// Correlation with a fixed kernel; sampled output when `s` is not identity.
Var conv_fixed(Tape& t, const StencilKernel& kernel, Var in, const Extent& in_extent,
               const Sampling& s = {});
/// conv_fixed(kernel, upsample(in)) onto the fine extent.
Var deconv_fixed(Tape& t, const StencilKernel& kernel, Var in, const Extent& coarse,
                 const Sampling& s);

// Solves.
/// e = G (G^T A G)^{-1} G^T r with G holding L stacked fields of `extent`.
/// Arithmetic matches sc_apply exactly.
Var subspace_correction(Tape& t, Var g, Var r, std::size_t columns, const StencilKernel& a,
                        const Extent& extent);
/// x = C^{-1} rhs for a fixed factorized matrix; the adjoint is the transpose solve.
Var coarse_solve(Tape& t, Var rhs, std::shared_ptr<const CoarseSolver> solver);

}  // namespace metamg::ad
