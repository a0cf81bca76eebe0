#pragma once

// Central finite-difference checks of taped gradients.

#include <algorithm>
#include <cmath>
#include <functional>

#include "metamg/autodiff.hpp"
#include "metamg/model.hpp"

namespace fdcheck {

using Build = std::function<metamg::ad::Var(metamg::ad::Tape&, metamg::ModelParams&)>;

struct Result {
  /// max |g - fd| / max(max |fd|, floor)
  double rel_error = 0.0;
  double fd_scale = 0.0;
  std::size_t checked = 0;
};

inline double evaluate(metamg::ModelParams& p, const Build& build) {
  metamg::ad::Tape t;
  return t.scalar(build(t, p));
}

/// Compares backward() against central differences on up to `max_per_tensor`
/// evenly spaced entries of every parameter tensor.
inline Result check(metamg::ModelParams& p, const Build& build, double step = 1e-6,
                    std::size_t max_per_tensor = 64, double floor = 1e-8) {
  p.zero_grad();
  {
    metamg::ad::Tape t;
    t.backward(build(t, p));
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& tensor : p.tensors()) analytic.push_back(tensor.grad);

  double max_diff = 0.0, scale = 0.0;
  std::size_t checked = 0;
  for (std::size_t ti = 0; ti < p.tensors().size(); ++ti) {
    const std::size_t n = p.tensors()[ti].size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_per_tensor);
    for (std::size_t i = 0; i < n; i += stride) {
      double& v = p.tensors()[ti].values[i];
      const double orig = v;
      const double h = step * std::max(1.0, std::abs(orig));
      v = orig + h;
      const double fp = evaluate(p, build);
      v = orig - h;
      const double fm = evaluate(p, build);
      v = orig;
      const double fd = (fp - fm) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(fd - analytic[ti][i]));
      scale = std::max(scale, std::abs(fd));
      ++checked;
    }
  }
  return {max_diff / std::max(scale, floor), scale, checked};
}

}  // namespace fdcheck
