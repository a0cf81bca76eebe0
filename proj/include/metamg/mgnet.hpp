#pragma once

// Learned smoothers for the backslash cycle:
//   * PDE-MgNet: one trainable convolution kernel per (level, step).
//   * Meta-MgNet with the subspace-correction smoother: a fully connected
//     hypernetwork maps the normalized operator stencil to the weights of a
//     linear dense convolution block, which expands r into a correction
//     subspace [r, y1, ..., y9].
//   * Meta-MgNet with the direct smoother: a fully connected network maps
//     (stencil, pooled r/||r||) to a convolution kernel B, e = B * r.
//
// Network forward passes are written once against the autodiff tape; the
// plain inference path records them on a scratch tape with constant
// parameters, so training and inference share the same arithmetic.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "metamg/autodiff.hpp"
#include "metamg/model.hpp"
#include "metamg/multigrid.hpp"
#include "metamg/smoothers.hpp"

namespace metamg {

enum class ModelKind { pde_mgnet, meta_sc, meta_direct };

std::string to_string(ModelKind kind);
/// Accepts "mgnet", "pde_mgnet", "meta_sc", "meta_direct" (also "meta-sc" etc).
ModelKind parse_model_kind(const std::string& name);

struct NetArch {
  ModelKind kind = ModelKind::meta_sc;
  int dim = 2;
  std::size_t levels = 5;
  std::vector<std::size_t> nu{2, 1, 1, 1, 1};
  /// Taps per axis of learned convolutions (PDE-MgNet kernels, dense block, B_d).
  std::size_t taps = 7;
  std::size_t hidden = 100;
  std::size_t growth = 3;
  std::size_t layers = 3;
  std::size_t pool_bins = 8;

  /// 3^dim: operator stencils are padded to 3 taps per axis before flattening.
  std::size_t stencil_inputs() const;
  std::size_t kernel_size() const;
  /// L = 1 + growth * layers.
  std::size_t subspace_columns() const { return 1 + growth * layers; }
  /// Total dense-block weight count emitted by the hypernetwork.
  std::size_t gamma_size() const;
  std::size_t direct_features() const;
  Extent tap_extent() const;

  void validate() const;
  std::map<std::string, std::string> to_metadata() const;
  static NetArch from_metadata(const std::map<std::string, std::string>& meta);
};

/// Zero-valued parameters laid out for `arch`, with metadata filled in.
ModelParams make_model(const NetArch& arch);
NetArch model_arch(const ModelParams& params);

std::string smoother_param_name(std::size_t level, std::size_t step);

/// Operator stencil padded to 3 taps per axis, flattened, divided by its
/// largest absolute entry.
std::vector<double> normalized_stencil_features(const StencilKernel& a);

/// Binds a model's parameters on a tape and builds smoothing steps there.
/// With `grads` set, parameters become trainable leaves accumulating into
/// grads' tensors (which must share the layout of `params`); otherwise they
/// are recorded as constants.
class TapedModel {
 public:
  TapedModel(ad::Tape& tape, const ModelParams& params, ModelParams* grads = nullptr);

  const NetArch& arch() const { return arch_; }

  /// Correction for residual `r` (a single-channel field of `extent`) on
  /// the level of `a`, smoothing step `step`.
  ad::Var smooth(const LevelOperator& a, const Extent& extent, ad::Var r, std::size_t step);

  /// Hypernetwork output for an operator stencil (meta_sc only, cached).
  ad::Var gamma(const StencilKernel& a);
  /// Dense block expansion [r, y1, ..., y_{growth*layers}] (meta_sc only).
  ad::Var dense_block(ad::Var gamma, ad::Var r, const Extent& extent);
  /// Kernel B emitted by the direct network (meta_direct only).
  ad::Var direct_kernel(const StencilKernel& a, ad::Var r, const Extent& extent);

 private:
  ad::Var bind(const std::string& name);

  ad::Tape& tape_;
  const ModelParams& params_;
  ModelParams* grads_;
  NetArch arch_;
  std::map<std::string, ad::Var> bound_;
  std::vector<std::pair<std::vector<double>, ad::Var>> gamma_cache_;
};

/// One backslash cycle on the tape, mirroring mg_cycle step for step.
ad::Var taped_cycle(ad::Tape& tape, ad::Var f, const Hierarchy& h, TapedModel& model,
                    const MgConfig& config);

/// Smoother backed by a learned model (any kind).
class LearnedSmoother final : public Smoother {
 public:
  explicit LearnedSmoother(ModelParams params);
  GridField apply(const LevelOperator& a, const GridField& r, std::size_t step) const override;
  const ModelParams& params() const { return params_; }
  const NetArch& arch() const { return arch_; }

 private:
  ModelParams params_;
  NetArch arch_;
  mutable std::mutex mutex_;
  // deque: references handed out stay valid while other threads append
  mutable std::deque<std::pair<std::vector<double>, std::vector<StencilKernel>>> block_cache_;
  std::vector<StencilKernel> conv_kernels_;

  const std::vector<StencilKernel>& dense_kernels(const StencilKernel& a) const;
};

/// PDE-MgNet kernel for (level, step) as a StencilKernel.
StencilKernel conv_smoother_kernel(const ModelParams& params, std::size_t level, std::size_t step);

/// One PDE-MgNet cycle: mg_cycle with u <- u + B^{l,i} * r as smoothing step.
GridField pde_mgnet_forward(const GridField& f, const ModelParams& params, const Hierarchy& h,
                            const MgConfig& config);

/// Correction subspace [r, y1, ..., y9] for residual r and operator stencil A.
SubspaceBasis meta_nn_sc(const GridField& r, const StencilKernel& a, const ModelParams& theta);

/// sc_apply(a, meta_nn_sc(r, a.stencil, theta), r).
GridField meta_sc_smoother(const LevelOperator& a, const GridField& r, const ModelParams& theta);

/// Kernel B from (A, r/||r||) and the correction e = B * r.
std::pair<StencilKernel, GridField> meta_direct_smoother(const LevelOperator& a, const GridField& r,
                                                         const ModelParams& params);

/// Outer iteration u <- u + MetaMg(f - A u) with the smoother given by the
/// model kind; same stopping and divergence rules as solve().
SolveResult meta_mgnet_iterate(const Hierarchy& h, const GridField& f, const ModelParams& theta,
                               const MgConfig& config, const IterateObserver& observer = {});

}  // namespace metamg
