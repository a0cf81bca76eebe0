#pragma once

// Unsupervised training of the learned smoothers: loss after one outer
// iteration from u0 = 0, reverse-mode gradients through the whole cycle,
// minibatch ADAM over a mixed set of sampled PDE tasks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "metamg/discretization.hpp"
#include "metamg/mgnet.hpp"
#include "metamg/model.hpp"
#include "metamg/multigrid.hpp"

namespace metamg {

/// SplitMix64 finalizer applied to a combination of the master seed and
/// stream indices; used to derive every independent random stream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// Distribution of PDE parameters. Inverse coefficients are sampled
/// log-uniformly: log_base(1 / eps) ~ U[lo, hi]. In 3D the two ranges give
/// eps1 and eps2; in 2D the second range is unused and theta ~ U[theta_lo,
/// theta_hi] (a degenerate interval fixes theta).
struct EtaDistribution {
  PdeFamily family = PdeFamily::aniso2d;
  double log_base = 10.0;
  double inv_eps_lo = 0.0, inv_eps_hi = 5.0;
  double inv_eps2_lo = 0.0, inv_eps2_hi = 5.0;
  double theta_lo = 0.0, theta_hi = 0.0;

  /// Throws ContractError on reversed bounds, or bounds that would put a 2D
  /// eps outside (0, 1] or theta outside [0, pi].
  void validate() const;
  /// Draw a PDE on a mesh with `cells` cells per axis.
  PdeSpec draw(std::mt19937_64& rng, std::size_t cells) const;
  /// Degenerate distribution fixing a single 2D eps (and theta).
  static EtaDistribution fixed(double eps, double theta = 0.0);
};

struct TrainConfig {
  ModelKind model = ModelKind::meta_sc;
  std::size_t cells = 64;
  std::size_t levels = 4;
  std::vector<std::size_t> nu{2, 1, 1};
  double lr = 0.02;
  std::size_t batch = 64;
  std::size_t epochs = 20;
  std::size_t tasks = 20;          // M_p
  std::size_t rhs_per_task = 100;  // M_m-train
  EtaDistribution eta;
  std::uint64_t seed = 0;
  /// Worker threads for a batch; gradients are reduced in a fixed order.
  std::size_t threads = 1;
  std::size_t taps = 7;
  std::size_t hidden = 100;

  void validate() const;
  MgConfig mg_config() const;
  NetArch arch() const;
};

struct TaskSample {
  PdeSpec pde;
  std::vector<GridField> rhs;
};

/// M_p parameter draws, each with M_m-train i.i.d. N(0, 1) right-hand
/// sides; deterministic in `seed`.
std::vector<TaskSample> sample_tasks(const TrainConfig& config, std::uint64_t seed);

/// ||f - A * u||^2 / ||f||^2. Throws ContractError when f = 0.
double loss_residual(const GridField& f, const GridField& u, const StencilKernel& a);

/// Loss after one outer iteration (u1 = Mg(f)) on a fresh tape. With
/// `grads` set, the gradient is added into grads' tensors.
double iteration_loss(const ModelParams& params, const Hierarchy& h, const GridField& f,
                      const MgConfig& config, ModelParams* grads = nullptr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// Bias-corrected ADAM update of params.values from params.grad.
void adam_step(ModelParams& params, AdamState& state, double lr);

/// Model with uniform fan-in initialization of dense layers, and smoother
/// kernels started at the damped Jacobi delta (2/3) / mean center tap over
/// the training tasks.
ModelParams init_model(const TrainConfig& config, const std::vector<TaskSample>& tasks);

struct TrainResult {
  ModelParams params;
  /// Mean per-sample loss of each epoch (evaluated before each update).
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Minibatch ADAM over all (task, rhs) pairs, reshuffled each epoch. Starts
/// from `init` when given, otherwise from init_model. epochs = 0 returns
/// the initial model. Throws NonFiniteError on a non-finite loss.
TrainResult train(const TrainConfig& config, std::optional<ModelParams> init = {},
                  const EpochCallback& on_epoch = {});

/// Continues ADAM on one task's data for `steps` full passes (0 = no-op).
ModelParams fine_tune(ModelParams theta, const TaskSample& task, const TrainConfig& config,
                      std::size_t steps);

/// CSV with header "epoch,mean_loss", epochs numbered from 1.
void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& history);

}  // namespace metamg
