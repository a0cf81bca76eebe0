#include "metamg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <thread>

#include "metamg/autodiff.hpp"

namespace metamg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ b);
}

// ---------------------------------------------------------------------------

void EtaDistribution::validate() const {
  require(log_base > 1.0, "eta distribution: log base must exceed 1");
  require(inv_eps_lo <= inv_eps_hi && inv_eps2_lo <= inv_eps2_hi,
          "eta distribution: lower bound above upper bound");
  if (family == PdeFamily::aniso2d) {
    require(inv_eps_lo >= 0.0, "eta distribution: 2D eps must not exceed 1 (log range must be >= 0)");
    require(theta_lo >= 0.0 && theta_hi <= std::numbers::pi && theta_lo <= theta_hi,
            "eta distribution: theta range must lie in [0, pi]");
  } else if (family != PdeFamily::aniso3d) {
    throw ContractError("eta distribution: only aniso2d and aniso3d can be sampled");
  }
}

PdeSpec EtaDistribution::draw(std::mt19937_64& rng, std::size_t cells) const {
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  PdeSpec pde;
  pde.family = family;
  pde.cells = cells;
  if (family == PdeFamily::aniso2d) {
    pde.eps = std::pow(log_base, -uniform(inv_eps_lo, inv_eps_hi));
    pde.theta = uniform(theta_lo, theta_hi);
  } else {
    pde.eps1 = std::pow(log_base, -uniform(inv_eps_lo, inv_eps_hi));
    pde.eps2 = std::pow(log_base, -uniform(inv_eps2_lo, inv_eps2_hi));
  }
  pde.validate();
  return pde;
}

EtaDistribution EtaDistribution::fixed(double eps, double theta) {
  EtaDistribution d;
  d.inv_eps_lo = d.inv_eps_hi = -std::log10(eps);
  d.theta_lo = d.theta_hi = theta;
  return d;
}

void TrainConfig::validate() const {
  require(lr > 0.0, "train: learning rate must be positive");
  require(batch >= 1 && tasks >= 1 && rhs_per_task >= 1, "train: counts must be >= 1");
  require(threads >= 1, "train: threads must be >= 1");
  eta.validate();
  mg_config().validate();
  arch().validate();
  require(cells >= 4 && (cells & (cells - 1)) == 0, "train: mesh cells must be a power of two >= 4");
  std::size_t n = cells - 1;
  for (std::size_t l = 1; l < levels; ++l) {
    require(n >= 3, "train: too many levels for the mesh");
    n = (n - 1) / 2;
  }
}

MgConfig TrainConfig::mg_config() const {
  MgConfig c;
  c.levels = levels;
  c.nu = nu;
  return c;
}

NetArch TrainConfig::arch() const {
  NetArch a;
  a.kind = model;
  a.dim = eta.family == PdeFamily::aniso3d ? 3 : 2;
  a.levels = levels;
  a.nu = nu;
  a.taps = taps;
  a.hidden = hidden;
  return a;
}

std::vector<TaskSample> sample_tasks(const TrainConfig& config, std::uint64_t seed) {
  config.eta.validate();
  require(config.tasks >= 1 && config.rhs_per_task >= 1, "sample_tasks: counts must be >= 1");
  std::vector<TaskSample> out;
  out.reserve(config.tasks);
  for (std::size_t t = 0; t < config.tasks; ++t) {
    std::mt19937_64 eta_rng(derive_seed(seed, 1, t));
    TaskSample s{config.eta.draw(eta_rng, config.cells), {}};
    std::mt19937_64 rhs_rng(derive_seed(seed, 2, t));
    std::normal_distribution<double> normal(0.0, 1.0);
    const Extent ext = s.pde.fine_extent();
    for (std::size_t k = 0; k < config.rhs_per_task; ++k) {
      GridField f(1, ext);
      for (double& v : f.values()) v = normal(rhs_rng);
      s.rhs.push_back(std::move(f));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

double loss_residual(const GridField& f, const GridField& u, const StencilKernel& a) {
  const double ff = dot(f, f);
  require(ff > 0.0, "loss_residual: right-hand side has zero norm");
  GridField r = f;
  r -= conv(a, u);
  return dot(r, r) * (1.0 / ff);  // same rounding as the taped loss
}

double iteration_loss(const ModelParams& params, const Hierarchy& h, const GridField& f,
                      const MgConfig& config, ModelParams* grads) {
  const double ff = dot(f, f);
  require(ff > 0.0, "iteration_loss: right-hand side has zero norm");
  ad::Tape tape;
  TapedModel model(tape, params, grads);
  const ad::Var fv = tape.constant(f.values());
  const ad::Var u = taped_cycle(tape, fv, h, model, config);
  const ad::Var r = ad::sub(tape, fv, ad::conv_fixed(tape, h.op(0).stencil, u, h.extent(0)));
  const ad::Var loss = ad::scale(tape, ad::sum_squares(tape, r), 1.0 / ff);
  const double value = tape.scalar(loss);
  if (!std::isfinite(value)) throw NonFiniteError("training loss is not finite");
  if (grads) tape.backward(loss);
  return value;
}

void adam_step(ModelParams& params, AdamState& s, double lr) {
  auto& ts = params.tensors();
  if (s.m.size() != ts.size()) {
    s.m.clear();
    s.v.clear();
    for (const auto& t : ts) {
      s.m.emplace_back(t.size(), 0.0);
      s.v.emplace_back(t.size(), 0.0);
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < ts.size(); ++k) {
    auto& t = ts[k];
    require(s.m[k].size() == t.size(), "adam_step: state shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      s.m[k][i] = s.beta1 * s.m[k][i] + (1.0 - s.beta1) * g;
      s.v[k][i] = s.beta2 * s.v[k][i] + (1.0 - s.beta2) * g * g;
      const double mhat = s.m[k][i] / c1;
      const double vhat = s.v[k][i] / c2;
      t.values[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

ModelParams init_model(const TrainConfig& config, const std::vector<TaskSample>& tasks) {
  const NetArch arch = config.arch();
  ModelParams p = make_model(arch);
  std::mt19937_64 rng(derive_seed(config.seed, 3));

  // mean center tap per level over the training operators
  std::vector<double> center(arch.levels, 0.0);
  for (const auto& t : tasks) {
    const Hierarchy h = make_hierarchy(t.pde, arch.levels);
    for (std::size_t l = 0; l < arch.levels; ++l) center[l] += h.op(l).stencil.center();
  }
  for (double& c : center) c /= static_cast<double>(std::max<std::size_t>(tasks.size(), 1));

  auto fan_in = [&](const std::string& wname, const std::string& bname, double gain) {
    ParamTensor& w = p.get(wname);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.shape.at(1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : w.values) v = gain * u(rng);
    for (double& v : p.get(bname).values) v = gain * u(rng);
  };

  switch (arch.kind) {
    case ModelKind::pde_mgnet: {
      const std::size_t mid = arch.kernel_size() / 2;
      for (std::size_t l = 0; l + 1 < arch.levels; ++l) {
        require(center[l] > 0.0, "init_model: non-positive center tap");
        for (std::size_t i = 0; i < arch.nu[l]; ++i)
          p.get(smoother_param_name(l, i)).values[mid] = (2.0 / 3.0) / center[l];
      }
      break;
    }
    case ModelKind::meta_sc:
      fan_in("fc1.weight", "fc1.bias", 1.0);
      fan_in("fc2.weight", "fc2.bias", 1.0);
      break;
    case ModelKind::meta_direct: {
      fan_in("fc1.weight", "fc1.bias", 1.0);
      fan_in("fc2.weight", "fc2.bias", 1.0);
      fan_in("fc3.weight", "fc3.bias", 0.01);
      require(center[0] > 0.0, "init_model: non-positive center tap");
      p.get("fc3.bias").values[arch.kernel_size() / 2] += (2.0 / 3.0) / center[0];
      break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

struct Sample {
  std::size_t task;
  std::size_t rhs;
};

/// Gradient of the summed loss over `batch`, accumulated into params.grad.
/// Per-thread partial sums are reduced in thread order.
std::vector<double> batch_gradient(ModelParams& params, const std::vector<Sample>& batch,
                                   const std::vector<TaskSample>& tasks,
                                   const std::vector<Hierarchy>& hier, const MgConfig& mg,
                                   std::size_t threads) {
  const std::size_t T = std::max<std::size_t>(1, std::min(threads, batch.size()));
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<ModelParams> partial(T, params);
  std::vector<std::exception_ptr> errors(T);
  auto work = [&](std::size_t w) {
    try {
      partial[w].zero_grad();
      const std::size_t lo = w * batch.size() / T, hi = (w + 1) * batch.size() / T;
      for (std::size_t i = lo; i < hi; ++i) {
        const Sample& s = batch[i];
        losses[i] = iteration_loss(params, hier[s.task], tasks[s.task].rhs[s.rhs], mg, &partial[w]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (T == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < T; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  params.zero_grad();
  for (std::size_t w = 0; w < T; ++w)
    for (std::size_t k = 0; k < params.tensors().size(); ++k) {
      auto& dst = params.tensors()[k].grad;
      const auto& src = partial[w].tensors()[k].grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  return losses;
}

void run_epochs(ModelParams& params, AdamState& adam, const std::vector<TaskSample>& tasks,
                const TrainConfig& config, std::size_t epochs, std::uint64_t shuffle_stream,
                std::vector<double>* history, const EpochCallback& on_epoch) {
  const MgConfig mg = config.mg_config();
  std::vector<Hierarchy> hier;
  hier.reserve(tasks.size());
  for (const auto& t : tasks) hier.push_back(make_hierarchy(t.pde, config.levels));

  std::vector<Sample> all;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (std::size_t k = 0; k < tasks[t].rhs.size(); ++k) all.push_back({t, k});

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, shuffle_stream, epoch));
    std::shuffle(all.begin(), all.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < all.size(); start += config.batch) {
      const std::size_t end = std::min(all.size(), start + config.batch);
      const std::vector<Sample> batch(all.begin() + static_cast<long>(start),
                                      all.begin() + static_cast<long>(end));
      const std::vector<double> losses =
          batch_gradient(params, batch, tasks, hier, mg, config.threads);
      for (double l : losses) sum += l;
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& t : params.tensors())
        for (double& g : t.grad) g *= inv;
      adam_step(params, adam, config.lr);
      if (!params.all_finite()) throw NonFiniteError("training produced non-finite parameters");
    }
    const double mean = sum / static_cast<double>(all.size());
    if (history) history->push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, std::optional<ModelParams> init,
                  const EpochCallback& on_epoch) {
  config.validate();
  const std::vector<TaskSample> tasks = sample_tasks(config, config.seed);
  TrainResult out{init ? std::move(*init) : init_model(config, tasks), {}};
  const NetArch arch = model_arch(out.params);
  require(arch.kind == config.model && arch.levels == config.levels,
          "train: initial model does not match the configuration");
  AdamState adam;
  run_epochs(out.params, adam, tasks, config, config.epochs, 4, &out.epoch_loss, on_epoch);
  return out;
}

ModelParams fine_tune(ModelParams theta, const TaskSample& task, const TrainConfig& config,
                      std::size_t steps) {
  if (steps == 0) return theta;
  AdamState adam;
  run_epochs(theta, adam, {task}, config, steps, 5, nullptr, {});
  return theta;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write loss history: " + path.string());
  os << "epoch,mean_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) os << i + 1 << ',' << history[i] << '\n';
}

}  // namespace metamg
