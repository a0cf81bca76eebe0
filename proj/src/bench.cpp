#include "metamg/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include "metamg/mgnet.hpp"
#include "metamg/training.hpp"

namespace metamg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

const std::vector<std::string>& registered_solvers() {
  static const std::vector<std::string> names{"gs",     "jacobi", "line_gs_x",  "line_gs_y",
                                              "krylov", "mgnet",  "meta_sc", "meta_direct"};
  return names;
}

bool is_learned_solver(const std::string& name) {
  return name == "mgnet" || name == "meta_sc" || name == "meta_direct";
}

std::size_t thread_limit() {
  const char* env = std::getenv("METAMG_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

std::unique_ptr<Smoother> make_smoother(const std::string& name, const SolverOptions& options,
                                        int dim, const MgConfig& config) {
  if (name == "gs") return std::make_unique<ClassicalSmoother>(GaussSeidelSpec{});
  if (name == "jacobi") {
    SmootherSpec s = JacobiSpec{options.omega};
    validate(s);
    return std::make_unique<ClassicalSmoother>(s);
  }
  if (name == "line_gs_x" || name == "line_gs_y") {
    require(dim == 2, "line Gauss-Seidel is available in 2D only");
    return std::make_unique<ClassicalSmoother>(
        LineGsSpec{name == "line_gs_x" ? LineAxis::x : LineAxis::y});
  }
  if (name == "krylov") return std::make_unique<ClassicalSmoother>(KrylovSpec{options.krylov_depth});
  if (is_learned_solver(name)) {
    auto it = options.checkpoints.find(name);
    require(it != options.checkpoints.end(), "no checkpoint given for solver '" + name + "'");
    ModelParams p = load_checkpoint(it->second);
    const NetArch arch = model_arch(p);
    const ModelKind want = name == "mgnet" ? ModelKind::pde_mgnet : parse_model_kind(name);
    require(arch.kind == want, "checkpoint " + it->second.string() + " holds a " +
                                   to_string(arch.kind) + " model, expected " + to_string(want));
    require(arch.dim == dim, "checkpoint dimension does not match the problem");
    if (arch.kind == ModelKind::pde_mgnet) {
      require(arch.levels == config.levels, "PDE-MgNet checkpoint was trained with a different level count");
      for (std::size_t l = 0; l + 1 < config.levels; ++l)
        require(arch.nu.at(l) == config.nu.at(l),
                "PDE-MgNet checkpoint was trained with different smoothing counts");
    }
    return std::make_unique<LearnedSmoother>(std::move(p));
  }
  throw ContractError("unknown solver '" + name + "'");
}

void BenchCase::validate() const {
  for (const auto& s : solvers)
    require(std::find(registered_solvers().begin(), registered_solvers().end(), s) !=
                registered_solvers().end(),
            "unknown solver '" + s + "'");
  require(rhs_count >= 1, "bench: need at least one right-hand side per parameter point");
  mg.validate();
  for (std::size_t i = 0; i < etas.size(); ++i) pde(i).validate();
}

PdeSpec BenchCase::pde(std::size_t i) const {
  PdeSpec p;
  p.family = family;
  p.cells = cells;
  if (family == PdeFamily::aniso3d) {
    p.eps1 = etas.at(i).first;
    p.eps2 = etas.at(i).second;
  } else {
    p.eps = etas.at(i).first;
    p.theta = etas.at(i).second;
  }
  return p;
}

GridField bench_rhs(const BenchCase& bench, std::size_t eta_index, std::size_t k) {
  GridField f(1, bench.pde(eta_index).fine_extent());
  std::mt19937_64 rng(derive_seed(bench.seed, 0x100 + eta_index, k));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : f.values()) v = normal(rng);
  return f;
}

std::vector<BenchRow> run_bench(const BenchCase& bench, std::ostream* warn) {
  bench.validate();
  const int dim = bench.family == PdeFamily::aniso3d ? 3 : 2;

  std::vector<std::string> solvers;
  std::vector<std::unique_ptr<Smoother>> smoothers;
  for (const auto& name : bench.solvers) {
    if (is_learned_solver(name) && !bench.options.checkpoints.count(name)) {
      if (warn) *warn << "warning: skipping solver '" << name << "': no checkpoint given\n";
      continue;
    }
    if (is_learned_solver(name) && !std::filesystem::exists(bench.options.checkpoints.at(name))) {
      if (warn)
        *warn << "warning: skipping solver '" << name << "': checkpoint "
              << bench.options.checkpoints.at(name) << " not found\n";
      continue;
    }
    solvers.push_back(name);
    smoothers.push_back(make_smoother(name, bench.options, dim, bench.mg));
  }

  const std::size_t nrows = bench.etas.size() * solvers.size();
  std::vector<BenchRow> rows(nrows);
  std::vector<std::exception_ptr> errors(nrows);

  // hierarchies are shared by all solvers of one parameter point
  std::vector<std::unique_ptr<Hierarchy>> hier(bench.etas.size());
  std::vector<std::once_flag> built(bench.etas.size());

  auto run_row = [&](std::size_t idx) {
    try {
      const std::size_t i = idx / solvers.size();
      const std::size_t s = idx % solvers.size();
      std::call_once(built[i], [&] {
        hier[i] = std::make_unique<Hierarchy>(make_hierarchy(bench.pde(i), bench.mg.levels));
      });
      BenchRow& row = rows[idx];
      row.family = bench.family;
      row.eta1 = bench.etas[i].first;
      row.eta2 = bench.etas[i].second;
      row.cells = bench.cells;
      row.solver = solvers[s];
      row.converged = true;
      std::vector<double> its, times;
      for (std::size_t k = 0; k < bench.rhs_count; ++k) {
        const GridField f = bench_rhs(bench, i, k);
        SolveReport rep;
        try {
          rep = solve(*hier[i], f, *smoothers[s], bench.mg).report;
        } catch (const DivergenceError&) {
          rep.converged = false;
        } catch (const SingularError&) {
          rep.converged = false;
        } catch (const NonFiniteError&) {
          rep.converged = false;
        }
        row.converged = row.converged && rep.converged;
        its.push_back(static_cast<double>(rep.iterations));
        times.push_back(rep.wall_seconds);
        row.histories.push_back(std::move(rep.history));
      }
      auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        sd = std::sqrt(var / static_cast<double>(v.size()));
      };
      stats(its, row.iters_mean, row.iters_std);
      stats(times, row.time_mean, row.time_std);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  };

  const std::size_t T = std::max<std::size_t>(1, std::min(bench.threads, nrows));
  if (T <= 1) {
    for (std::size_t idx = 0; idx < nrows; ++idx) run_row(idx);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < T; ++w)
      pool.emplace_back([&] {
        for (std::size_t idx; (idx = next++) < nrows;) run_row(idx);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.family) << ',' << fmt("%.6g", r.eta1) << ',' << fmt("%.6g", r.eta2) << ','
       << r.cells << ',' << r.solver << ',';
    if (r.converged)
      os << fmt("%.2f", r.iters_mean) << ',' << fmt("%.2f", r.iters_std);
    else
      os << "-,-";
    os << ',' << fmt("%.6f", r.time_mean) << ',' << fmt("%.6f", r.time_std) << ','
       << (r.converged ? 1 : 0) << '\n';
  }
}

void write_history_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "solver,eps,theta,rhs,iteration,relative_residual\n";
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.histories.size(); ++k)
      for (std::size_t t = 0; t < r.histories[k].size(); ++t)
        os << r.solver << ',' << fmt("%.6g", r.eta1) << ',' << fmt("%.6g", r.eta2) << ',' << k
           << ',' << t << ',' << fmt("%.10e", r.histories[k][t]) << '\n';
}

}  // namespace metamg
