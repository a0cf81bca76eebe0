// Acceptance gate: one PASS/FAIL line per criterion.
// Usage: metamg_acceptance [criterion numbers...]   (default: all)

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <thread>
#include <sstream>
#include <unistd.h>

#include "cli_run.hpp"
#include "fd_check.hpp"
#include "metamg/bench.hpp"
#include "metamg/mgnet.hpp"
#include "metamg/training.hpp"
#include "oracles.hpp"

using namespace metamg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

std::size_t workers() { return std::max<std::size_t>(1, std::min<std::size_t>(8, std::thread::hardware_concurrency())); }

MgConfig paper_cycle() {
  MgConfig c;
  c.levels = 5;
  c.nu = {2, 1, 1, 1, 1};
  c.tolerance = 1e-6;
  c.max_iters = 10000;
  return c;
}

BenchCase bench(std::vector<std::pair<double, double>> etas, std::size_t cells, std::vector<std::string> solvers,
                std::size_t rhs, const MgConfig& mg) {
  BenchCase b;
  b.etas = std::move(etas);
  b.cells = cells;
  b.solvers = std::move(solvers);
  b.rhs_count = rhs;
  b.seed = 2024;
  b.mg = mg;
  b.threads = workers();
  return b;
}

/// Mean iterations; infinity when any rhs failed.
double iters(const BenchRow& r) { return r.converged ? r.iters_mean : std::numeric_limits<double>::infinity(); }

std::string show(double it) { return std::isinf(it) ? std::string("-") : fmt("%.1f", it); }

std::filesystem::path workdir() {
  static const auto dir = [] {
    auto d = std::filesystem::temp_directory_path() / ("metamg_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

// ---------------------------------------------------------------------------

Outcome classical_baselines() {
  const auto rows = run_bench(bench({{1.0, 0.0}}, 256, {"gs", "jacobi"}, 10, paper_cycle()));
  const double gs = iters(rows[0]), jac = iters(rows[1]);
  const bool ok = std::abs(gs - 10.0) <= 2.0 && std::abs(jac - 15.0) <= 3.0;
  return {ok, fmt("Poisson N=256: GS %s (target 10+-2), Jacobi w=2/3 %s (target 15+-3)", show(gs).c_str(),
                  show(jac).c_str())};
}

Outcome anisotropy_degradation() {
  const auto at = run_bench(bench({{1e-2, 0.0}}, 256, {"gs"}, 10, paper_cycle()));
  const double mid = iters(at[0]);
  const bool band = mid >= 0.75 * 253.0 && mid <= 1.25 * 253.0;
  const auto sweep = run_bench(bench({{1.0, 0.0}, {1e-1, 0.0}, {1e-2, 0.0}, {1e-3, 0.0}}, 256, {"gs"}, 3, paper_cycle()));
  bool mono = true;
  std::string counts;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    counts += (i ? ", " : "") + show(iters(sweep[i]));
    if (i > 0) mono = mono && iters(sweep[i]) > iters(sweep[i - 1]);
  }
  return {band && mono, fmt("GS at eps=1e-2: %s (band [189.75, 316.25]); eps 1..1e-3: %s (%s)", show(mid).c_str(),
                            counts.c_str(), mono ? "increasing" : "NOT increasing")};
}

Outcome theorem_invariants() {
  std::size_t violations = 0, checks = 0;
  for (std::size_t n : {16, 32}) {
    TrainConfig tc;
    tc.cells = n;
    tc.levels = n == 16 ? 3 : 4;
    tc.nu = {2, 1, 1};
    tc.eta = EtaDistribution::fixed(1.0);
    tc.seed = 300 + n;
    tc.tasks = 1;
    tc.rhs_per_task = 1;
    const ModelParams theta = init_model(tc, sample_tasks(tc, tc.seed));
    MgConfig mg = tc.mg_config();
    mg.tolerance = 1e-9;
    mg.max_iters = 40;
    PdeSpec pde;
    pde.cells = n;
    const Hierarchy h = make_hierarchy(pde, tc.levels);
    const Eigen::MatrixXd A = oracle::dense_operator(h.op(0).stencil, h.extent(0));
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    for (std::uint64_t k = 0; k < 100; ++k) {
      std::mt19937_64 rng(derive_seed(77, n, k));
      const GridField f = oracle::random_field(1, h.extent(0), rng);
      const Eigen::VectorXd x = llt.solve(oracle::vec(f));
      double prev = std::sqrt(x.dot(A * x));
      meta_mgnet_iterate(h, f, theta, mg, [&](std::size_t t, const GridField& u) {
        if (t == 0) return;
        const Eigen::VectorXd d = x - oracle::vec(u);
        const double e = std::sqrt(std::max(0.0, d.dot(A * d)));
        ++checks;
        // roundoff allowance relative to the starting error only
        if (e > prev + 1e-13 * std::sqrt(x.dot(A * x))) ++violations;
        prev = e;
      });
    }
  }

  // Assumption 2 on dense operators: B = G (G^T A G)^{-1} G^T for a network basis
  double sym = 0.0, psd = 0.0, proj = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    TrainConfig tc;
    tc.cells = 8;
    tc.levels = 2;
    tc.nu = {1};
    tc.seed = 400 + trial;
    tc.tasks = 1;
    tc.rhs_per_task = 1;
    tc.eta.theta_hi = std::numbers::pi;
    const auto tasks = sample_tasks(tc, tc.seed);
    const ModelParams theta = init_model(tc, tasks);
    const LevelOperator a{pde_stencil(tasks[0].pde), 0};
    const Extent e = tasks[0].pde.fine_extent();
    const SubspaceBasis g = meta_nn_sc(tasks[0].rhs[0], a.stencil, theta);
    const auto N = static_cast<Eigen::Index>(e.size());
    Eigen::MatrixXd B(N, N);
    for (Eigen::Index j = 0; j < N; ++j) {
      GridField ej(1, e);
      ej.values()[static_cast<std::size_t>(j)] = 1.0;
      B.col(j) = oracle::vec(sc_apply(a, g, ej));
    }
    const Eigen::MatrixXd A = oracle::dense_operator(a.stencil, e);
    const double scale = B.cwiseAbs().maxCoeff();
    sym = std::max(sym, (B - B.transpose()).cwiseAbs().maxCoeff() / scale);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (B + B.transpose()));
    psd = std::max(psd, std::max(0.0, -es.eigenvalues().minCoeff()) / scale);
    proj = std::max(proj, (B * A * B - B).cwiseAbs().maxCoeff() / scale);
  }
  const bool ok = violations == 0 && sym < 1e-9 && psd < 1e-9 && proj < 1e-9;
  return {ok, fmt("A-norm monotonicity: %zu violations in %zu iterations (200 rhs); B symmetry %.1e, "
                  "min eigenvalue %.1e, |BAB-B| %.1e (relative, dense 49x49)",
                  violations, checks, sym, -psd, proj)};
}

Outcome subspace_exactness() {
  std::mt19937_64 rng(5005);
  std::uniform_real_distribution<double> ue(-5.0, 0.0), ut(0.0, std::numbers::pi);
  std::uniform_int_distribution<int> side(2, 7), cols(1, 10);
  double exact = 0.0, orth = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Extent e = Extent::grid2(static_cast<std::size_t>(side(rng)), static_cast<std::size_t>(side(rng)));
    const LevelOperator a{q1_stencil_2d(anisotropic_coefficient(std::pow(10.0, ue(rng)), ut(rng))), 0};
    const GridField r = oracle::random_field(1, e, rng);
    const Eigen::MatrixXd A = oracle::dense_operator(a.stencil, e);

    SubspaceBasis full;
    for (std::size_t i = 0; i < e.size(); ++i) {
      GridField v(1, e);
      v.values()[i] = 1.0;
      full.vectors.push_back(v);
    }
    const Eigen::VectorXd x = A.llt().solve(oracle::vec(r));
    exact = std::max(exact, (oracle::vec(sc_apply(a, full, r)) - x).cwiseAbs().maxCoeff() / x.cwiseAbs().maxCoeff());

    SubspaceBasis g;
    const int L = std::min<int>(cols(rng), static_cast<int>(e.size()));
    for (int i = 0; i < L; ++i) g.vectors.push_back(oracle::random_field(1, e, rng));
    const GridField res = r - conv(a.stencil, sc_apply(a, g, r));
    for (const auto& c : g.vectors) orth = std::max(orth, std::abs(dot(c, res)) / (norm2(c) * norm2(r)));
  }
  return {exact < 1e-10 && orth < 1e-10,
          fmt("500 instances: full-basis error %.1e, max |g^T (r - A e)| / (|g||r|) %.1e (limit 1e-10)", exact, orth)};
}

Outcome galerkin_consistency() {
  std::mt19937_64 rng(6006);
  std::uniform_real_distribution<double> ue(-5.0, 0.0), ut(0.0, std::numbers::pi);
  const TransferPair t2 = transfer_stencils(2), t3 = transfer_stencils(3);
  double dev2 = 0.0, dev3 = 0.0;
  for (int i = 0; i < 20; ++i) {
    const StencilKernel k = q1_stencil_2d(anisotropic_coefficient(std::pow(10.0, ue(rng)), ut(rng)));
    LevelOperator op{k, 0};
    for (int l = 0; l < 3; ++l) {
      op = galerkin_coarse(op, t2.prolongation, t2.restriction);
      const StencilKernel c = op.stencil.padded_to(Extent::grid2(3, 3));
      dev2 = std::max(dev2, oracle::scaled_deviation(c, k) / oracle::max_abs(k.values()));
    }
  }
  for (int i = 0; i < 20; ++i) {
    const std::array<double, 3> eps{1.0, std::pow(10.0, ue(rng)), std::pow(10.0, ue(rng))};
    const StencilKernel fine = q1_stencil_3d(eps, 1.0 / 16);
    const StencilKernel direct = q1_stencil_3d(eps, 1.0 / 8);
    const LevelOperator c = galerkin_coarse({fine, 0}, t3.prolongation, t3.restriction);
    const StencilKernel cp = c.stencil.padded_to(Extent::grid3(3, 3, 3));
    dev3 = std::max(dev3, oracle::scaled_deviation(cp, direct) / oracle::max_abs(direct.values()));
  }
  return {dev2 <= 1e-12 && dev3 <= 1e-12,
          fmt("max scaled deviation 2D %.1e (20 (eps,theta), 3 coarsenings), 3D %.1e (20 eps pairs)", dev2, dev3)};
}

Outcome gradient_checks() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  auto record = [&](const std::string& name, const fdcheck::Result& r) {
    if (worst_name.empty() || r.rel_error >= worst) {
      worst = r.rel_error;
      worst_name = name;
    }
  };
  std::mt19937_64 rng(7007);
  auto fill = [&](ParamTensor& p) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : p.values) v = u(rng);
  };
  auto shifted = [](ad::Tape& t, ad::Var y, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    std::normal_distribution<double> n;
    std::vector<double> c(t.value(y).size());
    for (double& v : c) v = n(r);
    return ad::sum_squares(t, ad::add(t, y, t.constant(c)));
  };
  const Extent e = Extent::grid2(7, 7);
  const StencilKernel a = q1_stencil_2d(anisotropic_coefficient(0.05, 0.7));

  {
    ModelParams p;
    p.add("a", {e.size()});
    p.add("b", {e.size()});
    p.add("w", {5, e.size()});
    p.add("c", {5});
    for (auto& t : p.tensors()) fill(t);
    record("elementwise/linear/normalize/pool", fdcheck::check(p, [&](ad::Tape& t, ModelParams& m) {
             const ad::Var x = t.parameter(m.get("a")), y = t.parameter(m.get("b"));
             const ad::Var s = ad::add(t, ad::scale(t, x, 0.7), ad::sub(t, ad::relu(t, y), x));
             const ad::Var l = ad::linear(t, t.parameter(m.get("w")), t.parameter(m.get("c")), s, 5, e.size());
             const ad::Var pool = ad::avg_pool(t, ad::normalize(t, y), e, 3);
             return shifted(t, ad::concat(t, {ad::slice(t, s, 2, 10), l, pool}), 1);
           }));
  }
  {
    const Sampling s = coarsening_sampling(2);
    const kernels::ConvShape shape{3, 2, Extent::grid2(3, 3), e, e, Sampling{}};
    const TransferPair tr = transfer_stencils(2);
    ModelParams p;
    p.add("k", {3, 2, 3, 3});
    p.add("x", {2 * e.size()});
    for (auto& t : p.tensors()) fill(t);
    record("conv/restrict/prolong", fdcheck::check(p, [&](ad::Tape& t, ModelParams& m) {
             const ad::Var y = ad::conv(t, t.parameter(m.get("k")), t.parameter(m.get("x")), shape);
             const ad::Var y0 = ad::slice(t, y, 0, e.size());
             const ad::Var rc = ad::conv_fixed(t, tr.restriction, ad::conv_fixed(t, a, y0, e), e, s);
             return shifted(t, ad::add(t, ad::deconv_fixed(t, tr.prolongation, rc, coarse_extent(e), s), y0), 2);
           }));
  }
  {
    ModelParams p;
    p.add("g", {4 * e.size()});
    p.add("r", {e.size()});
    for (auto& t : p.tensors()) fill(t);
    record("subspace correction", fdcheck::check(p, [&](ad::Tape& t, ModelParams& m) {
             return shifted(t, ad::subspace_correction(t, t.parameter(m.get("g")), t.parameter(m.get("r")), 4, a, e), 3);
           }));
  }
  {
    const auto solver = std::make_shared<const CoarseSolver>(assemble_matrix(a, Extent::grid2(3, 3)));
    ModelParams p;
    p.add("b", {9});
    fill(p.get("b"));
    record("coarse solve", fdcheck::check(p, [&](ad::Tape& t, ModelParams& m) {
             return shifted(t, ad::coarse_solve(t, t.parameter(m.get("b")), solver), 4);
           }));
  }
  for (ModelKind kind : {ModelKind::pde_mgnet, ModelKind::meta_sc, ModelKind::meta_direct}) {
    TrainConfig tc;
    tc.model = kind;
    tc.cells = 8;
    tc.levels = 2;
    tc.nu = {2};
    tc.taps = 3;
    tc.hidden = 16;
    tc.tasks = 1;
    tc.rhs_per_task = 1;
    tc.seed = 8;
    tc.eta.inv_eps_lo = tc.eta.inv_eps_hi = 1.0;
    const auto tasks = sample_tasks(tc, tc.seed);
    ModelParams p = init_model(tc, tasks);
    const Hierarchy h = make_hierarchy(tasks[0].pde, 2);
    const GridField& f = tasks[0].rhs[0];
    const MgConfig mg = tc.mg_config();
    record("T=1 loss " + to_string(kind), fdcheck::check(
                                                p,
                                                [&](ad::Tape& t, ModelParams& m) {
                                                  TapedModel model(t, m, &m);
                                                  const ad::Var fv = t.constant(f.values());
                                                  const ad::Var u = taped_cycle(t, fv, h, model, mg);
                                                  const ad::Var r =
                                                      ad::sub(t, fv, ad::conv_fixed(t, h.op(0).stencil, u, h.extent(0)));
                                                  return ad::scale(t, ad::sum_squares(t, r), 1.0 / dot(f, f));
                                                },
                                                1e-6, 256));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-5 && secs < 60.0,
          fmt("worst relative error %.1e (%s) over 7 checks on 7x7 grids, %.1f s", worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// Learned smoothers at desk scale.

TrainConfig desk_config(ModelKind kind, double lo, double hi) {
  TrainConfig c;
  c.model = kind;
  c.cells = 64;
  c.levels = 4;
  c.nu = {2, 1, 1};
  c.tasks = 20;
  c.rhs_per_task = 16;
  c.batch = 16;
  c.epochs = 10;
  c.lr = 0.02;
  c.taps = 7;
  c.hidden = 100;
  c.seed = 0;
  c.threads = 1;
  c.eta.inv_eps_lo = lo;
  c.eta.inv_eps_hi = hi;
  return c;
}

std::map<std::string, std::filesystem::path> g_ckpt;

std::filesystem::path trained(const std::string& tag, ModelKind kind, double lo, double hi) {
  if (auto it = g_ckpt.find(tag); it != g_ckpt.end()) return it->second;
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(desk_config(kind, lo, hi));
  const auto path = workdir() / (tag + ".ckpt");
  save_checkpoint(r.params, path);
  std::printf("  trained %s on lg(1/eps) in [%g, %g]: loss %.4f -> %.4f in %.0f s\n", tag.c_str(), lo, hi,
              r.epoch_loss.front(), r.epoch_loss.back(),
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  std::fflush(stdout);
  return g_ckpt[tag] = path;
}

MgConfig desk_cycle() {
  MgConfig c;
  c.levels = 4;
  c.nu = {2, 1, 1};
  c.tolerance = 1e-6;
  c.max_iters = 10000;
  return c;
}

Outcome desk_learning() {
  const auto sc = trained("meta_sc_mixed", ModelKind::meta_sc, 0.0, 5.0);
  const auto mg = trained("mgnet_mixed", ModelKind::pde_mgnet, 0.0, 5.0);
  const auto dir = trained("meta_direct_mixed", ModelKind::meta_direct, 0.0, 5.0);
  BenchCase b = bench({{1.0, 0}, {1e-1, 0}, {1e-2, 0}, {1e-3, 0}, {1e-4, 0}}, 64, {"meta_sc", "jacobi", "mgnet"}, 10,
                      desk_cycle());
  b.options.checkpoints = {{"meta_sc", sc}, {"mgnet", mg}, {"meta_direct", dir}};
  const auto rows = run_bench(b);
  BenchCase d = bench({{1e-2, 0}}, 64, {"meta_direct"}, 10, desk_cycle());
  d.options = b.options;
  const double bd = iters(run_bench(d)[0]);

  bool ok = true;
  std::string table;
  for (std::size_t i = 0; i < b.etas.size(); ++i) {
    const double s = iters(rows[3 * i]), j = iters(rows[3 * i + 1]), m = iters(rows[3 * i + 2]);
    const double eps = b.etas[i].first;
    const bool row_ok = std::isfinite(s) && s < j && (eps > 1e-2 || s < m);
    ok = ok && row_ok;
    table += fmt("%seps=%g: sc %s jac %s mgnet %s", i ? "; " : "", eps, show(s).c_str(), show(j).c_str(),
                 show(m).c_str());
  }
  const double s2 = iters(rows[6]);
  ok = ok && s2 < bd;
  return {ok, table + fmt("; direct at eps=1e-2 %s", show(bd).c_str())};
}

Outcome ood_ordering() {
  const auto narrow = trained("meta_sc_2_3", ModelKind::meta_sc, 2.0, 3.0);
  const auto mg = trained("mgnet_mixed", ModelKind::pde_mgnet, 0.0, 5.0);
  BenchCase b = bench({{1.0, 0}, {1e-4, 0}}, 64, {"meta_sc", "mgnet"}, 10, desk_cycle());
  b.options.checkpoints = {{"meta_sc", narrow}, {"mgnet", mg}};
  const auto rows = run_bench(b);
  const double s1 = iters(rows[0]), s4 = iters(rows[2]), m4 = iters(rows[3]);
  const bool ok = std::isfinite(s1) && std::isfinite(s4) && (!std::isfinite(m4) || m4 > 5.0 * s4);
  return {ok, fmt("meta_sc trained on [2,3]: eps=1 %s, eps=1e-4 %s; mixed PDE-MgNet at eps=1e-4 %s (needs > %.0f or -)",
                  show(s1).c_str(), show(s4).c_str(), show(m4).c_str(), 5.0 * s4)};
}

std::string strip_times(const std::string& csv) {
  std::stringstream in(csv), out;
  for (std::string line; std::getline(in, line);) {
    std::stringstream ls(line);
    std::string f;
    for (int i = 0; std::getline(ls, f, ','); ++i)
      if (i != 7 && i != 8) out << f << ',';
    out << '\n';
  }
  return out.str();
}

Outcome determinism() {
  const auto dir = workdir();
  // a small learned model so the check does not depend on other criteria
  const std::string cfg = (dir / "tiny.cfg").string();
  {
    std::ofstream os(cfg);
    os << "[train]\nmodel = meta_sc\nn = 16\nlevels = 3\nnu = 2,1\nbatch = 4\nepochs = 2\ntasks = 2\n"
          "rhs_per_task = 4\ntaps = 3\nhidden = 8\nseed = 5\n[eta]\ninv_eps = 0,3\n";
  }
  const auto c1 = dir / "tiny1.ckpt", c2 = dir / "tiny2.ckpt";
  const int t1 = cli::run("train --quiet --config " + cfg + " --out " + c1.string()).code;
  const int t2 = cli::run("train --quiet --config " + cfg + " --out " + c2.string()).code;
  const bool same_ckpt = t1 == 0 && t2 == 0 && cli::slurp(c1) == cli::slurp(c2);

  const std::string args = "bench --n 16 --levels 3 --nu 2,1 --eps 1,1e-2,1e-4 --theta 0,1 --solvers "
                           "gs,jacobi,krylov,line_gs_x,meta_sc --rhs-count 3 --seed 17 --meta-sc-ckpt " +
                           c1.string() + " --out ";
  const auto o1 = dir / "b1.csv", o2 = dir / "b2.csv";
  const int b1 = cli::run(args + o1.string()).code;
  const int b2 = cli::run(args + o2.string()).code;
  const std::string s1 = strip_times(cli::slurp(o1)), s2 = strip_times(cli::slurp(o2));
  const std::size_t rows = static_cast<std::size_t>(std::count(s1.begin(), s1.end(), '\n'));
  const bool same_csv = b1 == 0 && b2 == 0 && s1 == s2 && rows == 31;
  return {same_ckpt && same_csv, fmt("train twice: checkpoints %s; bench twice (%zu rows): CSV %s", same_ckpt ? "identical" : "DIFFER",
                                     rows > 0 ? rows - 1 : 0, same_csv ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"classical multigrid baselines", classical_baselines},
      {"anisotropy degradation", anisotropy_degradation},
      {"energy-norm monotonicity and smoother properties", theorem_invariants},
      {"subspace-correction exactness", subspace_exactness},
      {"Galerkin consistency", galerkin_consistency},
      {"gradient correctness", gradient_checks},
      {"desk-scale learning ordering", desk_learning},
      {"out-of-distribution ordering", ood_ordering},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::filesystem::remove_all(workdir());
  return failed == 0 ? 0 : 1;
}
