#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <numbers>

#include "metamg/discretization.hpp"
#include "oracles.hpp"

using namespace metamg;

namespace {

/// Dense P with P e_j = deconv(prolongation, e_j) between two vertex grids.
Eigen::MatrixXd dense_prolongation(const StencilKernel& p, const Extent& coarse) {
  const Sampling s = coarsening_sampling(coarse.dim);
  const Extent fine = upsampled_extent(coarse, s);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fine.size()),
                                            static_cast<Eigen::Index>(coarse.size()));
  for (std::size_t j = 0; j < coarse.size(); ++j) {
    GridField e(1, coarse);
    e.values()[j] = 1.0;
    GridField up(1, fine);
    // explicit zero insertion: coarse (z, y, x) sits on fine (2z+1, 2y+1, 2x+1)
    for (std::size_t z = 0; z < coarse.n[0]; ++z)
      for (std::size_t y = 0; y < coarse.n[1]; ++y)
        for (std::size_t x = 0; x < coarse.n[2]; ++x)
          up.at(0, coarse.dim == 3 ? 2 * z + 1 : 0, 2 * y + 1, 2 * x + 1) = e.at(0, z, y, x);
    m.col(static_cast<Eigen::Index>(j)) = oracle::vec(oracle::correlate(p, up));
  }
  return m;
}

}  // namespace

TEST_SUITE("discretization") {

TEST_CASE("finite-difference stencils at h = 0.5") {
  const StencilKernel dxx = fdm_stencil(FdmOperator::dxx, 0.5);
  CHECK(dxx.taps() == Extent::grid2(1, 3));
  CHECK(dxx.values() == std::vector<double>{4, -8, 4});
  const StencilKernel lap = fdm_stencil(FdmOperator::laplace, 0.5);
  CHECK(lap.values() == std::vector<double>{0, 4, 0, 4, -16, 4, 0, 4, 0});
  const StencilKernel dxy = fdm_stencil(FdmOperator::dxy, 0.5);
  CHECK(dxy.values() == std::vector<double>{1, 0, -1, 0, 0, 0, -1, 0, 1});
  const StencilKernel dyy = fdm_stencil(FdmOperator::dyy, 0.5);
  CHECK(dyy.taps() == Extent::grid2(3, 1));
  CHECK_THROWS_AS(fdm_stencil(FdmOperator::dxx, 0.0), ContractError);
}

TEST_CASE("finite differences are exact on polynomials") {
  // u = x^2 y on a grid of spacing h: dxx = 2y, dxy = 2x
  const double h = 0.25;
  GridField u(1, Extent::grid2(9, 9));
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 9; ++x) u(0, y, x) = std::pow(h * x, 2) * (h * y);
  const GridField dxx = conv(fdm_stencil(FdmOperator::dxx, h), u);
  const GridField dxy = conv(fdm_stencil(FdmOperator::dxy, h), u);
  CHECK(dxx(0, 4, 4) == doctest::Approx(2.0 * h * 4));
  CHECK(dxy(0, 4, 4) == doctest::Approx(2.0 * h * 4));
}

TEST_CASE("Q1 Poisson stencil") {
  const StencilKernel k = q1_stencil_2d(anisotropic_coefficient(1.0, 0.0));
  CHECK(k.center() == doctest::Approx(8.0 / 3.0));
  for (std::size_t i = 0; i < 9; ++i)
    if (i != 4) CHECK(k.values()[i] == doctest::Approx(-1.0 / 3.0));
}

TEST_CASE("Q1 2D stencil matches the tensor-product oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ue(1e-4, 1.0), ut(0.0, std::numbers::pi);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = anisotropic_coefficient(ue(rng), ut(rng));
    const StencilKernel k = q1_stencil_2d(c);
    CHECK(oracle::max_abs_diff(k.values(), oracle::q1_2d(c).values()) < 1e-14);
    CHECK(q1_stencil_2d(c, 0.125).values() == k.values());
  }
}

TEST_CASE("anisotropic coefficient properties") {
  const auto c = anisotropic_coefficient(1.0, 0.7);
  CHECK(c[0][0] == doctest::Approx(1.0));
  CHECK(c[0][1] == doctest::Approx(0.0).epsilon(1e-15));
  const auto d = anisotropic_coefficient(1e-3, 0.4);
  CHECK(d[0][0] + d[1][1] == doctest::Approx(1.0 + 1e-3));
  CHECK(d[0][0] * d[1][1] - d[0][1] * d[1][0] == doctest::Approx(1e-3));
  // theta = 0 leaves the strong direction along x
  const auto e = anisotropic_coefficient(0.01, 0.0);
  CHECK(e[0][0] == 1.0);
  CHECK(e[1][1] == 0.01);
}

TEST_CASE("Q1 stencils are symmetric with zero row sum") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ue(1e-5, 1.0), ut(0.0, std::numbers::pi);
  for (int trial = 0; trial < 10; ++trial) {
    const StencilKernel k = q1_stencil_2d(anisotropic_coefficient(ue(rng), ut(rng)));
    double sum = 0.0;
    for (double v : k.values()) sum += v;
    CHECK(std::abs(sum) < 1e-14);
    for (std::size_t i = 0; i < 9; ++i) CHECK(k.values()[i] == doctest::Approx(k.values()[8 - i]));
  }
  const StencilKernel k3 = q1_stencil_3d({1.0, 0.1, 0.01}, 0.25);
  double sum = 0.0;
  for (std::size_t i = 0; i < 27; ++i) {
    sum += k3.values()[i];
    CHECK(k3.values()[i] == doctest::Approx(k3.values()[26 - i]));
  }
  CHECK(std::abs(sum) < 1e-14);
}

TEST_CASE("Q1 3D stencil matches the oracle and permutes with the coefficients") {
  const std::array<double, 3> eps{1.0, 0.3, 0.02};
  const StencilKernel k = q1_stencil_3d(eps, 0.125);
  CHECK(oracle::max_abs_diff(k.values(), oracle::q1_3d(eps, 0.125).values()) < 1e-15);
  CHECK(q1_stencil_3d({1, 1, 1}, 1.0).center() == doctest::Approx(8.0 / 3.0));
  // swapping eps_x and eps_y transposes the x/y taps
  const StencilKernel s = q1_stencil_3d({eps[1], eps[0], eps[2]}, 0.125);
  for (std::size_t z = 0; z < 3; ++z)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) CHECK(s.at(0, 0, z, y, x) == doctest::Approx(k.at(0, 0, z, x, y)));
  CHECK_THROWS_AS(q1_stencil_3d({1, 0, 1}), ContractError);
}

TEST_CASE("PDE specs validate and build their stencils") {
  PdeSpec p;
  p.eps = 0.01;
  p.theta = 0.3;
  p.cells = 16;
  CHECK(pde_stencil(p).values() == q1_stencil_2d(anisotropic_coefficient(0.01, 0.3)).values());
  CHECK(p.fine_extent() == Extent::grid2(15, 15));
  p.eps = 0.0;
  CHECK_THROWS_AS(p.validate(), ContractError);
  p.eps = 1.0;
  p.cells = 12;
  CHECK_THROWS_AS(p.validate(), ContractError);
  p.cells = 16;
  p.theta = 4.0;
  CHECK_THROWS_AS(p.validate(), ContractError);

  PdeSpec q;
  q.family = PdeFamily::aniso3d;
  q.eps1 = 0.5;
  q.eps2 = 0.1;
  q.cells = 8;
  CHECK(pde_stencil(q).values() == q1_stencil_3d({1.0, 0.5, 0.1}, 0.125).values());
  CHECK(q.fine_extent() == Extent::grid3(7, 7, 7));
}

TEST_CASE("transfer stencils and coarse extents") {
  const TransferPair t = transfer_stencils(2);
  CHECK(t.prolongation.values() == std::vector<double>{0.25, 0.5, 0.25, 0.5, 1, 0.5, 0.25, 0.5, 0.25});
  CHECK(t.restriction.values() == t.prolongation.values());
  const TransferPair t3 = transfer_stencils(3);
  double sum = 0.0;
  for (double v : t3.prolongation.values()) sum += v;
  CHECK(sum == 8.0);
  CHECK(coarse_extent(Extent::grid2(63, 63)) == Extent::grid2(31, 31));
  CHECK(coarse_extent(Extent::grid3(7, 7, 7)) == Extent::grid3(3, 3, 3));
}

TEST_CASE("Galerkin coarse operator of a delta stencil") {
  // R P = (1/4)[1 2 1]^2 sampled: center weight 1 + 4/4 + 4/16 = 2.25
  const TransferPair t = transfer_stencils(2);
  const LevelOperator c = galerkin_coarse({StencilKernel::delta(2), 0}, t.prolongation, t.restriction);
  CHECK(c.level == 1);
  CHECK(c.stencil.center() == doctest::Approx(2.25));
  CHECK(c.stencil.offset_value(0, 0, 0, 0, 1) == doctest::Approx(0.375));
  CHECK(c.stencil.offset_value(0, 0, 0, 1, 1) == doctest::Approx(0.0625));
}

TEST_CASE("Galerkin coarsening reproduces Q1 re-discretization") {
  const TransferPair t2 = transfer_stencils(2);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ue(1e-4, 1.0), ut(0.0, std::numbers::pi);
  for (int trial = 0; trial < 5; ++trial) {
    const StencilKernel k = q1_stencil_2d(anisotropic_coefficient(ue(rng), ut(rng)));
    const LevelOperator c = galerkin_coarse({k, 0}, t2.prolongation, t2.restriction);
    CHECK(oracle::max_abs_diff(c.stencil.padded_to(Extent::grid2(3, 3)).values(), k.values()) < 1e-13);
  }
  // in 3D the stencil scales with h, so the coarse one is twice the fine one
  const TransferPair t3 = transfer_stencils(3);
  const StencilKernel k3 = q1_stencil_3d({1.0, 0.2, 0.05}, 1.0 / 16);
  const LevelOperator c3 = galerkin_coarse({k3, 0}, t3.prolongation, t3.restriction);
  CHECK(oracle::max_abs_diff(c3.stencil.padded_to(Extent::grid3(3, 3, 3)).values(),
                             q1_stencil_3d({1.0, 0.2, 0.05}, 1.0 / 8).values()) < 1e-14);
}

TEST_CASE("Galerkin stencil equals the interior row of dense R A P") {
  std::mt19937_64 rng(14);
  const StencilKernel a = oracle::random_kernel(1, 1, Extent::grid2(3, 3), rng);
  const TransferPair t = transfer_stencils(2);
  const Extent coarse = Extent::grid2(7, 7);
  const Eigen::MatrixXd P = dense_prolongation(t.prolongation, coarse);
  const Eigen::MatrixXd A = oracle::dense_operator(a, Extent::grid2(15, 15));
  const Eigen::MatrixXd rap = P.transpose() * A * P;
  const LevelOperator c = galerkin_coarse({a, 0}, t.prolongation, t.restriction);
  const StencilKernel s = c.stencil.padded_to(Extent::grid2(5, 5));
  const Eigen::Index center = 3 * 7 + 3;
  for (long dy = -2; dy <= 2; ++dy)
    for (long dx = -2; dx <= 2; ++dx)
      CHECK(rap(center, center + dy * 7 + dx) ==
            doctest::Approx(s.offset_value(0, 0, 0, dy, dx)).epsilon(1e-12));
}

TEST_CASE("galerkin_coarse rejects a patch that is too small") {
  const TransferPair t = transfer_stencils(2);
  CHECK_THROWS_AS(galerkin_coarse({q1_stencil_2d(anisotropic_coefficient(1, 0)), 0}, t.prolongation,
                                  t.restriction, 3),
                  ContractError);
}

TEST_CASE("assembled matrix of the 5-point Laplacian on 2x2") {
  const StencilKernel k = StencilKernel::from_rows2({{0, -1, 0}, {-1, 4, -1}, {0, -1, 0}});
  const SparseMatrix m = assemble_matrix(k, Extent::grid2(2, 2));
  const std::vector<double> expect{4, -1, -1, 0, -1, 4, 0, -1, -1, 0, 4, -1, 0, -1, -1, 4};
  CHECK(m.to_dense() == expect);
  CHECK(m.nonzeros() == 12);
}

TEST_CASE("assembled matrix agrees with conv and is SPD for Q1") {
  std::mt19937_64 rng(15);
  const StencilKernel k = q1_stencil_2d(anisotropic_coefficient(0.05, 1.1));
  const Extent e = Extent::grid2(7, 7);
  const SparseMatrix m = assemble_matrix(k, e);
  const GridField v = oracle::random_field(1, e, rng);
  CHECK(oracle::max_abs_diff(m.multiply(v.data()), conv(k, v).values()) < 1e-13);
  const std::vector<double> flat = m.to_dense();
  const Eigen::MatrixXd d =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), 49, 49);
  CHECK((d - d.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((d - oracle::dense_operator(k, e)).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("format_stencil prints every coefficient") {
  const std::string s = format_stencil(q1_stencil_2d(anisotropic_coefficient(1, 0)));
  CHECK(s.find("2.66667") != std::string::npos);
  CHECK(s.find("-0.333333") != std::string::npos);
}

}
