#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "scm/modal.hpp"
#include "support/oracles.hpp"

using scm::CoefficientMethod;
using scm::EigenMode;
using scm::EvolutionKind;
using scm::ModalBasis;
using scm::ModalCoefficients;
using scm::SpectrumRequest;

namespace {

struct Fixture {
  scm::ReactorState state;
  scm::TriMesh mesh;
  std::unique_ptr<scm::FeSpace> space;
  scm::BlockOperator op;
  ModalBasis basis;

  Fixture(int n_modes, bool adjoint, double tol = 1e-11) {
    state = oracle::vver_state({1, 2, 4, 5}, 0.5);
    mesh = scm::build_mesh(oracle::mixed_layout(), 6);
    space = std::make_unique<scm::FeSpace>(mesh, 1);
    op = scm::assemble_block_system(state, *space);
    SpectrumRequest req;
    req.n_modes = n_modes;
    req.tol = tol;
    auto modes = scm::solve_alpha(op, req);
    basis.state_label = "fixture";
    basis.modes = std::move(modes);
    basis.n_scalar = op.n_scalar;
    basis.n_groups = op.n_groups;
    basis.n_precursors = op.n_precursors;
    basis.operator_b = std::make_shared<scm::CsrMatrix>(op.b);
    if (adjoint) {
      req.which = SpectrumRequest::Which::adjoint;
      basis.adjoint_modes = scm::solve_alpha(op, req);
    }
    basis.validate();
  }
};

}  // namespace

TEST_CASE("biorthogonal projection of an eigenvector is a unit coefficient", "[modal]") {
  Fixture fx(6, true);
  const auto& v1 = fx.basis.modes[0];
  REQUIRE(v1.is_real());
  auto coeff = scm::project_biorthogonal(v1.vec_re, fx.basis);
  REQUIRE(coeff.b[0] == Catch::Approx(1.0).margin(1e-10));
  for (int i = 1; i < fx.basis.n_modes(); ++i)
    REQUIRE(std::abs(coeff.b[i]) <= 1e-10);
}

TEST_CASE("biorthogonal projection recovers a 2-3 combination of real modes", "[modal]") {
  Fixture fx(8, true);
  int i1 = -1, i2 = -1;
  for (int i = 0; i < fx.basis.n_modes(); ++i)
    if (fx.basis.modes[i].is_real()) {
      if (i1 < 0) i1 = i;
      else if (i2 < 0) i2 = i;
    }
  REQUIRE(i2 >= 0);
  Eigen::VectorXd u0 = 2.0 * fx.basis.modes[i1].vec_re + 3.0 * fx.basis.modes[i2].vec_re;
  auto coeff = scm::project_biorthogonal(u0, fx.basis);
  for (int i = 0; i < fx.basis.n_modes(); ++i) {
    const double expect = i == i1 ? 2.0 : (i == i2 ? 3.0 : 0.0);
    REQUIRE(coeff.b[i] == Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("biorthogonal projection needs the adjoint set", "[modal]") {
  Fixture fx(4, false);
  Eigen::VectorXd u0 = Eigen::VectorXd::Ones(fx.op.size());
  REQUIRE_THROWS_AS(scm::project_biorthogonal(u0, fx.basis), scm::UsageError);
}

TEST_CASE("least squares recovers exactly representable precursor data", "[modal]") {
  Fixture fx(6, false);
  Eigen::VectorXd b_true(fx.basis.n_modes());
  b_true << 0.5, -1.0, 2.0, 0.0, 1.5, -0.25;
  Eigen::VectorXd u0c = Eigen::VectorXd::Zero(fx.basis.precursor_size());
  for (int i = 0; i < fx.basis.n_modes(); ++i)
    u0c += b_true[i] * fx.basis.modes[i].representative().segment(
                           fx.basis.precursor_offset(), fx.basis.precursor_size());
  auto coeff = scm::project_least_squares(u0c, fx.basis);
  REQUIRE((coeff.b - b_true).cwiseAbs().maxCoeff() <= 1e-10);
  REQUIRE(coeff.ls_residual <= 1e-10 * u0c.norm());
}

TEST_CASE("single-mode least squares is the explicit quotient", "[modal]") {
  Fixture fx(1, false);
  ModalBasis basis = fx.basis;
  basis.modes.resize(1);
  std::mt19937 rng(5);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u0c(basis.precursor_size());
  for (int i = 0; i < u0c.size(); ++i) u0c[i] = dist(rng);
  auto coeff = scm::project_least_squares(u0c, basis);
  Eigen::VectorXd c1 = basis.modes[0].representative().segment(basis.precursor_offset(),
                                                               basis.precursor_size());
  REQUIRE(coeff.b[0] == Catch::Approx(c1.dot(u0c) / c1.dot(c1)).epsilon(1e-13));
}

TEST_CASE("least squares matches the dense pseudoinverse oracle", "[modal]") {
  Fixture fx(5, false);
  std::mt19937 rng(9);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u0c(fx.basis.precursor_size());
  for (int i = 0; i < u0c.size(); ++i) u0c[i] = dist(rng);
  auto coeff = scm::project_least_squares(u0c, fx.basis);

  Eigen::MatrixXd c(fx.basis.precursor_size(), fx.basis.n_modes());
  for (int i = 0; i < fx.basis.n_modes(); ++i)
    c.col(i) = fx.basis.modes[i].representative().segment(fx.basis.precursor_offset(),
                                                          fx.basis.precursor_size());
  Eigen::VectorXd ref =
      c.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(u0c);
  REQUIRE((coeff.b - ref).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("rank-deficient least squares is reported", "[modal]") {
  Fixture fx(2, false);
  ModalBasis basis = fx.basis;
  basis.modes[1] = basis.modes[0];  // duplicated basis member
  basis.modes[1].kind = EigenMode::Kind::real;
  basis.modes[0].kind = EigenMode::Kind::real;
  Eigen::VectorXd u0c = Eigen::VectorXd::Ones(basis.precursor_size());
  REQUIRE_THROWS_AS(scm::project_least_squares(u0c, basis), scm::NumericError);
}

TEST_CASE("orthogonal projection equals least squares for orthonormal blocks", "[modal]") {
  // synthetic basis with orthonormal precursor blocks
  ModalBasis basis;
  basis.n_scalar = 4;
  basis.n_groups = 1;
  basis.n_precursors = 1;
  for (int i = 0; i < 3; ++i) {
    EigenMode m;
    m.value = {static_cast<double>(i), 0.0};
    m.kind = EigenMode::Kind::real;
    m.vec_re = Eigen::VectorXd::Zero(8);
    m.vec_re[i] = 1.0;      // flux block
    m.vec_re[4 + i] = 1.0;  // orthonormal precursor block
    basis.modes.push_back(m);
  }
  Eigen::VectorXd u0c(4);
  u0c << 0.3, -1.2, 0.7, 0.1;
  auto a = scm::project_orthogonal_approx(u0c, basis);
  auto b = scm::project_least_squares(u0c, basis);
  REQUIRE((a.b - b.b).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("orthogonal projection error is bounded by the gram off-diagonal", "[modal]") {
  Fixture fx(6, false);
  Eigen::MatrixXd g = scm::gram_matrix(fx.basis.modes, fx.basis.precursor_offset(),
                                       fx.basis.precursor_size());
  double offdiag = 0.0;
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < g.cols(); ++j)
      if (i != j) offdiag = std::max(offdiag, std::abs(g(i, j)));

  const int pick = 2;
  Eigen::VectorXd u0c = fx.basis.modes[pick].representative().segment(
      fx.basis.precursor_offset(), fx.basis.precursor_size());
  auto coeff = scm::project_orthogonal_approx(u0c, fx.basis);
  REQUIRE(std::abs(coeff.b[pick] - 1.0) <= offdiag + 1e-12);
  for (int i = 0; i < fx.basis.n_modes(); ++i) {
    if (i == pick) continue;
    // off-mode leakage is controlled by the mutual precursor overlap
    Eigen::VectorXd ci = fx.basis.modes[i].representative().segment(
        fx.basis.precursor_offset(), fx.basis.precursor_size());
    REQUIRE(std::abs(coeff.b[i]) <=
            (offdiag + 1e-12) * u0c.norm() / ci.norm() + 1e-12);
  }
}

TEST_CASE("evolution at the origin reproduces the projected vector", "[modal]") {
  Fixture fx(1, false, 1e-11);
  // full basis: every eigenvector of the tiny pencil
  SpectrumRequest req;
  req.n_modes = fx.op.size();
  req.tol = 1e-11;
  ModalBasis basis = fx.basis;
  basis.modes = scm::solve_alpha(fx.op, req);
  req.which = SpectrumRequest::Which::adjoint;
  basis.adjoint_modes = scm::solve_alpha(fx.op, req);

  std::mt19937 rng(21);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u0(fx.op.size());
  for (int i = 0; i < u0.size(); ++i) u0[i] = dist(rng);

  auto coeff = scm::project_biorthogonal(u0, basis, 0.25);
  Eigen::VectorXd back = scm::evolve(basis, coeff, 0.25, EvolutionKind::exact_complex);

  // the evolved vector at the origin IS the projected combination
  Eigen::VectorXd combo = Eigen::VectorXd::Zero(u0.size());
  for (int i = 0; i < basis.n_modes(); ++i)
    combo += coeff.b[i] * basis.modes[i].representative();
  REQUIRE((back - combo).norm() <= 1e-12 * std::max(1.0, combo.norm()));

  // with the full basis the projection also approximates u0 itself, up to
  // the conditioning of the clustered eigenbasis
  REQUIRE((back - u0).norm() <= 1e-5 * u0.norm());
}

TEST_CASE("a single real mode decays exponentially", "[modal]") {
  Fixture fx(1, false);
  ModalBasis basis = fx.basis;
  basis.modes.resize(1);
  REQUIRE(basis.modes[0].is_real());
  ModalCoefficients coeff;
  coeff.b = Eigen::VectorXd::Ones(1);
  coeff.t_origin = 0.0;
  const double alpha = basis.modes[0].value.real();
  Eigen::VectorXd u1 = scm::evolve(basis, coeff, 0.3, EvolutionKind::exact_complex);
  Eigen::VectorXd u2 = scm::evolve(basis, coeff, 0.7, EvolutionKind::exact_complex);
  const double expect = std::exp(-alpha * 0.4);
  for (int i = 0; i < u1.size(); ++i)
    if (std::abs(u1[i]) > 1e-8)
      REQUIRE(u2[i] / u1[i] == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("full-basis exact evolution matches the matrix exponential", "[modal][oracle]") {
  // 21 dofs: single assembly, kappa=6, p=1
  scm::ReactorState state = oracle::vver_state({1, 5}, 0.5);
  scm::TriMesh mesh = scm::build_mesh(oracle::pair_layout(1, 5), 6);
  scm::FeSpace space(mesh, 1);
  scm::BlockOperator op = scm::assemble_block_system(state, space);
  REQUIRE(op.size() <= 60);

  SpectrumRequest req;
  req.n_modes = op.size();
  req.tol = 1e-11;
  req.polish = true;
  ModalBasis basis;
  basis.modes = scm::solve_alpha(op, req);
  req.which = SpectrumRequest::Which::adjoint;
  req.polish = false;
  basis.adjoint_modes = scm::solve_alpha(op, req);
  basis.n_scalar = op.n_scalar;
  basis.n_groups = op.n_groups;
  basis.n_precursors = op.n_precursors;
  basis.operator_b = std::make_shared<scm::CsrMatrix>(op.b);

  std::mt19937 rng(31);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u0(op.size());
  for (int i = 0; i < u0.size(); ++i) u0[i] = dist(rng);

  auto coeff = scm::project_biorthogonal(u0, basis);
  const double t = 0.5;
  Eigen::VectorXd modal = scm::evolve(basis, coeff, t, EvolutionKind::exact_complex);
  Eigen::VectorXd dense = oracle::expm_apply(op.a.to_dense(), op.b.to_dense(), u0, t);
  REQUIRE((modal - dense).norm() <= 1e-8 * dense.norm());
}

TEST_CASE("evolution is linear in the coefficients", "[modal]") {
  Fixture fx(6, false);
  std::mt19937 rng(41);
  std::normal_distribution<double> dist;
  ModalCoefficients c1, c2, sum;
  c1.b.resize(fx.basis.n_modes());
  c2.b.resize(fx.basis.n_modes());
  for (int i = 0; i < fx.basis.n_modes(); ++i) {
    c1.b[i] = dist(rng);
    c2.b[i] = dist(rng);
  }
  sum.b = c1.b + c2.b;
  for (auto kind : {EvolutionKind::exact_complex, EvolutionKind::real_part_only}) {
    Eigen::VectorXd u1 = scm::evolve(fx.basis, c1, 0.8, kind);
    Eigen::VectorXd u2 = scm::evolve(fx.basis, c2, 0.8, kind);
    Eigen::VectorXd us = scm::evolve(fx.basis, sum, 0.8, kind);
    REQUIRE((us - u1 - u2).norm() <= 1e-12 * (u1.norm() + u2.norm()));
  }
}

TEST_CASE("semigroup property of full-basis exact evolution", "[modal]") {
  scm::ReactorState state = oracle::vver_state({1, 5}, 0.5);
  scm::TriMesh mesh = scm::build_mesh(oracle::pair_layout(1, 5), 6);
  scm::FeSpace space(mesh, 1);
  scm::BlockOperator op = scm::assemble_block_system(state, space);
  SpectrumRequest req;
  req.n_modes = op.size();
  req.tol = 1e-11;
  ModalBasis basis;
  basis.modes = scm::solve_alpha(op, req);
  req.which = SpectrumRequest::Which::adjoint;
  basis.adjoint_modes = scm::solve_alpha(op, req);
  basis.n_scalar = op.n_scalar;
  basis.n_groups = op.n_groups;
  basis.n_precursors = op.n_precursors;
  basis.operator_b = std::make_shared<scm::CsrMatrix>(op.b);

  std::mt19937 rng(51);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u0(op.size());
  for (int i = 0; i < u0.size(); ++i) u0[i] = dist(rng);

  auto c0 = scm::project_biorthogonal(u0, basis, 0.0);
  Eigen::VectorXd direct = scm::evolve(basis, c0, 0.4, EvolutionKind::exact_complex);
  Eigen::VectorXd mid = scm::evolve(basis, c0, 0.15, EvolutionKind::exact_complex);
  auto c1 = scm::project_biorthogonal(mid, basis, 0.15);
  Eigen::VectorXd two_leg = scm::evolve(basis, c1, 0.4, EvolutionKind::exact_complex);
  REQUIRE((two_leg - direct).norm() <= 1e-8 * direct.norm());
}

TEST_CASE("real-part evolution divergence is first order in Im(alpha)", "[modal]") {
  // synthetic pencil with one real mode and one pair of small imaginary part
  ModalBasis basis;
  basis.n_scalar = 2;
  basis.n_groups = 1;
  basis.n_precursors = 1;
  EigenMode real_mode;
  real_mode.value = {0.5, 0.0};
  real_mode.kind = EigenMode::Kind::real;
  real_mode.vec_re = Eigen::VectorXd::Zero(4);
  real_mode.vec_re << 1.0, 0.0, 0.4, 0.0;
  const double im = 2e-3;
  EigenMode p1, p2;
  p1.value = {0.9, -im};
  p1.kind = EigenMode::Kind::pair_first;
  p1.vec_re = Eigen::VectorXd::Zero(4);
  p1.vec_re << 0.0, 1.0, 0.0, 0.3;
  p1.vec_im = Eigen::VectorXd::Zero(4);
  p1.vec_im << -0.1, 0.0, -0.2, 0.0;
  p2 = p1;
  p2.value = {0.9, im};
  p2.kind = EigenMode::Kind::pair_second;
  p2.vec_im = -p1.vec_im;
  basis.modes = {real_mode, p1, p2};

  ModalCoefficients coeff;
  coeff.b.resize(3);
  coeff.b << 1.0, 0.7, -0.4;
  const double t = 0.5;  // im * t = 1e-3: first-order regime
  Eigen::VectorXd exact = scm::evolve(basis, coeff, t, EvolutionKind::exact_complex);
  Eigen::VectorXd approx = scm::evolve(basis, coeff, t, EvolutionKind::real_part_only);
  double bound = 0.0;
  for (int i = 1; i <= 2; ++i)
    bound += std::abs(coeff.b[i]) * im * t *
             std::exp(-0.9 * t) *
             scm::detail::norm2(basis.modes[i].vec_re, basis.modes[i].vec_im);
  REQUIRE((exact - approx).norm() <= 1.5 * bound);
  REQUIRE((exact - approx).norm() >= 1e-3 * bound);  // the bound is not vacuous
}

TEST_CASE("evolution guards against exponent overflow", "[modal]") {
  ModalBasis basis;
  basis.n_scalar = 1;
  basis.n_groups = 1;
  basis.n_precursors = 0;
  EigenMode m;
  m.value = {-800.0, 0.0};
  m.kind = EigenMode::Kind::real;
  m.vec_re = Eigen::VectorXd::Ones(1);
  basis.modes = {m};
  ModalCoefficients coeff;
  coeff.b = Eigen::VectorXd::Ones(1);
  REQUIRE_THROWS_AS(scm::evolve(basis, coeff, 1.0, EvolutionKind::exact_complex),
                    scm::NumericError);
  REQUIRE_THROWS_AS(scm::evolve(basis, coeff, 1.0, EvolutionKind::real_part_only),
                    scm::NumericError);
  // strong decay underflows to zero without an error
  basis.modes[0].value = {1.0e6, 0.0};
  Eigen::VectorXd u = scm::evolve(basis, coeff, 1.0, EvolutionKind::exact_complex);
  REQUIRE(u[0] == 0.0);
}

TEST_CASE("evolution rejects times before the origin", "[modal]") {
  Fixture fx(2, false);
  ModalCoefficients coeff;
  coeff.b = Eigen::VectorXd::Zero(fx.basis.n_modes());
  coeff.t_origin = 1.0;
  REQUIRE_THROWS_AS(scm::evolve(fx.basis, coeff, 0.5, EvolutionKind::exact_complex),
                    scm::UsageError);
}
