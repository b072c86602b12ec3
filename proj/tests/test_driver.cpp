#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "scm/driver.hpp"
#include "support/oracles.hpp"

using scm::CoefficientMethod;
using scm::EvolutionKind;
using scm::Scenario;
using scm::ScmContext;
using scm::StateLibrary;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("scmkin_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const std::string p = (path / name).string();
    std::ofstream os(p);
    os << content;
    return p;
  }
};

std::string write_pair_state(const TempDir& dir, const std::string& name = "pair.state") {
  scm::ReactorState st = oracle::vver_state({1, 5}, 0.5, "pairstate");
  return dir.file(name, scm::state_to_string(st));
}

}  // namespace

TEST_CASE("scenario files parse and validate", "[driver][scenario]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 4\n"
      "method orthogonal\n"
      "evolution real-part\n"
      "initial first-mode\n"
      "t_end 2.0\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n"
      "state 1 perturb 5 removal2 all 1.15\n"
      "switch 0.0\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  REQUIRE(sc.n_modes == 4);
  REQUIRE(sc.method == CoefficientMethod::orthogonal_approx);
  REQUIRE(sc.evolution == EvolutionKind::real_part_only);
  REQUIRE(sc.states.size() == 2);
  REQUIRE(sc.switch_times == std::vector<double>{0.0});
  REQUIRE(sc.states[1].perturbations.size() == 1);
  REQUIRE(sc.states[1].perturbations[0].factor == 1.15);

  REQUIRE_THROWS_AS(scm::parse_scenario(text + "bogus 1\n", dir.path.string()),
                    scm::UsageError);
  REQUIRE_THROWS_AS(scm::parse_scenario(text + "switch 1.0\n", dir.path.string()),
                    scm::UsageError);  // more switches than transitions
  REQUIRE_THROWS_AS(
      scm::parse_scenario("modes 2\nt_end 1\nstate 0 perturb 1 removal2 all 1.1\nswitch 0\n",
                          dir.path.string()),
      scm::UsageError);  // state 0 must be a file
  std::string decreasing = text;
  decreasing += "state 2 perturb 5 removal2 all 1.2\nswitch -1.0\n";
  REQUIRE_THROWS_AS(scm::parse_scenario(decreasing, dir.path.string()), scm::UsageError);
}

TEST_CASE("context resolves cumulative perturbations and mints materials",
          "[driver][context]") {
  TempDir dir;
  scm::ReactorState st = oracle::vver_state({1, 5}, 0.5, "ring");
  dir.file("ring.state", scm::state_to_string(st));
  const std::string text =
      "modes 2\n"
      "t_end 1.0\n"
      "output_dt 0.1\n"
      "state 0 file ring.state\n"
      "state 1 perturb 5 removal2 top 1.1\n"
      "state 1 perturb 5 removal2 bottom 1.2\n"
      "switch 0.0\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::ring_layout(1, 5), 6, 1);
  REQUIRE(ctx.n_states() == 2);
  const auto& rs = ctx.state(1);
  // minted id 6 for the upper half, base id rescaled for the lower half
  REQUIRE(rs.state.materials.count(6) == 1);
  REQUIRE(rs.state.materials.at(6).removal[1] ==
          Catch::Approx(8.93878e-2 * 1.1).epsilon(1e-14));
  REQUIRE(rs.state.materials.at(5).removal[1] ==
          Catch::Approx(8.93878e-2 * 1.2).epsilon(1e-14));
  int top_cells = 0;
  for (const auto& c : rs.layout.cells)
    if (c.material == 6) ++top_cells;
  REQUIRE(top_cells == 4);
  // meshes agree geometrically between states
  REQUIRE(ctx.state(0).mesh().n_vertices() == rs.mesh().n_vertices());
  REQUIRE(ctx.state(0).space().n_dofs() == rs.space().n_dofs());
}

TEST_CASE("offline library of a one-state scenario matches a direct solve",
          "[driver][offline]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 5\n"
      "tol 1e-10\n"
      "t_end 1.0\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  REQUIRE(lib.entries.size() == 1);

  scm::BlockOperator op = scm::assemble_block_system(ctx.state(0).state, ctx.state(0).space());
  scm::SpectrumRequest req;
  req.n_modes = 5;
  req.tol = 1e-10;
  req.shift = scm::shift_from_estimate(
      scm::presolve_alpha_estimate(ctx.state(0).state, ctx.state(0).layout));
  auto direct = scm::solve_alpha(op, req);
  REQUIRE(lib.entries[0].modes.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    REQUIRE(lib.entries[0].modes[i].value.real() == direct[i].value.real());
    REQUIRE(lib.entries[0].modes[i].value.imag() == direct[i].value.imag());
  }
}

TEST_CASE("library round-trips through disk bit-exactly", "[driver][library]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 4\n"
      "method biorthogonal\n"
      "t_end 1.0\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  REQUIRE(!lib.entries[0].adjoint_modes.empty());

  const std::string ldir = (dir.path / "library").string();
  scm::save_library(lib, ldir);
  StateLibrary back = scm::load_library(ldir, 1);
  REQUIRE(back.entries.size() == 1);
  const auto &a = lib.entries[0], &b = back.entries[0];
  REQUIRE(a.label == b.label);
  REQUIRE(a.fingerprint == b.fingerprint);
  REQUIRE(a.modes.size() == b.modes.size());
  REQUIRE(a.adjoint_modes.size() == b.adjoint_modes.size());
  for (std::size_t i = 0; i < a.modes.size(); ++i) {
    REQUIRE(a.modes[i].value.real() == b.modes[i].value.real());
    REQUIRE(a.modes[i].value.imag() == b.modes[i].value.imag());
    REQUIRE(a.modes[i].kind == b.modes[i].kind);
    REQUIRE((a.modes[i].vec_re - b.modes[i].vec_re).cwiseAbs().maxCoeff() == 0.0);
    if (a.modes[i].vec_im.size())
      REQUIRE((a.modes[i].vec_im - b.modes[i].vec_im).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE_THROWS_AS(scm::load_library(ldir, 2), scm::UsageError);  // missing entry
}

TEST_CASE("online run rejects a stale library", "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 3\n"
      "t_end 0.5\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  lib.entries[0].fingerprint ^= 0xdeadbeef;
  REQUIRE_THROWS_AS(scm::online_run(sc, ctx, lib), scm::UsageError);
}

TEST_CASE("single-state run decays with the first mode", "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 3\n"
      "method biorthogonal\n"
      "evolution exact-complex\n"
      "initial first-mode\n"
      "t_end 2.0\n"
      "output_dt 0.25\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  scm::Trajectory traj = scm::online_run(sc, ctx, lib);
  REQUIRE(traj.times.size() == 9);
  const double alpha = lib.entries[0].modes[0].value.real();
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    const double expect = traj.p[0] * std::exp(-alpha * traj.times[i]);
    REQUIRE(traj.p[i] == Catch::Approx(expect).epsilon(1e-7));
  }
}

TEST_CASE("the online stage performs no eigensolves and no factorizations",
          "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 4\n"
      "method least-squares\n"
      "t_end 1.0\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n"
      "state 1 perturb 5 removal2 all 1.2\n"
      "switch 0.0\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);

  const auto eig_before = scm::Counters::eigensolves();
  const auto lu_before = scm::Counters::factorizations();
  scm::Trajectory traj = scm::online_run(sc, ctx, lib);
  REQUIRE(scm::Counters::eigensolves() == eig_before);
  REQUIRE(scm::Counters::factorizations() == lu_before);
  REQUIRE(!traj.times.empty());
}

TEST_CASE("online runs are deterministic", "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 4\n"
      "t_end 1.0\n"
      "output_dt 0.05\n"
      "state 0 file pair.state\n"
      "state 1 perturb 5 removal2 all 1.15\n"
      "switch 0.0\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  scm::Trajectory t1 = scm::online_run(sc, ctx, lib);
  scm::Trajectory t2 = scm::online_run(sc, ctx, lib);
  REQUIRE(t1.times == t2.times);
  REQUIRE(t1.p == t2.p);
  REQUIRE(t1.c == t2.c);
}

TEST_CASE("zero-length scenarios produce an empty trajectory", "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 2\n"
      "t_end 0.0\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  scm::Trajectory traj = scm::online_run(sc, ctx, lib);
  REQUIRE(traj.times.empty());
}

TEST_CASE("full-basis exact run matches the piecewise matrix exponential through a switch",
          "[driver][oracle]") {
  TempDir dir;
  write_pair_state(dir);
  // 36 dofs; two switches exercise the projection hand-off
  const std::string text =
      "modes 36\n"
      "method biorthogonal\n"
      "evolution exact-complex\n"
      "initial flat\n"
      "t_end 0.5\n"
      "output_dt 0.05\n"
      "tol 1e-11\n"
      "state 0 file pair.state\n"
      "state 1 perturb 5 removal2 all 1.3\n"
      "state 2 perturb 5 removal2 all 0.625\n"
      "switch 0.0\n"
      "switch 0.25\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  scm::Trajectory traj = scm::online_run(sc, ctx, lib);

  // oracle: exact matrix exponentials on each interval
  scm::BlockOperator op1 = scm::assemble_block_system(ctx.state(1).state, ctx.state(1).space());
  scm::BlockOperator op2 = scm::assemble_block_system(ctx.state(2).state, ctx.state(2).space());
  scm::PowerIntegrator i1(ctx.state(1).state, ctx.state(1).space());
  scm::PowerIntegrator i2(ctx.state(2).state, ctx.state(2).space());
  Eigen::VectorXd u0 = Eigen::VectorXd::Ones(op1.size());
  Eigen::VectorXd u_switch = oracle::expm_apply(op1.a.to_dense(), op1.b.to_dense(), u0, 0.25);

  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    const double t = traj.times[k];
    Eigen::VectorXd u;
    double p_ref, c_ref;
    if (t <= 0.25) {
      u = oracle::expm_apply(op1.a.to_dense(), op1.b.to_dense(), u0, t);
      p_ref = i1.power(u);
      c_ref = i1.precursor(u);
    } else {
      u = oracle::expm_apply(op2.a.to_dense(), op2.b.to_dense(), u_switch, t - 0.25);
      p_ref = i2.power(u);
      c_ref = i2.precursor(u);
    }
    REQUIRE(traj.p[k] == Catch::Approx(p_ref).epsilon(1e-8));
    REQUIRE(traj.c[k] == Catch::Approx(c_ref).epsilon(1e-8));
  }
}

TEST_CASE("compare_runs reports exact and scaled differences", "[driver][compare]") {
  scm::Trajectory a, b;
  for (int i = 0; i <= 100; ++i) {
    const double t = 0.1 * i;
    const double f = 2.0 + std::sin(t);
    a.record(t, f, 0.5 * f);
    b.record(t, f, 0.5 * f);
  }
  scm::ErrorReport same = scm::compare_runs(a, b, 0.0, 10.0);
  REQUIRE(same.max_rel_p == 0.0);
  REQUIRE(same.l2_rel_c == 0.0);

  scm::Trajectory scaled = b;
  for (auto& p : scaled.p) p *= 1.02;
  scm::ErrorReport rep = scm::compare_runs(scaled, b, 0.0, 10.0);
  REQUIRE(rep.max_rel_p == Catch::Approx(0.02).margin(1e-12));
  REQUIRE(rep.l2_rel_p == Catch::Approx(0.02).margin(1e-12));
  REQUIRE(rep.max_rel_c == 0.0);

  scm::Trajectory late;
  late.record(100.0, 1.0, 1.0);
  REQUIRE_THROWS_AS(scm::compare_runs(late, b, 0.0, 10.0), scm::UsageError);
}

TEST_CASE("trajectory csv round trip", "[driver][csv]") {
  TempDir dir;
  scm::Trajectory t;
  t.record(0.0, 1.5, 2.5);
  t.record(0.1, 1.25, 2.25);
  t.record(0.2, 1.0, 2.0);
  const std::string path = (dir.path / "traj.csv").string();
  scm::write_trajectory_csv(t, path);
  scm::Trajectory back = scm::read_trajectory_csv(path);
  REQUIRE(back.times == t.times);
  REQUIRE(back.p == t.p);
  REQUIRE(back.c == t.c);
  REQUIRE_THROWS_AS(scm::read_trajectory_csv((dir.path / "missing.csv").string()),
                    scm::UsageError);
}

TEST_CASE("truncation never splits a conjugate pair", "[driver][online]") {
  TempDir dir;
  write_pair_state(dir);
  const std::string text =
      "modes 7\n"
      "t_end 0.5\n"
      "output_dt 0.1\n"
      "state 0 file pair.state\n";
  Scenario sc = scm::parse_scenario(text, dir.path.string());
  ScmContext ctx(sc, oracle::pair_layout(1, 5), 6, 1);
  StateLibrary lib = scm::offline_build(sc, ctx);
  // if mode 7 opens a pair the online basis must carry mode 8 as well
  scm::Trajectory traj = scm::online_run(sc, ctx, lib);
  REQUIRE(!traj.times.empty());
}
