// scmkin: mesh, spectra, offline library and transient runs for the
// state-change modal reactor kinetics toolkit.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "scm/driver.hpp"

namespace {

struct CommonOpts {
  std::string layout_path;
  std::string state_path;
  std::string scenario_path;
  std::string out;
  int kappa = 24;
  int degree = 2;
  int modes = 10;
  double tol = 1e-10;
  int threads = 1;
};

void add_mesh_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--layout", o.layout_path, "core layout file")->required();
  cmd->add_option("--kappa", o.kappa, "triangles per assembly (6, 24, 96)");
}

scm::CoreLayout load_layout(const std::string& path) {
  return scm::parse_layout(scm::read_text_file(path));
}

int cmd_mesh(const CommonOpts& o) {
  scm::CoreLayout layout = load_layout(o.layout_path);
  scm::TriMesh mesh = scm::build_mesh(layout, o.kappa);
  std::cout << "assemblies " << layout.n_assemblies() << "\n"
            << "vertices " << mesh.n_vertices() << "\n"
            << "triangles " << mesh.n_triangles() << "\n"
            << "boundary_edges " << mesh.boundary_edges.size() << "\n"
            << "total_area " << scm::format_double(mesh.total_area()) << "\n";
  if (!o.out.empty()) {
    std::ofstream os(o.out);
    if (!os) throw scm::UsageError("cannot write " + o.out);
    os << "vertices " << mesh.n_vertices() << "\n";
    for (const auto& v : mesh.vertices)
      os << scm::format_double(v.x) << ' ' << scm::format_double(v.y) << "\n";
    os << "triangles " << mesh.n_triangles() << "\n";
    for (const auto& t : mesh.triangles)
      os << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << t.material << ' ' << t.assembly
         << "\n";
  }
  return 0;
}

void write_eig_csv(std::ostream& os, const std::vector<scm::EigenMode>& modes) {
  os << "n,re_alpha,im_alpha,residual\n";
  for (std::size_t i = 0; i < modes.size(); ++i)
    os << i + 1 << ',' << scm::format_double(modes[i].value.real()) << ','
       << scm::format_double(modes[i].value.imag()) << ','
       << scm::format_double(modes[i].residual) << '\n';
}

int cmd_eig(const CommonOpts& o, bool adjoint, const std::string& dump_prefix) {
  scm::CoreLayout layout = load_layout(o.layout_path);
  scm::ReactorState state = scm::load_state_file(o.state_path);
  for (const auto& note : state.validation_warnings()) std::cerr << "note: " << note << "\n";
  scm::TriMesh mesh = scm::build_mesh(layout, o.kappa);
  scm::FeSpace space(mesh, o.degree);
  scm::BlockOperator op = scm::assemble_block_system(state, space, o.threads);

  if (!dump_prefix.empty()) {
    for (auto [suffix, m] : {std::pair<const char*, const scm::CsrMatrix*>{"_a.txt", &op.a},
                             {"_b.txt", &op.b}}) {
      std::ofstream os(dump_prefix + suffix);
      if (!os) throw scm::UsageError("cannot write " + dump_prefix + suffix);
      m->dump_coordinate(os);
    }
  }

  scm::SpectrumRequest req;
  req.n_modes = o.modes;
  req.tol = o.tol;
  req.shift = scm::shift_from_estimate(scm::presolve_alpha_estimate(state, layout));
  req.which = adjoint ? scm::SpectrumRequest::Which::adjoint
                      : scm::SpectrumRequest::Which::direct;
  std::vector<scm::EigenMode> modes = scm::solve_alpha(op, req);

  if (o.out.empty()) {
    write_eig_csv(std::cout, modes);
  } else {
    std::ofstream os(o.out);
    if (!os) throw scm::UsageError("cannot write " + o.out);
    write_eig_csv(os, modes);
  }
  return 0;
}

int cmd_offline(const CommonOpts& o) {
  scm::CoreLayout layout = load_layout(o.layout_path);
  scm::Scenario sc = scm::load_scenario_file(o.scenario_path);
  scm::ScmContext ctx(sc, layout, o.kappa, o.degree);
  scm::StateLibrary lib = scm::offline_build(sc, ctx, o.threads);
  const std::string dir = (std::filesystem::path(o.out) / "library").string();
  scm::save_library(lib, dir);
  std::cout << "library " << dir << " states " << lib.entries.size() << "\n";
  for (std::size_t k = 0; k < lib.entries.size(); ++k) {
    const auto& e = lib.entries[k];
    std::cout << "state " << k << " '" << e.label << "' alpha_1 ";
    if (!e.modes.empty())
      std::cout << scm::format_double(e.modes[0].value.real());
    std::cout << "\n";
  }
  return 0;
}

int cmd_run(const CommonOpts& o, bool with_reference) {
  scm::CoreLayout layout = load_layout(o.layout_path);
  scm::Scenario sc = scm::load_scenario_file(o.scenario_path);
  scm::ScmContext ctx(sc, layout, o.kappa, o.degree);
  const std::string dir = (std::filesystem::path(o.out) / "library").string();
  scm::StateLibrary lib = scm::load_library(dir, ctx.n_states());

  scm::Trajectory modal = scm::online_run(sc, ctx, lib);
  std::filesystem::create_directories(o.out);
  const std::string modal_csv = (std::filesystem::path(o.out) / "modal.csv").string();
  scm::write_trajectory_csv(modal, modal_csv);
  if (modal.times.empty()) {
    std::cerr << "warning: empty time window, no samples written\n";
    std::cout << "modal " << modal_csv << " samples 0\n";
    return 0;
  }
  std::cout << "modal " << modal_csv << " samples " << modal.times.size() << "\n";

  if (with_reference) {
    scm::Trajectory ref = scm::run_reference(sc, ctx, lib);
    const std::string ref_csv = (std::filesystem::path(o.out) / "reference.csv").string();
    scm::write_trajectory_csv(ref, ref_csv);
    const double t0 = sc.t_origin();
    double ta = t0 + 1.0, tb = sc.t_end;
    if (sc.compare_window) {
      ta = sc.compare_window->first;
      tb = sc.compare_window->second;
    }
    scm::ErrorReport rep = scm::compare_runs(modal, ref, ta, tb);
    const std::string rep_path = (std::filesystem::path(o.out) / "report.txt").string();
    std::ofstream os(rep_path);
    os << modal.note << "\n" << ref.note << "\n" << rep.to_text();
    std::cout << "reference " << ref_csv << "\nreport " << rep_path << "\n";
  }
  return 0;
}

int cmd_dyn(const CommonOpts& o) {
  scm::CoreLayout layout = load_layout(o.layout_path);
  scm::Scenario sc = scm::load_scenario_file(o.scenario_path);
  scm::ScmContext ctx(sc, layout, o.kappa, o.degree);
  const std::string dir = (std::filesystem::path(o.out) / "library").string();
  scm::StateLibrary lib = scm::load_library(dir, ctx.n_states());
  scm::Trajectory ref = scm::run_reference(sc, ctx, lib);
  std::filesystem::create_directories(o.out);
  const std::string ref_csv = (std::filesystem::path(o.out) / "reference.csv").string();
  scm::write_trajectory_csv(ref, ref_csv);
  std::cout << "reference " << ref_csv << " samples " << ref.times.size() << "\n";
  return 0;
}

int cmd_compare(const std::string& modal_path, const std::string& ref_path, double ta,
                double tb, const std::string& out) {
  scm::Trajectory modal = scm::read_trajectory_csv(modal_path);
  scm::Trajectory ref = scm::read_trajectory_csv(ref_path);
  scm::ErrorReport rep = scm::compare_runs(modal, ref, ta, tb);
  if (out.empty()) {
    std::cout << rep.to_text();
  } else {
    std::ofstream os(out);
    if (!os) throw scm::UsageError("cannot write " + out);
    os << rep.to_text();
    std::cout << "report " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"state-change modal reactor kinetics toolkit"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string cmp_modal, cmp_ref, cmp_out, dump_prefix;
  double cmp_ta = 0.0, cmp_tb = 0.0;
  bool adjoint = false, with_reference = false;

  auto* mesh = app.add_subcommand("mesh", "build a core triangulation and print a summary");
  add_mesh_opts(mesh, o);
  mesh->add_option("--out", o.out, "optional mesh dump file");

  auto* eig = app.add_subcommand("eig", "solve the alpha-eigenvalue problem, emit CSV");
  add_mesh_opts(eig, o);
  eig->add_option("--state", o.state_path, "reactor state file")->required();
  eig->add_option("--degree", o.degree, "Lagrange degree (1, 2, 3)");
  eig->add_option("--modes", o.modes, "number of dominant modes");
  eig->add_option("--tol", o.tol, "residual tolerance");
  eig->add_option("--threads", o.threads, "assembly threads");
  eig->add_option("--out", o.out, "CSV output path (stdout when omitted)");
  eig->add_flag("--adjoint", adjoint, "solve the transposed pencil");
  eig->add_option("--dump-system", dump_prefix,
                  "write A and B in sorted coordinate text format to <prefix>_{a,b}.txt");

  auto* offline = app.add_subcommand("offline", "precompute the per-state mode library");
  add_mesh_opts(offline, o);
  offline->add_option("--scenario", o.scenario_path, "scenario file")->required();
  offline->add_option("--degree", o.degree, "Lagrange degree (1, 2, 3)");
  offline->add_option("--threads", o.threads, "parallel state solves");
  offline->add_option("--out", o.out, "output directory")->required();

  auto* run = app.add_subcommand("run", "online modal run against a prepared library");
  add_mesh_opts(run, o);
  run->add_option("--scenario", o.scenario_path, "scenario file")->required();
  run->add_option("--degree", o.degree, "Lagrange degree (1, 2, 3)");
  run->add_option("--out", o.out, "output directory with the library")->required();
  run->add_flag("--reference", with_reference,
                "also march the implicit-Euler reference and write an error report");

  auto* dyn = app.add_subcommand("dyn", "implicit-Euler reference trajectory only");
  add_mesh_opts(dyn, o);
  dyn->add_option("--scenario", o.scenario_path, "scenario file")->required();
  dyn->add_option("--degree", o.degree, "Lagrange degree (1, 2, 3)");
  dyn->add_option("--out", o.out, "output directory with the library")->required();

  auto* cmp = app.add_subcommand("compare", "error report between two trajectory CSVs");
  cmp->add_option("modal", cmp_modal, "modal trajectory CSV")->required();
  cmp->add_option("reference", cmp_ref, "reference trajectory CSV")->required();
  cmp->add_option("t_a", cmp_ta, "window start")->required();
  cmp->add_option("t_b", cmp_tb, "window end")->required();
  cmp->add_option("--out", cmp_out, "report path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (mesh->parsed()) return cmd_mesh(o);
    if (eig->parsed()) return cmd_eig(o, adjoint, dump_prefix);
    if (offline->parsed()) return cmd_offline(o);
    if (run->parsed()) return cmd_run(o, with_reference);
    if (dyn->parsed()) return cmd_dyn(o);
    if (cmp->parsed()) return cmd_compare(cmp_modal, cmp_ref, cmp_ta, cmp_tb, cmp_out);
  } catch (const scm::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
