#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scm/common.hpp"
#include "scm/dynamics.hpp"
#include "scm/eigensolver.hpp"
#include "scm/fem.hpp"
#include "scm/mesh.hpp"
#include "scm/modal.hpp"
#include "scm/state.hpp"

namespace scm {

// ---------------------------------------------------------------------------
// scenario file
// ---------------------------------------------------------------------------
//
//   modes <N>
//   method biorthogonal|least-squares|orthogonal
//   evolution exact-complex|real-part
//   initial first-mode | flat | file <path>
//   t_end <s>
//   output_dt <s>
//   reference_tau <s>              (optional, default 0.0025)
//   snapshot_stride <k>            (optional, default 10)
//   compare_window <t_a> <t_b>     (optional)
//   output_amplitudes on|off       (optional, default off)
//   tol <residual tolerance>       (optional, default 1e-10)
//   subspace <krylov dimension>    (optional, 0 = automatic)
//   state <k> file <path>
//   state <k> perturb <material> <quantity> <all|top|bottom> <factor>
//   switch <t_s>                   (one line per state switch, increasing)
//
// Unknown keys are rejected. Perturb lines accumulate in file order onto the
// previous state's resolved constants.

struct ScenarioStateSpec {
  std::optional<std::string> file;
  std::vector<Perturbation> perturbations;
};

struct Scenario {
  std::vector<ScenarioStateSpec> states;
  std::vector<double> switch_times;
  int n_modes = 10;
  CoefficientMethod method = CoefficientMethod::orthogonal_approx;
  EvolutionKind evolution = EvolutionKind::real_part_only;
  enum class Initial { first_mode, flat, file } initial = Initial::first_mode;
  std::string initial_file;
  double t_end = 0.0;
  double output_dt = 0.05;
  double reference_tau = 0.0025;
  int snapshot_stride = 10;
  bool output_amplitudes = false;
  double tol = 1e-10;
  int subspace_dim = 0;
  std::optional<std::pair<double, double>> compare_window;

  double t_origin() const { return switch_times.empty() ? 0.0 : switch_times.front(); }

  void validate() const {
    if (states.empty()) throw UsageError("scenario defines no states");
    if (!states[0].file) throw UsageError("scenario state 0 must come from a file");
    if (switch_times.size() + 1 != states.size())
      throw UsageError("scenario needs exactly one switch per state transition (" +
                       std::to_string(states.size()) + " states, " +
                       std::to_string(switch_times.size()) + " switches)");
    for (std::size_t i = 1; i < switch_times.size(); ++i)
      if (!(switch_times[i - 1] < switch_times[i]))
        throw UsageError("scenario switch times must be strictly increasing");
    if (n_modes < 1) throw UsageError("scenario: modes must be >= 1");
    if (!(output_dt > 0.0)) throw UsageError("scenario: output_dt must be positive");
  }
};

inline Scenario parse_scenario(const std::string& text, const std::string& base_dir) {
  Scenario sc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto path_of = [&](const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return p;
    return (std::filesystem::path(base_dir) / fp).string();
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = tokenize_line(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    auto ctx = "scenario line " + std::to_string(lineno);
    auto need = [&](std::size_t n) {
      if (toks.size() != n + 1)
        throw UsageError(ctx + ": '" + key + "' expects " + std::to_string(n) + " values");
    };
    if (key == "modes") {
      need(1);
      sc.n_modes = static_cast<int>(parse_long(toks[1], ctx));
    } else if (key == "method") {
      need(1);
      if (toks[1] == "biorthogonal") sc.method = CoefficientMethod::biorthogonal;
      else if (toks[1] == "least-squares") sc.method = CoefficientMethod::least_squares;
      else if (toks[1] == "orthogonal") sc.method = CoefficientMethod::orthogonal_approx;
      else throw UsageError(ctx + ": unknown method '" + toks[1] + "'");
    } else if (key == "evolution") {
      need(1);
      if (toks[1] == "exact-complex") sc.evolution = EvolutionKind::exact_complex;
      else if (toks[1] == "real-part") sc.evolution = EvolutionKind::real_part_only;
      else throw UsageError(ctx + ": unknown evolution kind '" + toks[1] + "'");
    } else if (key == "initial") {
      if (toks.size() == 2 && toks[1] == "first-mode") sc.initial = Scenario::Initial::first_mode;
      else if (toks.size() == 2 && toks[1] == "flat") sc.initial = Scenario::Initial::flat;
      else if (toks.size() == 3 && toks[1] == "file") {
        sc.initial = Scenario::Initial::file;
        sc.initial_file = path_of(toks[2]);
      } else throw UsageError(ctx + ": initial must be first-mode, flat or file <path>");
    } else if (key == "t_end") {
      need(1);
      sc.t_end = parse_double(toks[1], ctx);
    } else if (key == "output_dt") {
      need(1);
      sc.output_dt = parse_double(toks[1], ctx);
    } else if (key == "reference_tau") {
      need(1);
      sc.reference_tau = parse_double(toks[1], ctx);
    } else if (key == "snapshot_stride") {
      need(1);
      sc.snapshot_stride = static_cast<int>(parse_long(toks[1], ctx));
    } else if (key == "compare_window") {
      need(2);
      sc.compare_window = {parse_double(toks[1], ctx), parse_double(toks[2], ctx)};
    } else if (key == "output_amplitudes") {
      need(1);
      sc.output_amplitudes = toks[1] == "on";
      if (toks[1] != "on" && toks[1] != "off")
        throw UsageError(ctx + ": output_amplitudes must be on or off");
    } else if (key == "tol") {
      need(1);
      sc.tol = parse_double(toks[1], ctx);
    } else if (key == "subspace") {
      need(1);
      sc.subspace_dim = static_cast<int>(parse_long(toks[1], ctx));
    } else if (key == "state") {
      if (toks.size() < 3) throw UsageError(ctx + ": malformed state line");
      const int k = static_cast<int>(parse_long(toks[1], ctx));
      if (k < 0 || k > static_cast<int>(sc.states.size()))
        throw UsageError(ctx + ": state indices must appear in order");
      if (k == static_cast<int>(sc.states.size())) sc.states.emplace_back();
      auto& spec = sc.states[k];
      if (toks[2] == "file") {
        if (toks.size() != 4) throw UsageError(ctx + ": state file needs a path");
        spec.file = path_of(toks[3]);
      } else if (toks[2] == "perturb") {
        if (toks.size() != 7)
          throw UsageError(ctx + ": perturb needs <material> <quantity> <region> <factor>");
        Perturbation p;
        p.target_material = static_cast<int>(parse_long(toks[3], ctx));
        p.target_quantity = toks[4];
        if (toks[5] == "all") p.region.kind = PerturbRegion::Kind::all;
        else if (toks[5] == "top") p.region.kind = PerturbRegion::Kind::top;
        else if (toks[5] == "bottom") p.region.kind = PerturbRegion::Kind::bottom;
        else throw UsageError(ctx + ": region must be all, top or bottom");
        p.factor = parse_double(toks[6], ctx);
        spec.perturbations.push_back(p);
      } else {
        throw UsageError(ctx + ": state entry must be 'file' or 'perturb'");
      }
    } else if (key == "switch") {
      need(1);
      sc.switch_times.push_back(parse_double(toks[1], ctx));
    } else {
      throw UsageError(ctx + ": unknown key '" + key + "'");
    }
  }
  sc.validate();
  return sc;
}

inline Scenario load_scenario_file(const std::string& path) {
  return parse_scenario(read_text_file(path),
                        std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// resolved problem context
// ---------------------------------------------------------------------------

struct ResolvedState {
  ReactorState state;
  CoreLayout layout;
  // heap-held so the space's mesh reference survives container moves
  std::unique_ptr<TriMesh> mesh_ptr;
  std::unique_ptr<FeSpace> space_ptr;
  std::uint64_t fingerprint = 0;

  ResolvedState(ReactorState st, CoreLayout lo, int kappa, int degree)
      : state(std::move(st)), layout(std::move(lo)),
        mesh_ptr(std::make_unique<TriMesh>(build_mesh(layout, kappa))),
        space_ptr(std::make_unique<FeSpace>(*mesh_ptr, degree)) {
    Fnv1a h;
    h.add_u64(state.fingerprint());
    h.add_u64(mesh_ptr->fingerprint());
    h.add_u64(static_cast<std::uint64_t>(degree));
    fingerprint = h.value();
  }

  const TriMesh& mesh() const { return *mesh_ptr; }
  const FeSpace& space() const { return *space_ptr; }
};

/// Scenario states resolved against a base layout: files loaded,
/// perturbations applied cumulatively, one mesh/space per state.
class ScmContext {
 public:
  ScmContext(const Scenario& sc, const CoreLayout& base_layout, int kappa, int degree)
      : kappa_(kappa), degree_(degree) {
    ReactorState cur_state;
    CoreLayout cur_layout = base_layout;
    for (std::size_t k = 0; k < sc.states.size(); ++k) {
      const auto& spec = sc.states[k];
      if (spec.file) {
        cur_state = load_state_file(*spec.file);
        cur_layout = base_layout;
      }
      for (const auto& pert : spec.perturbations) {
        PerturbedSystem ps = apply_perturbation(cur_state, pert, cur_layout);
        cur_state = std::move(ps.state);
        cur_layout = std::move(ps.layout);
      }
      if (!spec.file && k == 0) throw UsageError("scenario state 0 must name a state file");
      ReactorState labeled = cur_state;
      if (!spec.file || !spec.perturbations.empty())
        labeled.label = cur_state.label + "_s" + std::to_string(k);
      states_.emplace_back(labeled, cur_layout, kappa, degree);
      cur_state.label = labeled.label;
    }
  }

  int n_states() const { return static_cast<int>(states_.size()); }
  const ResolvedState& state(int k) const { return states_.at(k); }
  int kappa() const { return kappa_; }
  int degree() const { return degree_; }

 private:
  int kappa_;
  int degree_;
  std::vector<ResolvedState> states_;
};

// ---------------------------------------------------------------------------
// state library (offline product)
// ---------------------------------------------------------------------------

struct StateEntry {
  std::string label;
  std::uint64_t fingerprint = 0;
  std::vector<EigenMode> modes;
  std::vector<EigenMode> adjoint_modes;
  double tol = 0.0;
  double shift_used = 0.0;
  int restarts = 0;
};

struct StateLibrary {
  std::vector<StateEntry> entries;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_mode_set(std::ostream& os, const std::vector<EigenMode>& modes,
                           std::uint32_t vec_len) {
  write_u32(os, static_cast<std::uint32_t>(modes.size()));
  for (const auto& m : modes) {
    const std::uint32_t kind = m.kind == EigenMode::Kind::real ? 0u
                               : m.kind == EigenMode::Kind::pair_first ? 1u : 2u;
    write_u32(os, kind);
    write_f64(os, m.value.real());
    write_f64(os, m.value.imag());
    write_f64(os, m.residual);
    for (std::uint32_t i = 0; i < vec_len; ++i) write_f64(os, m.vec_re[i]);
    write_u32(os, m.vec_im.size() ? 1u : 0u);
    if (m.vec_im.size())
      for (std::uint32_t i = 0; i < vec_len; ++i) write_f64(os, m.vec_im[i]);
  }
}

inline std::vector<EigenMode> read_mode_set(std::istream& is, std::uint32_t vec_len) {
  const std::uint32_t n = read_u32(is);
  std::vector<EigenMode> modes(n);
  for (auto& m : modes) {
    const std::uint32_t kind = read_u32(is);
    m.kind = kind == 0 ? EigenMode::Kind::real
             : kind == 1 ? EigenMode::Kind::pair_first : EigenMode::Kind::pair_second;
    const double re = read_f64(is), im = read_f64(is);
    m.value = {re, im};
    m.residual = read_f64(is);
    m.vec_re.resize(vec_len);
    for (std::uint32_t i = 0; i < vec_len; ++i) m.vec_re[i] = read_f64(is);
    if (read_u32(is)) {
      m.vec_im.resize(vec_len);
      for (std::uint32_t i = 0; i < vec_len; ++i) m.vec_im[i] = read_f64(is);
    }
  }
  if (!is) throw UsageError("state library vector file truncated");
  return modes;
}

}  // namespace detail

constexpr std::uint64_t kLibraryMagic = 0x31434556394d4353ull;  // "SCM9VEC1"

inline void save_library(const StateLibrary& lib, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t k = 0; k < lib.entries.size(); ++k) {
    const auto& e = lib.entries[k];
    const std::string base = (fs::path(dir) / ("state_" + std::to_string(k))).string();
    {
      std::ofstream meta(base + ".meta");
      meta << "label " << e.label << "\n";
      meta << "fingerprint " << e.fingerprint << "\n";
      meta << "n_modes " << e.modes.size() << "\n";
      meta << "has_adjoint " << (e.adjoint_modes.empty() ? 0 : 1) << "\n";
      meta << "tol " << format_double(e.tol) << "\n";
      meta << "shift " << format_double(e.shift_used) << "\n";
      meta << "restarts " << e.restarts << "\n";
      for (std::size_t i = 0; i < e.modes.size(); ++i) {
        const auto& m = e.modes[i];
        meta << "mode " << i + 1 << ' ' << format_double(m.value.real()) << ' '
             << format_double(m.value.imag()) << ' ' << format_double(m.residual) << "\n";
      }
    }
    {
      std::ofstream vec(base + ".vec", std::ios::binary);
      detail::write_u64(vec, kLibraryMagic);
      detail::write_u64(vec, e.fingerprint);
      const std::uint32_t len =
          e.modes.empty() ? 0u : static_cast<std::uint32_t>(e.modes[0].vec_re.size());
      detail::write_u32(vec, len);
      detail::write_mode_set(vec, e.modes, len);
      detail::write_mode_set(vec, e.adjoint_modes, len);
    }
  }
}

inline StateLibrary load_library(const std::string& dir, int n_states) {
  namespace fs = std::filesystem;
  StateLibrary lib;
  for (int k = 0; k < n_states; ++k) {
    const std::string base = (fs::path(dir) / ("state_" + std::to_string(k))).string();
    if (!fs::exists(base + ".vec"))
      throw UsageError("state library is missing " + base + ".vec (run the offline stage)");
    StateEntry e;
    {
      std::ifstream meta(base + ".meta");
      if (!meta) throw UsageError("cannot open " + base + ".meta");
      std::string line;
      while (std::getline(meta, line)) {
        auto toks = tokenize_line(line);
        if (toks.empty()) continue;
        if (toks[0] == "label" && toks.size() > 1) e.label = toks[1];
        else if (toks[0] == "fingerprint" && toks.size() > 1)
          e.fingerprint = std::stoull(toks[1]);
        else if (toks[0] == "tol" && toks.size() > 1) e.tol = std::stod(toks[1]);
        else if (toks[0] == "shift" && toks.size() > 1) e.shift_used = std::stod(toks[1]);
        else if (toks[0] == "restarts" && toks.size() > 1) e.restarts = std::stoi(toks[1]);
      }
    }
    {
      std::ifstream vec(base + ".vec", std::ios::binary);
      if (detail::read_u64(vec) != kLibraryMagic)
        throw UsageError(base + ".vec is not a state library vector file");
      const std::uint64_t fp = detail::read_u64(vec);
      if (fp != e.fingerprint)
        throw UsageError(base + ": fingerprint mismatch between .meta and .vec");
      const std::uint32_t len = detail::read_u32(vec);
      e.modes = detail::read_mode_set(vec, len);
      e.adjoint_modes = detail::read_mode_set(vec, len);
    }
    lib.entries.push_back(std::move(e));
  }
  return lib;
}

// ---------------------------------------------------------------------------
// offline stage
// ---------------------------------------------------------------------------

/// Coarse presolve on a kappa=6, p=1 discretization of the same layout;
/// the returned estimate seeds the shift-invert target.
inline double presolve_alpha_estimate(const ReactorState& state, const CoreLayout& layout) {
  TriMesh mesh6 = build_mesh(layout, 6);
  FeSpace space6(mesh6, 1);
  BlockOperator op6 = assemble_block_system(state, space6);
  return estimate_leftmost(op6.a, op6.b);
}

inline StateEntry solve_state_entry(const ResolvedState& rs, const Scenario& sc, int threads) {
  BlockOperator op = assemble_block_system(rs.state, rs.space(), threads);
  SpectrumRequest req;
  req.n_modes = sc.n_modes;
  req.tol = sc.tol;
  req.subspace_dim = sc.subspace_dim;
  req.shift = shift_from_estimate(presolve_alpha_estimate(rs.state, rs.layout));

  StateEntry entry;
  entry.label = rs.state.label;
  entry.fingerprint = rs.fingerprint;
  entry.tol = sc.tol;
  entry.shift_used = *req.shift;
  try {
    entry.modes = solve_alpha(op, req);
    if (sc.method == CoefficientMethod::biorthogonal) {
      SpectrumRequest areq = req;
      areq.which = SpectrumRequest::Which::adjoint;
      entry.adjoint_modes = solve_alpha(op, areq);
      // align adjoint entries with the direct order by eigenvalue proximity
      std::vector<EigenMode> aligned;
      std::vector<char> used(entry.adjoint_modes.size(), 0);
      for (const auto& d : entry.modes) {
        int pick = -1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < entry.adjoint_modes.size(); ++j) {
          if (used[j]) continue;
          const double dist = std::abs(d.value - entry.adjoint_modes[j].value);
          if (dist < best) {
            best = dist;
            pick = static_cast<int>(j);
          }
        }
        if (pick < 0 || best > 1e-6 * (std::abs(d.value) + 1.0))
          throw NumericError("adjoint spectrum does not match the direct spectrum");
        used[pick] = 1;
        aligned.push_back(entry.adjoint_modes[pick]);
      }
      entry.adjoint_modes = std::move(aligned);
    }
  } catch (const NumericError& err) {
    throw NumericError("state '" + rs.state.label + "': " + err.what());
  }
  return entry;
}

/// Per-state eigen-decompositions, computed independently (optionally in
/// parallel) and persisted by the caller.
inline StateLibrary offline_build(const Scenario& sc, const ScmContext& ctx, int threads = 1) {
  StateLibrary lib;
  lib.entries.resize(ctx.n_states());
  if (threads <= 1 || ctx.n_states() == 1) {
    for (int k = 0; k < ctx.n_states(); ++k)
      lib.entries[k] = solve_state_entry(ctx.state(k), sc, threads);
  } else {
    std::vector<std::future<StateEntry>> futs;
    for (int k = 0; k < ctx.n_states(); ++k)
      futs.push_back(std::async(std::launch::async,
                                [&, k] { return solve_state_entry(ctx.state(k), sc, 1); }));
    for (int k = 0; k < ctx.n_states(); ++k) lib.entries[k] = futs[k].get();
  }
  return lib;
}

// ---------------------------------------------------------------------------
// online stage
// ---------------------------------------------------------------------------

namespace detail {

/// Mass-only pencil factor of one state (no stiffness, no factorization).
inline CsrMatrix make_b_matrix(const ReactorState& state, const FeSpace& space) {
  const int G = state.n_groups(), M = state.n_precursors(), n = space.n_dofs();
  std::map<int, double> unit;
  for (const auto& [id, gc] : state.materials) unit[id] = 1.0;
  CsrMatrix mass = assemble_mass(space, unit);
  std::vector<Triplet> t;
  const auto& rp = mass.row_ptr();
  for (int f = 0; f < G + M; ++f) {
    const double w = f < G ? 1.0 / state.kinetics.velocities[f] : 1.0;
    for (int r = 0; r < mass.rows(); ++r)
      for (int k = rp[r]; k < rp[r + 1]; ++k)
        t.push_back({f * n + r, f * n + mass.col_idx()[k], w * mass.values()[k]});
  }
  const int total = (G + M) * n;
  return CsrMatrix::from_triplets(total, total, std::move(t));
}

inline ModalBasis basis_from_entry(const StateEntry& entry, const ResolvedState& rs,
                                   int n_modes, bool need_b) {
  ModalBasis basis;
  basis.state_label = entry.label;
  basis.n_scalar = rs.space().n_dofs();
  basis.n_groups = rs.state.n_groups();
  basis.n_precursors = rs.state.n_precursors();
  int take = std::min<int>(n_modes, static_cast<int>(entry.modes.size()));
  // never split a conjugate pair at the truncation boundary
  if (take < static_cast<int>(entry.modes.size()) &&
      entry.modes[take - 1].kind == EigenMode::Kind::pair_first)
    ++take;
  basis.modes.assign(entry.modes.begin(), entry.modes.begin() + take);
  if (!entry.adjoint_modes.empty())
    basis.adjoint_modes.assign(entry.adjoint_modes.begin(),
                               entry.adjoint_modes.begin() + take);
  if (need_b)
    basis.operator_b = std::make_shared<CsrMatrix>(make_b_matrix(rs.state, rs.space()));
  basis.validate();
  return basis;
}

}  // namespace detail

inline Eigen::VectorXd initial_condition(const Scenario& sc, const ScmContext& ctx,
                                         const StateLibrary& lib) {
  const ResolvedState& rs0 = ctx.state(0);
  const int total = rs0.space().n_dofs() * (rs0.state.n_groups() + rs0.state.n_precursors());
  switch (sc.initial) {
    case Scenario::Initial::first_mode: {
      if (lib.entries.empty() || lib.entries[0].modes.empty())
        throw UsageError("initial condition needs the first mode of state 0 in the library");
      return lib.entries[0].modes[0].vec_re;
    }
    case Scenario::Initial::flat:
      return Eigen::VectorXd::Ones(total);
    case Scenario::Initial::file: {
      std::ifstream in(sc.initial_file);
      if (!in) throw UsageError("cannot open initial condition file " + sc.initial_file);
      Eigen::VectorXd u(total);
      for (int i = 0; i < total; ++i)
        if (!(in >> u[i]))
          throw UsageError("initial condition file ends early (need " + std::to_string(total) +
                           " values)");
      return u;
    }
  }
  throw UsageError("unreachable initial condition kind");
}

/// Online SCM evaluation: at every switch the end-of-interval vector is
/// projected onto the next state's basis and evolved analytically. No
/// eigensolves and no factorizations happen here.
inline Trajectory online_run(const Scenario& sc, const ScmContext& ctx,
                             const StateLibrary& lib) {
  if (static_cast<int>(lib.entries.size()) != ctx.n_states())
    throw UsageError("library entry count does not match scenario");
  for (int k = 0; k < ctx.n_states(); ++k)
    if (lib.entries[k].fingerprint != ctx.state(k).fingerprint)
      throw UsageError("library fingerprint mismatch for state " + std::to_string(k) +
                       " ('" + lib.entries[k].label +
                       "'); rebuild the offline library for this mesh/degree/state");

  Trajectory traj;
  traj.note = std::string("scm method=") + to_string(sc.method) + " evolution=" +
              to_string(sc.evolution) + " modes=" + std::to_string(sc.n_modes) +
              "; t_origin marks a state switch, the fast phase is not modeled";

  const double t0 = sc.t_origin();
  if (!(sc.t_end > t0)) {
    traj.note += "; empty time window";
    return traj;
  }

  Eigen::VectorXd u = initial_condition(sc, ctx, lib);

  // interval s: state index s over (t_{s-1}, t_s]; a single-state scenario
  // evolves state 0 from t0 directly.
  const int n_intervals = std::max<int>(1, ctx.n_states() - 1);
  const bool single = ctx.n_states() == 1;

  int out_idx = 0;
  auto next_output_time = [&] { return t0 + out_idx * sc.output_dt; };

  for (int s = 0; s < n_intervals; ++s) {
    const int state_idx = single ? 0 : s + 1;
    const ResolvedState& rs = ctx.state(state_idx);
    const double t_a = single ? t0 : sc.switch_times[s];
    const double t_b = (single || s + 1 >= static_cast<int>(sc.switch_times.size()))
                           ? sc.t_end
                           : std::min(sc.switch_times[s + 1], sc.t_end);
    if (t_a >= sc.t_end) break;

    ModalBasis basis = detail::basis_from_entry(
        lib.entries[state_idx], rs, sc.n_modes,
        sc.method == CoefficientMethod::biorthogonal);
    ModalCoefficients coeff;
    switch (sc.method) {
      case CoefficientMethod::biorthogonal:
        coeff = project_biorthogonal(u, basis, t_a);
        break;
      case CoefficientMethod::least_squares:
        coeff = project_least_squares(
            u.segment(basis.precursor_offset(), basis.precursor_size()), basis, t_a);
        break;
      case CoefficientMethod::orthogonal_approx:
        coeff = project_orthogonal_approx(
            u.segment(basis.precursor_offset(), basis.precursor_size()), basis, t_a);
        break;
    }

    PowerIntegrator integ(rs.state, rs.space());
    while (next_output_time() <= t_b + 1e-12 * std::max(1.0, std::abs(t_b))) {
      const double t = next_output_time();
      if (t > sc.t_end + 1e-12) break;
      Eigen::VectorXd ut = evolve(basis, coeff, std::max(t, t_a), sc.evolution);
      traj.record(t, integ.power(ut), integ.precursor(ut));
      if (sc.output_amplitudes) {
        std::vector<double> amp(basis.n_modes());
        for (int i = 0; i < basis.n_modes(); ++i)
          amp[i] = coeff.b[i] *
                   std::exp(-basis.modes[i].value.real() * (std::max(t, t_a) - t_a));
        traj.amplitudes.push_back(std::move(amp));
      }
      ++out_idx;
    }
    // carry the end-of-interval vector into the next projection
    u = evolve(basis, coeff, t_b, sc.evolution);
  }
  return traj;
}

/// Reference trajectory: fully implicit march through the same timeline,
/// refactoring the step operator at each state switch.
inline Trajectory run_reference(const Scenario& sc, const ScmContext& ctx,
                                const StateLibrary& lib) {
  Trajectory traj;
  traj.note = "implicit euler tau=" + format_double(sc.reference_tau);
  const double t0 = sc.t_origin();
  if (!(sc.t_end > t0)) return traj;

  Eigen::VectorXd u = initial_condition(sc, ctx, lib);
  const int n_intervals = std::max<int>(1, ctx.n_states() - 1);
  const bool single = ctx.n_states() == 1;
  for (int s = 0; s < n_intervals; ++s) {
    const int state_idx = single ? 0 : s + 1;
    const ResolvedState& rs = ctx.state(state_idx);
    const double t_a = single ? t0 : sc.switch_times[s];
    const double t_b = (single || s + 1 >= static_cast<int>(sc.switch_times.size()))
                           ? sc.t_end
                           : std::min(sc.switch_times[s + 1], sc.t_end);
    if (t_a >= sc.t_end) break;
    BlockOperator op = assemble_block_system(rs.state, rs.space());
    PowerIntegrator integ(rs.state, rs.space());
    ImplicitStepper stepper(op, sc.reference_tau);
    auto record = [&](double t, long k) {
      traj.record(t, integ.power(u), integ.precursor(u));
      if (sc.snapshot_stride > 0 && k % sc.snapshot_stride == 0) {
        traj.snapshot_times.push_back(t);
        traj.snapshots.push_back(u);
      }
    };
    if (s == 0) record(t_a, 0);
    const long nsteps = std::lround((t_b - t_a) / sc.reference_tau);
    for (long k = 1; k <= nsteps; ++k) {
      u = stepper.step(u);
      record(t_a + k * sc.reference_tau, k);
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// trajectory comparison and CSV
// ---------------------------------------------------------------------------

struct ErrorReport {
  double t_a = 0.0, t_b = 0.0;
  int n_samples = 0;
  double max_rel_p = 0.0, l2_rel_p = 0.0;
  double max_rel_c = 0.0, l2_rel_c = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    os << "window " << format_double(t_a) << " .. " << format_double(t_b) << " (" << n_samples
       << " samples)\n";
    os << "P max-rel " << format_double(max_rel_p) << " l2-rel " << format_double(l2_rel_p)
       << "\n";
    os << "C max-rel " << format_double(max_rel_c) << " l2-rel " << format_double(l2_rel_c)
       << "\n";
    return os.str();
  }
};

namespace detail {

inline double interp(const std::vector<double>& ts, const std::vector<double>& vs, double t) {
  auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return vs.front();
  if (it == ts.end()) return vs.back();
  const std::size_t i = it - ts.begin();
  const double t1 = ts[i - 1], t2 = ts[i];
  const double w = t2 > t1 ? (t - t1) / (t2 - t1) : 0.0;
  return (1.0 - w) * vs[i - 1] + w * vs[i];
}

}  // namespace detail

/// Max and L2 relative errors of P and C over a window, with the reference
/// linearly interpolated onto the modal sample times.
inline ErrorReport compare_runs(const Trajectory& modal, const Trajectory& reference,
                                double t_a, double t_b) {
  if (modal.times.empty() || reference.times.empty())
    throw UsageError("compare_runs: empty trajectory");
  const double lo = std::max({t_a, modal.times.front(), reference.times.front()});
  const double hi = std::min({t_b, modal.times.back(), reference.times.back()});
  if (!(lo <= hi)) throw UsageError("compare_runs: disjoint time windows");

  ErrorReport rep;
  rep.t_a = lo;
  rep.t_b = hi;
  double sum_dp = 0.0, sum_p = 0.0, sum_dc = 0.0, sum_c = 0.0;
  for (std::size_t i = 0; i < modal.times.size(); ++i) {
    const double t = modal.times[i];
    if (t < lo - 1e-15 || t > hi + 1e-15) continue;
    const double pr = detail::interp(reference.times, reference.p, t);
    const double cr = detail::interp(reference.times, reference.c, t);
    const double dp = modal.p[i] - pr, dc = modal.c[i] - cr;
    if (pr != 0.0) rep.max_rel_p = std::max(rep.max_rel_p, std::abs(dp / pr));
    if (cr != 0.0) rep.max_rel_c = std::max(rep.max_rel_c, std::abs(dc / cr));
    sum_dp += dp * dp;
    sum_p += pr * pr;
    sum_dc += dc * dc;
    sum_c += cr * cr;
    ++rep.n_samples;
  }
  rep.l2_rel_p = sum_p > 0.0 ? std::sqrt(sum_dp / sum_p) : 0.0;
  rep.l2_rel_c = sum_c > 0.0 ? std::sqrt(sum_dc / sum_c) : 0.0;
  return rep;
}

inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path);
  const bool amps = traj.amplitudes.size() == traj.times.size() && !traj.amplitudes.empty();
  os << "t,P,C";
  if (amps)
    for (std::size_t n = 0; n < traj.amplitudes[0].size(); ++n) os << ",b_" << n + 1;
  os << '\n';
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    os << format_double(traj.times[i]) << ',' << format_double(traj.p[i]) << ','
       << format_double(traj.c[i]);
    if (amps)
      for (double a : traj.amplitudes[i]) os << ',' << format_double(a);
    os << '\n';
  }
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open " + path);
  Trajectory traj;
  std::string line;
  if (!std::getline(is, line) || line.rfind("t,P,C", 0) != 0)
    throw UsageError(path + ": expected a 't,P,C' CSV header");
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ','))
      throw UsageError(path + ": malformed CSV row '" + line + "'");
    traj.record(parse_double(trim(a), path), parse_double(trim(b), path),
                parse_double(trim(c), path));
  }
  return traj;
}

}  // namespace scm
