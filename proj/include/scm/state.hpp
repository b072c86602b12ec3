#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scm/common.hpp"
#include "scm/mesh.hpp"

namespace scm {

/// Two-group (general G-group) material constants, all in 1/cm except the
/// diffusion coefficients (cm). `removal` is the full removal cross-section
/// of the group, absorption plus out-scatter.
struct GroupConstants {
  std::vector<double> diffusion;               // D_g
  std::vector<double> removal;                 // Sigma_g
  std::vector<std::vector<double>> scatter;    // scatter[to][from], zero diagonal
  std::vector<double> nu_fission;              // nu Sigma_fg

  int n_groups() const { return static_cast<int>(removal.size()); }

  double scatter_out(int from) const {
    double s = 0.0;
    for (int g = 0; g < n_groups(); ++g)
      if (g != from) s += scatter[g][from];
    return s;
  }

  void validate(const std::string& ctx) const {
    const int G = n_groups();
    if (static_cast<int>(diffusion.size()) != G || static_cast<int>(nu_fission.size()) != G ||
        static_cast<int>(scatter.size()) != G)
      throw UsageError(ctx + ": inconsistent group counts");
    auto chk = [&](double v, const char* what) {
      if (!std::isfinite(v) || v < 0.0)
        throw UsageError(ctx + ": " + what + " must be finite and >= 0");
    };
    for (int g = 0; g < G; ++g) {
      chk(diffusion[g], "diffusion");
      chk(removal[g], "removal");
      chk(nu_fission[g], "nu_fission");
      if (static_cast<int>(scatter[g].size()) != G)
        throw UsageError(ctx + ": scatter matrix must be GxG");
      for (double s : scatter[g]) chk(s, "scatter");
      if (removal[g] < scatter_out(g) - 1e-15 * removal[g])
        throw UsageError(ctx + ": removal < out-scatter in group " + std::to_string(g + 1));
    }
  }
};

/// Absorption per group: removal minus out-scatter. Group-resolved tables
/// often quote the sum, this recovers the unambiguous parts.
inline std::vector<double> removal_split(const GroupConstants& gc) {
  std::vector<double> absorption(gc.n_groups());
  for (int g = 0; g < gc.n_groups(); ++g) {
    absorption[g] = gc.removal[g] - gc.scatter_out(g);
    if (absorption[g] < 0.0)
      throw UsageError("removal_split: negative absorption in group " + std::to_string(g + 1) +
                       " (removal smaller than out-scatter)");
  }
  return absorption;
}

struct KineticsParams {
  std::vector<double> velocities;   // v_g, cm/s
  std::vector<double> beta;         // per precursor family
  std::vector<double> lambda;       // decay constants, 1/s
  std::vector<double> chi_prompt;   // per group, sums to 1
  std::vector<double> chi_delayed;  // per group, sums to 1

  int n_groups() const { return static_cast<int>(velocities.size()); }
  int n_precursors() const { return static_cast<int>(beta.size()); }

  double beta_total() const {
    double s = 0.0;
    for (double b : beta) s += b;
    return s;
  }

  void validate() const {
    if (beta.size() != lambda.size())
      throw UsageError("kinetics: beta and lambda must have one entry per precursor family");
    if (chi_prompt.size() != velocities.size() || chi_delayed.size() != velocities.size())
      throw UsageError("kinetics: chi vectors must have one entry per group");
    for (double v : velocities)
      if (!(v > 0.0)) throw UsageError("kinetics: velocities must be positive");
    for (double l : lambda)
      if (!(l > 0.0)) throw UsageError("kinetics: decay constants must be positive");
    for (double b : beta)
      if (!(b >= 0.0)) throw UsageError("kinetics: beta must be nonnegative");
    if (!(beta_total() < 1.0)) throw UsageError("kinetics: total beta must be < 1");
    auto sums_to_one = [](const std::vector<double>& chi) {
      double s = 0.0;
      for (double c : chi) s += c;
      return std::abs(s - 1.0) <= 1e-12;
    };
    if (!sums_to_one(chi_prompt) || !sums_to_one(chi_delayed))
      throw UsageError("kinetics: chi spectra must sum to 1");
  }
};

/// One constant-coefficient reactor configuration.
struct ReactorState {
  std::map<int, GroupConstants> materials;
  KineticsParams kinetics;
  std::vector<double> albedo;  // gamma_g per group
  std::string label;

  int n_groups() const { return kinetics.n_groups(); }
  int n_precursors() const { return kinetics.n_precursors(); }

  const GroupConstants& material(int id) const {
    auto it = materials.find(id);
    if (it == materials.end())
      throw UsageError("unknown material id " + std::to_string(id) + " in state '" + label + "'");
    return it->second;
  }

  void validate() const {
    kinetics.validate();
    if (static_cast<int>(albedo.size()) != n_groups())
      throw UsageError("state: albedo needs one entry per group");
    for (double g : albedo)
      if (!(g >= 0.0)) throw UsageError("state: albedo factors must be >= 0");
    for (const auto& [id, gc] : materials) {
      gc.validate("material " + std::to_string(id));
      if (gc.n_groups() != n_groups())
        throw UsageError("material " + std::to_string(id) + ": group count mismatch");
    }
  }

  /// Checks coverage against a layout and returns human-readable warnings
  /// for suspicious data (order-of-magnitude outliers in a cross-section row).
  std::vector<std::string> validation_warnings() const {
    std::vector<std::string> notes;
    const int G = n_groups();
    for (int g = 0; g < G; ++g) {
      std::vector<std::pair<int, double>> vals;
      for (const auto& [id, gc] : materials) vals.emplace_back(id, gc.removal[g]);
      if (vals.size() < 2) continue;
      double median;
      {
        std::vector<double> v;
        for (auto& p : vals) v.push_back(p.second);
        std::sort(v.begin(), v.end());
        median = v[v.size() / 2];
      }
      for (auto& [id, v] : vals)
        if (median > 0.0 && v > 8.0 * median)
          notes.push_back("material " + std::to_string(id) + ": removal group " +
                          std::to_string(g + 1) + " = " + format_double(v) +
                          " is an order of magnitude above the core median " +
                          format_double(median) + "; loaded verbatim");
    }
    return notes;
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add_str(label);
    h.add_u64(materials.size());
    for (const auto& [id, gc] : materials) {
      h.add_u64(static_cast<std::uint64_t>(id));
      for (double v : gc.diffusion) h.add_f64(v);
      for (double v : gc.removal) h.add_f64(v);
      for (const auto& row : gc.scatter)
        for (double v : row) h.add_f64(v);
      for (double v : gc.nu_fission) h.add_f64(v);
    }
    for (double v : kinetics.velocities) h.add_f64(v);
    for (double v : kinetics.beta) h.add_f64(v);
    for (double v : kinetics.lambda) h.add_f64(v);
    for (double v : kinetics.chi_prompt) h.add_f64(v);
    for (double v : kinetics.chi_delayed) h.add_f64(v);
    for (double v : albedo) h.add_f64(v);
    return h.value();
  }
};

/// Spatial scope of a perturbation: the whole core or one side of a
/// half-plane split on assembly centers.
struct PerturbRegion {
  enum class Kind { all, top, bottom, halfplane_top, halfplane_bottom } kind = Kind::all;
  HalfPlane plane{};  // used by halfplane_* kinds
};

struct Perturbation {
  int target_material = 0;
  std::string target_quantity;  // diffusion1.., removal1.., scatter12, nufission1..
  PerturbRegion region;
  double factor = 1.0;
};

namespace detail {

inline double* quantity_ref(GroupConstants& gc, const std::string& name) {
  const int G = gc.n_groups();
  for (int g = 0; g < G; ++g) {
    const std::string suffix = std::to_string(g + 1);
    if (name == "diffusion" + suffix) return &gc.diffusion[g];
    if (name == "removal" + suffix) return &gc.removal[g];
    if (name == "nufission" + suffix) return &gc.nu_fission[g];
  }
  for (int to = 0; to < G; ++to)
    for (int from = 0; from < G; ++from)
      if (name == "scatter" + std::to_string(from + 1) + std::to_string(to + 1))
        return &gc.scatter[to][from];
  return nullptr;
}

}  // namespace detail

struct PerturbedSystem {
  ReactorState state;
  CoreLayout layout;
};

/// Applies a multiplicative perturbation to one cross-section of one
/// material. A half-plane region that splits a material spatially mints a
/// new material id for the affected sub-region and retags the layout.
inline PerturbedSystem apply_perturbation(const ReactorState& state, const Perturbation& pert,
                                          const CoreLayout& layout) {
  if (!(pert.factor > 0.0)) throw UsageError("perturbation factor must be positive");
  PerturbedSystem out{state, layout};
  auto it = out.state.materials.find(pert.target_material);
  if (it == out.state.materials.end())
    throw UsageError("perturbation targets unknown material id " +
                     std::to_string(pert.target_material));

  std::vector<RegionTag> tags;
  bool whole_domain = pert.region.kind == PerturbRegion::Kind::all;
  bool want_top = false;
  if (!whole_domain) {
    HalfPlane hp;
    switch (pert.region.kind) {
      case PerturbRegion::Kind::top:
        hp = horizontal_split(layout);
        want_top = true;
        break;
      case PerturbRegion::Kind::bottom:
        hp = horizontal_split(layout);
        want_top = false;
        break;
      case PerturbRegion::Kind::halfplane_top:
        hp = pert.region.plane;
        want_top = true;
        break;
      case PerturbRegion::Kind::halfplane_bottom:
        hp = pert.region.plane;
        want_top = false;
        break;
      default: break;
    }
    tags = split_region(layout, hp);
  }

  // cells of the target material inside/outside the region
  std::vector<int> inside, outside;
  for (int i = 0; i < layout.n_assemblies(); ++i) {
    if (layout.cells[i].material != pert.target_material) continue;
    const bool in = whole_domain || (tags[i] == RegionTag::top) == want_top;
    (in ? inside : outside).push_back(i);
  }

  auto scale = [&](GroupConstants& gc) {
    double* q = detail::quantity_ref(gc, pert.target_quantity);
    if (!q) throw UsageError("unknown cross-section quantity '" + pert.target_quantity + "'");
    *q *= pert.factor;
    gc.validate("perturbed material");
  };

  if (whole_domain || outside.empty()) {
    if (inside.empty() && !whole_domain) return out;  // material absent from region
    scale(it->second);
    return out;
  }
  if (inside.empty()) return out;

  // region splits the material: mint a fresh id for the affected cells
  int new_id = 0;
  for (const auto& [id, gc] : out.state.materials) new_id = std::max(new_id, id);
  ++new_id;
  GroupConstants minted = it->second;
  scale(minted);
  out.state.materials.emplace(new_id, minted);
  for (int i : inside) out.layout.cells[i].material = new_id;
  return out;
}

// ---------------------------------------------------------------------------
// state file format
// ---------------------------------------------------------------------------
//
//   label <name>
//   groups <G>
//   precursors <M>
//   material <id>
//     diffusion <D_1> ... <D_G>
//     removal   <S_1> ... <S_G>
//     scatter <from> <to> <value>        (repeatable)
//     nufission <nSf_1> ... <nSf_G>
//   kinetics
//     velocity <v_1> ... <v_G>
//     beta <b_1> ... <b_M>
//     lambda <l_1> ... <l_M>
//     chi_prompt <x_1> ... <x_G>
//     chi_delayed <x_1> ... <x_G>
//   albedo <g_1> ... <g_G>
//
// `#` starts a comment. Unknown keys are rejected.

inline ReactorState parse_state(const std::string& text) {
  ReactorState st;
  int groups = 0, precursors = 0;
  std::istringstream in(text);
  std::string line;
  GroupConstants* cur_mat = nullptr;
  bool in_kinetics = false;
  int lineno = 0;

  auto need = [&](const std::vector<std::string>& toks, std::size_t n, const char* key) {
    if (toks.size() != n + 1)
      throw UsageError(std::string("state file line ") + std::to_string(lineno) + ": '" + key +
                       "' expects " + std::to_string(n) + " values");
  };
  auto values = [&](const std::vector<std::string>& toks) {
    std::vector<double> v;
    for (std::size_t i = 1; i < toks.size(); ++i)
      v.push_back(parse_double(toks[i], "state file line " + std::to_string(lineno)));
    return v;
  };

  while (std::getline(in, line)) {
    ++lineno;
    auto toks = tokenize_line(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    if (key == "label") {
      need(toks, 1, "label");
      st.label = toks[1];
    } else if (key == "groups") {
      need(toks, 1, "groups");
      groups = static_cast<int>(parse_long(toks[1], "groups"));
      if (groups < 1) throw UsageError("state: groups must be >= 1");
    } else if (key == "precursors") {
      need(toks, 1, "precursors");
      precursors = static_cast<int>(parse_long(toks[1], "precursors"));
      if (precursors < 0) throw UsageError("state: precursors must be >= 0");
    } else if (key == "material") {
      need(toks, 1, "material");
      if (groups == 0) throw UsageError("state: 'groups' must precede materials");
      int id = static_cast<int>(parse_long(toks[1], "material id"));
      if (st.materials.count(id))
        throw UsageError("state: duplicate material id " + std::to_string(id));
      GroupConstants gc;
      gc.diffusion.assign(groups, 0.0);
      gc.removal.assign(groups, 0.0);
      gc.nu_fission.assign(groups, 0.0);
      gc.scatter.assign(groups, std::vector<double>(groups, 0.0));
      cur_mat = &st.materials.emplace(id, std::move(gc)).first->second;
      in_kinetics = false;
    } else if (key == "kinetics") {
      need(toks, 0, "kinetics");
      in_kinetics = true;
      cur_mat = nullptr;
    } else if (key == "albedo") {
      need(toks, static_cast<std::size_t>(groups), "albedo");
      st.albedo = values(toks);
      in_kinetics = false;
      cur_mat = nullptr;
    } else if (cur_mat && key == "diffusion") {
      need(toks, static_cast<std::size_t>(groups), "diffusion");
      cur_mat->diffusion = values(toks);
    } else if (cur_mat && key == "removal") {
      need(toks, static_cast<std::size_t>(groups), "removal");
      cur_mat->removal = values(toks);
    } else if (cur_mat && key == "nufission") {
      need(toks, static_cast<std::size_t>(groups), "nufission");
      cur_mat->nu_fission = values(toks);
    } else if (cur_mat && key == "scatter") {
      need(toks, 3, "scatter");
      int from = static_cast<int>(parse_long(toks[1], "scatter from"));
      int to = static_cast<int>(parse_long(toks[2], "scatter to"));
      if (from < 1 || from > groups || to < 1 || to > groups || from == to)
        throw UsageError("state: scatter indices out of range on line " + std::to_string(lineno));
      cur_mat->scatter[to - 1][from - 1] = parse_double(toks[3], "scatter value");
    } else if (in_kinetics && key == "velocity") {
      need(toks, static_cast<std::size_t>(groups), "velocity");
      st.kinetics.velocities = values(toks);
    } else if (in_kinetics && key == "beta") {
      need(toks, static_cast<std::size_t>(precursors), "beta");
      st.kinetics.beta = values(toks);
    } else if (in_kinetics && key == "lambda") {
      need(toks, static_cast<std::size_t>(precursors), "lambda");
      st.kinetics.lambda = values(toks);
    } else if (in_kinetics && key == "chi_prompt") {
      need(toks, static_cast<std::size_t>(groups), "chi_prompt");
      st.kinetics.chi_prompt = values(toks);
    } else if (in_kinetics && key == "chi_delayed") {
      need(toks, static_cast<std::size_t>(groups), "chi_delayed");
      st.kinetics.chi_delayed = values(toks);
    } else {
      throw UsageError("state file line " + std::to_string(lineno) + ": unknown key '" + key +
                       "'");
    }
  }
  st.validate();
  return st;
}

inline std::string state_to_string(const ReactorState& st) {
  std::ostringstream os;
  auto row = [&](const char* key, const std::vector<double>& v) {
    os << key;
    for (double x : v) os << ' ' << format_double(x);
    os << '\n';
  };
  os << "label " << st.label << '\n';
  os << "groups " << st.n_groups() << '\n';
  os << "precursors " << st.n_precursors() << '\n';
  for (const auto& [id, gc] : st.materials) {
    os << "material " << id << '\n';
    row("  diffusion", gc.diffusion);
    row("  removal", gc.removal);
    for (int to = 0; to < gc.n_groups(); ++to)
      for (int from = 0; from < gc.n_groups(); ++from)
        if (gc.scatter[to][from] != 0.0)
          os << "  scatter " << from + 1 << ' ' << to + 1 << ' '
             << format_double(gc.scatter[to][from]) << '\n';
    row("  nufission", gc.nu_fission);
  }
  os << "kinetics\n";
  row("  velocity", st.kinetics.velocities);
  row("  beta", st.kinetics.beta);
  row("  lambda", st.kinetics.lambda);
  row("  chi_prompt", st.kinetics.chi_prompt);
  row("  chi_delayed", st.kinetics.chi_delayed);
  row("albedo", st.albedo);
  return os.str();
}

inline ReactorState load_state_file(const std::string& path) {
  return parse_state(read_text_file(path));
}

}  // namespace scm
