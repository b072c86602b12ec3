#pragma once

#include <array>
#include <functional>
#include <map>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "scm/common.hpp"
#include "scm/mesh.hpp"
#include "scm/sparse.hpp"
#include "scm/state.hpp"

namespace scm {

namespace fem {

struct QuadPoint {
  double l0, l1, l2;  // barycentric
  double w;           // weights sum to 1/2 over the reference triangle
};

/// Symmetric Gauss rules on the triangle, exact to degree 2, 4 and 6.
inline const std::vector<QuadPoint>& triangle_rule(int degree) {
  static const std::vector<QuadPoint> deg2 = {
      {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0},
      {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0},
      {1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0}};
  static const std::vector<QuadPoint> deg4 = [] {
    std::vector<QuadPoint> q;
    const double a = 0.445948490915965, wa = 0.223381589678011 / 2.0;
    const double b = 0.091576213509771, wb = 0.109951743655322 / 2.0;
    for (int k = 0; k < 3; ++k) {
      double l[3] = {a, a, a};
      l[k] = 1.0 - 2.0 * a;
      q.push_back({l[0], l[1], l[2], wa});
    }
    for (int k = 0; k < 3; ++k) {
      double l[3] = {b, b, b};
      l[k] = 1.0 - 2.0 * b;
      q.push_back({l[0], l[1], l[2], wb});
    }
    return q;
  }();
  static const std::vector<QuadPoint> deg6 = [] {
    std::vector<QuadPoint> q;
    const double a1 = 0.063089014491502, w1 = 0.050844906370207 / 2.0;
    const double a2 = 0.249286745170910, w2 = 0.116786275726379 / 2.0;
    for (int k = 0; k < 3; ++k) {
      double l[3] = {a1, a1, a1};
      l[k] = 1.0 - 2.0 * a1;
      q.push_back({l[0], l[1], l[2], w1});
    }
    for (int k = 0; k < 3; ++k) {
      double l[3] = {a2, a2, a2};
      l[k] = 1.0 - 2.0 * a2;
      q.push_back({l[0], l[1], l[2], w2});
    }
    const double a = 0.310352451033785, b = 0.053145049844816;
    const double c = 1.0 - a - b, w3 = 0.082851075618374 / 2.0;
    const double perms[6][3] = {{a, b, c}, {a, c, b}, {b, a, c}, {b, c, a}, {c, a, b}, {c, b, a}};
    for (auto& p : perms) q.push_back({p[0], p[1], p[2], w3});
    return q;
  }();
  switch (degree) {
    case 1: case 2: return deg2;
    case 3: case 4: return deg4;
    default: return deg6;
  }
}

struct GaussPoint1d {
  double t;  // position on [0,1]
  double w;  // weights sum to 1
};

inline const std::vector<GaussPoint1d>& edge_rule(int npoints) {
  static const std::vector<GaussPoint1d> g2 = {
      {0.5 - 0.5 / std::sqrt(3.0), 0.5}, {0.5 + 0.5 / std::sqrt(3.0), 0.5}};
  static const std::vector<GaussPoint1d> g3 = {
      {0.5 - 0.5 * std::sqrt(0.6), 5.0 / 18.0},
      {0.5, 8.0 / 18.0},
      {0.5 + 0.5 * std::sqrt(0.6), 5.0 / 18.0}};
  static const std::vector<GaussPoint1d> g4 = [] {
    const double x1 = 0.339981043584856, w1 = 0.652145154862546;
    const double x2 = 0.861136311594053, w2 = 0.347854845137454;
    return std::vector<GaussPoint1d>{{0.5 * (1 - x2), w2 / 2}, {0.5 * (1 - x1), w1 / 2},
                                     {0.5 * (1 + x1), w1 / 2}, {0.5 * (1 + x2), w2 / 2}};
  }();
  switch (npoints) {
    case 2: return g2;
    case 3: return g3;
    default: return g4;
  }
}

/// Nodal Lagrange basis of degree p on the reference triangle.
/// Local node order: vertices 0..2, then (p-1) nodes per edge (01),(12),(20)
/// walking from the first vertex, then the interior node (p=3).
struct Basis {
  int degree;
  int n_local;
  // barycentric coordinates of the local nodes
  std::vector<std::array<double, 3>> nodes;

  static const Basis& get(int p) {
    static const Basis b1 = make(1), b2 = make(2), b3 = make(3);
    switch (p) {
      case 1: return b1;
      case 2: return b2;
      case 3: return b3;
      default: throw UsageError("finite element degree must be 1, 2 or 3");
    }
  }

  /// Values of all local basis functions at barycentric point l.
  void eval(const double l[3], double* out) const {
    if (degree == 1) {
      out[0] = l[0]; out[1] = l[1]; out[2] = l[2];
      return;
    }
    if (degree == 2) {
      for (int i = 0; i < 3; ++i) out[i] = l[i] * (2.0 * l[i] - 1.0);
      const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
      for (int k = 0; k < 3; ++k) out[3 + k] = 4.0 * l[e[k][0]] * l[e[k][1]];
      return;
    }
    for (int i = 0; i < 3; ++i)
      out[i] = 0.5 * l[i] * (3.0 * l[i] - 1.0) * (3.0 * l[i] - 2.0);
    const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
    for (int k = 0; k < 3; ++k) {
      const double li = l[e[k][0]], lj = l[e[k][1]];
      out[3 + 2 * k] = 4.5 * li * lj * (3.0 * li - 1.0);
      out[3 + 2 * k + 1] = 4.5 * li * lj * (3.0 * lj - 1.0);
    }
    out[9] = 27.0 * l[0] * l[1] * l[2];
  }

  /// Barycentric gradients dN/dl_k of all local basis functions at l.
  void eval_grad(const double l[3], std::array<double, 3>* out) const {
    for (int i = 0; i < n_local; ++i) out[i] = {0.0, 0.0, 0.0};
    if (degree == 1) {
      out[0][0] = out[1][1] = out[2][2] = 1.0;
      return;
    }
    if (degree == 2) {
      for (int i = 0; i < 3; ++i) out[i][i] = 4.0 * l[i] - 1.0;
      const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
      for (int k = 0; k < 3; ++k) {
        out[3 + k][e[k][0]] = 4.0 * l[e[k][1]];
        out[3 + k][e[k][1]] = 4.0 * l[e[k][0]];
      }
      return;
    }
    for (int i = 0; i < 3; ++i)
      out[i][i] = 0.5 * (27.0 * l[i] * l[i] - 18.0 * l[i] + 2.0);
    const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
    for (int k = 0; k < 3; ++k) {
      const int i = e[k][0], j = e[k][1];
      const double li = l[i], lj = l[j];
      out[3 + 2 * k][i] = 4.5 * lj * (6.0 * li - 1.0);
      out[3 + 2 * k][j] = 4.5 * li * (3.0 * li - 1.0);
      out[3 + 2 * k + 1][i] = 4.5 * lj * (3.0 * lj - 1.0);
      out[3 + 2 * k + 1][j] = 4.5 * li * (6.0 * lj - 1.0);
    }
    out[9][0] = 27.0 * l[1] * l[2];
    out[9][1] = 27.0 * l[0] * l[2];
    out[9][2] = 27.0 * l[0] * l[1];
  }

 private:
  static Basis make(int p) {
    Basis b;
    b.degree = p;
    b.n_local = p == 1 ? 3 : (p == 2 ? 6 : 10);
    auto bary = [](double a, double c, double d) { return std::array<double, 3>{a, c, d}; };
    b.nodes = {bary(1, 0, 0), bary(0, 1, 0), bary(0, 0, 1)};
    if (p >= 2) {
      const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
      for (int k = 0; k < 3; ++k)
        for (int m = 1; m < p; ++m) {
          std::array<double, 3> n{0, 0, 0};
          n[e[k][0]] = 1.0 - static_cast<double>(m) / p;
          n[e[k][1]] = static_cast<double>(m) / p;
          b.nodes.push_back(n);
        }
    }
    if (p == 3) b.nodes.push_back(bary(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0));
    return b;
  }
};

}  // namespace fem

/// Scalar Lagrange space of degree p on a TriMesh. Dof numbering: mesh
/// vertices first, then (p-1) dofs per mesh edge, then one per triangle
/// (p=3), so shared-edge dofs coincide across neighboring elements.
class FeSpace {
 public:
  FeSpace(const TriMesh& mesh, int degree) : mesh_(&mesh), degree_(degree) {
    if (degree < 1 || degree > 3) throw UsageError("finite element degree must be 1, 2 or 3");
    // global edge table
    for (const auto& t : mesh.triangles)
      for (int k = 0; k < 3; ++k) {
        int a = t.v[k], b = t.v[(k + 1) % 3];
        auto key = std::make_pair(std::min(a, b), std::max(a, b));
        if (!edges_.count(key)) {
          int id = static_cast<int>(edges_.size());
          edges_.emplace(key, id);
        }
      }
    const int V = mesh.n_vertices();
    const int E = static_cast<int>(edges_.size());
    const int F = mesh.n_triangles();
    n_dofs_ = V + E * (degree - 1) + F * ((degree - 1) * (degree - 2) / 2);

    const auto& basis = fem::Basis::get(degree);
    dof_map_.resize(F, std::vector<int>(basis.n_local));
    for (int t = 0; t < F; ++t) {
      const auto& tr = mesh.triangles[t];
      auto& dofs = dof_map_[t];
      for (int k = 0; k < 3; ++k) dofs[k] = tr.v[k];
      if (degree >= 2) {
        const int e[3][2] = {{0, 1}, {1, 2}, {2, 0}};
        for (int k = 0; k < 3; ++k) {
          int a = tr.v[e[k][0]], b = tr.v[e[k][1]];
          int eid = edges_.at({std::min(a, b), std::max(a, b)});
          if (degree == 2) {
            dofs[3 + k] = V + eid;
          } else {
            // two nodes per edge; first local node is nearer vertex a
            const int base = V + 2 * eid;
            if (a < b) {
              dofs[3 + 2 * k] = base;
              dofs[3 + 2 * k + 1] = base + 1;
            } else {
              dofs[3 + 2 * k] = base + 1;
              dofs[3 + 2 * k + 1] = base;
            }
          }
        }
        if (degree == 3) dofs[9] = V + 2 * E + t;
      }
    }
  }

  const TriMesh& mesh() const { return *mesh_; }
  int degree() const { return degree_; }
  int n_dofs() const { return n_dofs_; }
  int n_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<int>& element_dofs(int t) const { return dof_map_[t]; }
  int n_local() const { return fem::Basis::get(degree_).n_local; }

  /// Physical coordinates of every dof's interpolation node.
  std::vector<Vec2> node_positions() const {
    std::vector<Vec2> pos(n_dofs_);
    const auto& basis = fem::Basis::get(degree_);
    for (int t = 0; t < mesh_->n_triangles(); ++t) {
      const auto& tr = mesh_->triangles[t];
      const Vec2 p0 = mesh_->vertices[tr.v[0]], p1 = mesh_->vertices[tr.v[1]],
                 p2 = mesh_->vertices[tr.v[2]];
      for (int i = 0; i < basis.n_local; ++i) {
        const auto& l = basis.nodes[i];
        pos[dof_map_[t][i]] = {l[0] * p0.x + l[1] * p1.x + l[2] * p2.x,
                               l[0] * p0.y + l[1] * p1.y + l[2] * p2.y};
      }
    }
    return pos;
  }

  /// Nodal interpolation of a scalar function.
  Eigen::VectorXd interpolate(const std::function<double(Vec2)>& f) const {
    Eigen::VectorXd u(n_dofs_);
    auto pos = node_positions();
    for (int i = 0; i < n_dofs_; ++i) u[i] = f(pos[i]);
    return u;
  }

 private:
  const TriMesh* mesh_;
  int degree_;
  int n_dofs_;
  std::map<std::pair<int, int>, int> edges_;
  std::vector<std::vector<int>> dof_map_;
};

namespace fem {

/// Element-parallel assembly: local matrices are computed concurrently,
/// the scatter-add runs serially in element order so results do not depend
/// on the thread count.
template <typename LocalFn>
CsrMatrix assemble_elementwise(const FeSpace& space, LocalFn&& local, int threads) {
  const int F = space.mesh().n_triangles();
  const int nl = space.n_local();
  std::vector<Eigen::MatrixXd> locals(F);
  std::exception_ptr err;
  auto work = [&](int begin, int end, std::exception_ptr* slot) {
    try {
      for (int t = begin; t < end; ++t) locals[t] = local(t);
    } catch (...) {
      *slot = std::current_exception();
    }
  };
  if (threads <= 1 || F < 64) {
    work(0, F, &err);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(threads);
    const int chunk = (F + threads - 1) / threads;
    for (int k = 0; k < threads; ++k) {
      const int b = k * chunk, e = std::min(F, b + chunk);
      if (b < e) pool.emplace_back(work, b, e, &errs[k]);
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
      if (e && !err) err = e;
  }
  if (err) std::rethrow_exception(err);
  // serial scatter in element order, zero entries kept: the sparsity pattern
  // depends only on the space, never on coefficient values
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(F) * nl * nl);
  for (int t = 0; t < F; ++t) {
    const auto& dofs = space.element_dofs(t);
    for (int i = 0; i < nl; ++i)
      for (int j = 0; j < nl; ++j) trip.push_back({dofs[i], dofs[j], locals[t](i, j)});
  }
  return CsrMatrix::from_triplets(space.n_dofs(), space.n_dofs(), std::move(trip));
}

}  // namespace fem

/// Mass matrix with a piecewise-constant per-material weight,
/// integrated exactly (rule of degree 2p).
inline CsrMatrix assemble_mass(const FeSpace& space, const std::map<int, double>& weight,
                               int threads = 1) {
  const auto& basis = fem::Basis::get(space.degree());
  const auto& rule = fem::triangle_rule(2 * space.degree());
  const int nl = basis.n_local;
  // basis values per quadrature point are element-independent
  std::vector<std::vector<double>> vals(rule.size(), std::vector<double>(nl));
  for (std::size_t q = 0; q < rule.size(); ++q) {
    double l[3] = {rule[q].l0, rule[q].l1, rule[q].l2};
    basis.eval(l, vals[q].data());
  }
  const TriMesh& mesh = space.mesh();
  auto local = [&](int t) {
    auto it = weight.find(mesh.triangles[t].material);
    if (it == weight.end())
      throw UsageError("missing material weight for id " +
                       std::to_string(mesh.triangles[t].material));
    const double w = it->second;
    const double jac = 2.0 * mesh.triangle_area(t);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(nl, nl);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double f = w * jac * rule[q].w;
      for (int i = 0; i < nl; ++i)
        for (int j = 0; j <= i; ++j) m(i, j) += f * vals[q][i] * vals[q][j];
    }
    for (int i = 0; i < nl; ++i)
      for (int j = i + 1; j < nl; ++j) m(i, j) = m(j, i);
    return m;
  };
  return fem::assemble_elementwise(space, local, threads);
}

/// Stiffness matrix for -div(D grad .) with per-material diffusion D.
inline CsrMatrix assemble_stiffness(const FeSpace& space, const std::map<int, double>& diffusion,
                                    int threads = 1) {
  const auto& basis = fem::Basis::get(space.degree());
  const auto& rule = fem::triangle_rule(std::max(2 * (space.degree() - 1), 1));
  const int nl = basis.n_local;
  std::vector<std::vector<std::array<double, 3>>> grads(rule.size(),
                                                        std::vector<std::array<double, 3>>(nl));
  for (std::size_t q = 0; q < rule.size(); ++q) {
    double l[3] = {rule[q].l0, rule[q].l1, rule[q].l2};
    basis.eval_grad(l, grads[q].data());
  }
  const TriMesh& mesh = space.mesh();
  auto local = [&](int t) {
    auto it = diffusion.find(mesh.triangles[t].material);
    if (it == diffusion.end())
      throw UsageError("missing diffusion coefficient for material id " +
                       std::to_string(mesh.triangles[t].material));
    const double d = it->second;
    if (!(d > 0.0)) throw UsageError("diffusion coefficient must be positive");
    const auto& tr = mesh.triangles[t];
    const Vec2 p0 = mesh.vertices[tr.v[0]], p1 = mesh.vertices[tr.v[1]],
               p2 = mesh.vertices[tr.v[2]];
    const double a2 = 2.0 * mesh.triangle_area(t);
    // physical gradients of the barycentric coordinates
    const double gl[3][2] = {{(p1.y - p2.y) / a2, (p2.x - p1.x) / a2},
                             {(p2.y - p0.y) / a2, (p0.x - p2.x) / a2},
                             {(p0.y - p1.y) / a2, (p1.x - p0.x) / a2}};
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(nl, nl);
    std::vector<std::array<double, 2>> g(nl);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      for (int i = 0; i < nl; ++i) {
        g[i] = {0.0, 0.0};
        for (int k = 0; k < 3; ++k) {
          g[i][0] += grads[q][i][k] * gl[k][0];
          g[i][1] += grads[q][i][k] * gl[k][1];
        }
      }
      const double f = d * a2 * rule[q].w;
      for (int i = 0; i < nl; ++i)
        for (int j = 0; j <= i; ++j) m(i, j) += f * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
    }
    for (int i = 0; i < nl; ++i)
      for (int j = i + 1; j < nl; ++j) m(i, j) = m(j, i);
    return m;
  };
  return fem::assemble_elementwise(space, local, threads);
}

/// Boundary term of the albedo condition: gamma * integral over the outer
/// boundary of products of traces. Support only on boundary dofs.
inline CsrMatrix assemble_albedo(const FeSpace& space, double gamma) {
  if (!(gamma >= 0.0)) throw UsageError("albedo factor must be >= 0");
  const auto& basis = fem::Basis::get(space.degree());
  const auto& rule = fem::edge_rule(space.degree() + 1);
  const int nl = basis.n_local;
  const TriMesh& mesh = space.mesh();
  std::vector<Triplet> trip;
  if (gamma == 0.0) return CsrMatrix::from_triplets(space.n_dofs(), space.n_dofs(), {});
  std::vector<double> vals(nl);
  for (const auto& be : mesh.boundary_edges) {
    const auto& tr = mesh.triangles[be.triangle];
    int la = -1, lb = -1;
    for (int k = 0; k < 3; ++k) {
      if (tr.v[k] == be.v0) la = k;
      if (tr.v[k] == be.v1) lb = k;
    }
    if (la < 0 || lb < 0) throw NumericError("boundary edge not on its triangle");
    const Vec2 a = mesh.vertices[be.v0], b = mesh.vertices[be.v1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const auto& dofs = space.element_dofs(be.triangle);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(nl, nl);
    for (const auto& gp : rule) {
      double l[3] = {0.0, 0.0, 0.0};
      l[la] = 1.0 - gp.t;
      l[lb] = gp.t;
      basis.eval(l, vals.data());
      const double f = gamma * len * gp.w;
      for (int i = 0; i < nl; ++i) {
        if (vals[i] == 0.0) continue;
        for (int j = 0; j < nl; ++j)
          if (vals[j] != 0.0) trip.push_back({dofs[i], dofs[j], f * vals[i] * vals[j]});
      }
    }
  }
  return CsrMatrix::from_triplets(space.n_dofs(), space.n_dofs(), std::move(trip));
}

/// Sparse pencil (A_h, B_h) over flux-group and precursor blocks, all blocks
/// square of the scalar space size. Dofs are ordered block-by-field:
/// phi_1, .., phi_G, c_1, .., c_M.
struct BlockOperator {
  CsrMatrix a;
  CsrMatrix b;
  int n_scalar = 0;
  int n_groups = 0;
  int n_precursors = 0;

  int n_fields() const { return n_groups + n_precursors; }
  int size() const { return n_scalar * n_fields(); }
  int offset(int field) const { return field * n_scalar; }

  std::vector<int> block_layout() const {
    std::vector<int> off(n_fields());
    for (int f = 0; f < n_fields(); ++f) off[f] = offset(f);
    return off;
  }
};

inline BlockOperator assemble_block_system(const ReactorState& state, const FeSpace& space,
                                           int threads = 1) {
  const int G = state.n_groups();
  const int M = state.n_precursors();
  const int n = space.n_dofs();
  const double beta = state.kinetics.beta_total();

  // mesh materials must all be covered by the state
  for (const auto& t : space.mesh().triangles) state.material(t.material);

  auto weight_map = [&](const std::function<double(const GroupConstants&)>& f) {
    std::map<int, double> w;
    for (const auto& [id, gc] : state.materials) w[id] = f(gc);
    return w;
  };

  std::vector<Triplet> ta, tb;
  // zero-valued coupling blocks are kept structurally so the nonzero
  // pattern of A stays symmetric for any chi / beta configuration
  auto add_block = [](std::vector<Triplet>& out, const CsrMatrix& m, int roff, int coff,
                      double scale) {
    const auto& rp = m.row_ptr();
    for (int r = 0; r < m.rows(); ++r)
      for (int k = rp[r]; k < rp[r + 1]; ++k)
        out.push_back({r + roff, m.col_idx()[k] + coff, scale * m.values()[k]});
  };

  const CsrMatrix mass_unit = assemble_mass(space, weight_map([](const GroupConstants&) {
                                              return 1.0;
                                            }),
                                            threads);

  for (int g = 0; g < G; ++g) {
    const int off_g = g * n;
    const CsrMatrix k_g = assemble_stiffness(
        space, weight_map([&](const GroupConstants& gc) { return gc.diffusion[g]; }), threads);
    const CsrMatrix m_rem = assemble_mass(
        space, weight_map([&](const GroupConstants& gc) { return gc.removal[g]; }), threads);
    const CsrMatrix alb = assemble_albedo(space, state.albedo[g]);
    add_block(ta, k_g, off_g, off_g, 1.0);
    add_block(ta, m_rem, off_g, off_g, 1.0);
    add_block(ta, alb, off_g, off_g, 1.0);
    for (int gp = 0; gp < G; ++gp) {
      // prompt fission production into group g
      const double chi = state.kinetics.chi_prompt[g];
      const CsrMatrix m_fis = assemble_mass(
          space, weight_map([&](const GroupConstants& gc) { return gc.nu_fission[gp]; }),
          threads);
      add_block(ta, m_fis, off_g, gp * n, -(1.0 - beta) * chi);
      // in-scatter from group gp
      if (gp != g) {
        const CsrMatrix m_s = assemble_mass(
            space,
            weight_map([&](const GroupConstants& gc) { return gc.scatter[g][gp]; }), threads);
        add_block(ta, m_s, off_g, gp * n, -1.0);
      }
    }
    // delayed source
    for (int m = 0; m < M; ++m) {
      const double c = state.kinetics.chi_delayed[g] * state.kinetics.lambda[m];
      add_block(ta, mass_unit, off_g, (G + m) * n, -c);
    }
    // B: velocity-weighted mass
    add_block(tb, mass_unit, off_g, off_g, 1.0 / state.kinetics.velocities[g]);
  }
  for (int m = 0; m < M; ++m) {
    const int off_m = (G + m) * n;
    for (int g = 0; g < G; ++g) {
      const double bm = state.kinetics.beta[m];
      if (bm != 0.0) {
        const CsrMatrix m_fis = assemble_mass(
            space, weight_map([&](const GroupConstants& gc) { return gc.nu_fission[g]; }),
            threads);
        add_block(ta, m_fis, off_m, g * n, -bm);
      }
    }
    add_block(ta, mass_unit, off_m, off_m, state.kinetics.lambda[m]);
    add_block(tb, mass_unit, off_m, off_m, 1.0);
  }

  BlockOperator op;
  const int total = (G + M) * n;
  op.a = CsrMatrix::from_triplets(total, total, std::move(ta));
  op.b = CsrMatrix::from_triplets(total, total, std::move(tb));
  op.n_scalar = n;
  op.n_groups = G;
  op.n_precursors = M;
  return op;
}

}  // namespace scm
