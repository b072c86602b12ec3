#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "scm/common.hpp"

namespace scm {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

enum class HexOrientation { pointy, flat };

/// One assembly position on the offset hex grid.
struct HexCell {
  int row = 0;
  int col = 0;
  int material = 0;
};

/// Hexagonal-assembly core: across-flats size plus a row/column grid of
/// material ids. Rows run top to bottom; odd rows (pointy) or odd columns
/// (flat) are shifted by half a pitch.
class CoreLayout {
 public:
  double wrench = 0.0;
  HexOrientation orientation = HexOrientation::pointy;
  std::vector<HexCell> cells;

  int n_assemblies() const { return static_cast<int>(cells.size()); }

  Vec2 center(const HexCell& c) const {
    const double w = wrench;
    const double r = w / std::sqrt(3.0);
    if (orientation == HexOrientation::pointy)
      return {w * (c.col + 0.5 * (c.row & 1)), -1.5 * r * c.row};
    return {1.5 * r * c.col, -w * (c.row + 0.5 * (c.col & 1))};
  }

  /// Centroid of all assembly centers; reference point for half-plane splits.
  Vec2 core_center() const {
    Vec2 s{0.0, 0.0};
    for (const auto& c : cells) {
      Vec2 p = center(c);
      s.x += p.x;
      s.y += p.y;
    }
    if (!cells.empty()) {
      s.x /= cells.size();
      s.y /= cells.size();
    }
    return s;
  }

  /// Corner coordinates of cell `c`, counterclockwise.
  std::array<Vec2, 6> corners(const HexCell& c) const {
    const double r = wrench / std::sqrt(3.0);
    const Vec2 ctr = center(c);
    std::array<Vec2, 6> out;
    const double start = orientation == HexOrientation::pointy ? M_PI / 2.0 : 0.0;
    for (int k = 0; k < 6; ++k) {
      const double a = start + k * M_PI / 3.0;
      out[k] = {ctr.x + r * std::cos(a), ctr.y + r * std::sin(a)};
    }
    return out;
  }

  std::vector<int> material_ids() const {
    std::vector<int> ids;
    for (const auto& c : cells)
      if (std::find(ids.begin(), ids.end(), c.material) == ids.end()) ids.push_back(c.material);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

/// Parses the layout grammar:
///   wrench <cm> orientation <flat|pointy>
///   one line per hex-grid row, whitespace-separated material ids, `.` empty.
inline CoreLayout parse_layout(const std::string& text) {
  CoreLayout layout;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  int row = 0;
  while (std::getline(in, line)) {
    auto toks = tokenize_line(line);
    if (toks.empty()) continue;
    if (!header_seen) {
      if (toks.size() != 4 || toks[0] != "wrench" || toks[2] != "orientation")
        throw UsageError("layout header must be: wrench <cm> orientation <flat|pointy>");
      layout.wrench = parse_double(toks[1], "wrench");
      if (layout.wrench <= 0.0) throw UsageError("wrench size must be positive");
      if (toks[3] == "flat")
        layout.orientation = HexOrientation::flat;
      else if (toks[3] == "pointy")
        layout.orientation = HexOrientation::pointy;
      else
        throw UsageError("orientation must be 'flat' or 'pointy', got '" + toks[3] + "'");
      header_seen = true;
      continue;
    }
    for (int col = 0; col < static_cast<int>(toks.size()); ++col) {
      if (toks[col] == ".") continue;
      long mat = parse_long(toks[col], "layout row " + std::to_string(row));
      layout.cells.push_back({row, col, static_cast<int>(mat)});
    }
    ++row;
  }
  if (!header_seen) throw UsageError("layout file is empty");
  return layout;
}

inline std::string layout_to_string(const CoreLayout& layout) {
  std::ostringstream os;
  os << "wrench " << format_double(layout.wrench) << " orientation "
     << (layout.orientation == HexOrientation::pointy ? "pointy" : "flat") << "\n";
  if (layout.cells.empty()) return os.str();
  int max_row = 0, max_col = 0;
  for (const auto& c : layout.cells) {
    max_row = std::max(max_row, c.row);
    max_col = std::max(max_col, c.col);
  }
  std::vector<std::vector<std::string>> grid(max_row + 1,
                                             std::vector<std::string>(max_col + 1, "."));
  for (const auto& c : layout.cells) grid[c.row][c.col] = std::to_string(c.material);
  for (const auto& r : grid) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? " " : "") << r[i];
    os << "\n";
  }
  return os.str();
}

struct Triangle {
  std::array<int, 3> v;  // counterclockwise
  int material = 0;
  int assembly = 0;
};

struct BoundaryEdge {
  int v0 = 0;
  int v1 = 0;
  int triangle = 0;
};

/// Conforming triangulation of the core, positively oriented triangles.
struct TriMesh {
  std::vector<Vec2> vertices;
  std::vector<Triangle> triangles;
  std::vector<BoundaryEdge> boundary_edges;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }

  double triangle_area(int t) const {
    const auto& tr = triangles[t];
    const Vec2 &a = vertices[tr.v[0]], &b = vertices[tr.v[1]], &c = vertices[tr.v[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  double total_area() const {
    double s = 0.0;
    for (int t = 0; t < n_triangles(); ++t) s += triangle_area(t);
    return s;
  }

  int n_edges() const {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& t : triangles)
      for (int k = 0; k < 3; ++k) {
        int a = t.v[k], b = t.v[(k + 1) % 3];
        edges[{std::min(a, b), std::max(a, b)}]++;
      }
    return static_cast<int>(edges.size());
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add_u64(vertices.size());
    h.add_u64(triangles.size());
    for (const auto& v : vertices) {
      h.add_f64(v.x);
      h.add_f64(v.y);
    }
    for (const auto& t : triangles) {
      h.add_u64(t.v[0]);
      h.add_u64(t.v[1]);
      h.add_u64(t.v[2]);
      h.add_u64(static_cast<std::uint64_t>(t.material));
    }
    return h.value();
  }
};

namespace detail {

/// Vertex deduplication on a spatial hash; tolerance absorbs rounding of
/// lattice-exact coordinates.
class VertexPool {
 public:
  explicit VertexPool(double tol = 1e-9) : tol_(tol), cell_(1e-6) {}

  int insert(Vec2 p, std::vector<Vec2>& verts) {
    const std::int64_t ci = static_cast<std::int64_t>(std::floor(p.x / cell_));
    const std::int64_t cj = static_cast<std::int64_t>(std::floor(p.y / cell_));
    for (std::int64_t di = -1; di <= 1; ++di)
      for (std::int64_t dj = -1; dj <= 1; ++dj) {
        auto it = grid_.find(key(ci + di, cj + dj));
        if (it == grid_.end()) continue;
        for (int idx : it->second)
          if (std::abs(verts[idx].x - p.x) <= tol_ && std::abs(verts[idx].y - p.y) <= tol_)
            return idx;
      }
    const int idx = static_cast<int>(verts.size());
    verts.push_back(p);
    grid_[key(ci, cj)].push_back(idx);
    return idx;
  }

 private:
  static std::uint64_t key(std::int64_t i, std::int64_t j) {
    return static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ull ^ static_cast<std::uint64_t>(j);
  }
  double tol_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<int>> grid_;
};

inline void check_connected(const CoreLayout& layout) {
  const int n = layout.n_assemblies();
  if (n == 0) throw UsageError("layout has no assemblies");
  std::vector<Vec2> centers(n);
  for (int i = 0; i < n; ++i) centers[i] = layout.center(layout.cells[i]);
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  const double lim = 1.01 * layout.wrench;
  while (!q.empty()) {
    int i = q.front();
    q.pop();
    for (int j = 0; j < n; ++j) {
      if (seen[j]) continue;
      const double dx = centers[i].x - centers[j].x, dy = centers[i].y - centers[j].y;
      if (std::sqrt(dx * dx + dy * dy) <= lim) {
        seen[j] = 1;
        ++count;
        q.push(j);
      }
    }
  }
  if (count != n) throw UsageError("layout is disconnected");
}

}  // namespace detail

/// Builds the regular triangulation with kappa triangles per assembly.
/// kappa=6 is the fan from the hexagon center to its corners; 24 and 96 are
/// uniform 4-way refinements, so vertex sets nest across levels.
inline TriMesh build_mesh(const CoreLayout& layout, int kappa) {
  int level;
  switch (kappa) {
    case 6: level = 0; break;
    case 24: level = 1; break;
    case 96: level = 2; break;
    default: throw UsageError("unsupported refinement kappa=" + std::to_string(kappa) +
                              " (expected 6, 24 or 96)");
  }
  detail::check_connected(layout);

  TriMesh mesh;
  detail::VertexPool pool;
  const int s = 1 << level;  // subdivisions per fan-triangle edge

  for (int a = 0; a < layout.n_assemblies(); ++a) {
    const HexCell& cell = layout.cells[a];
    const Vec2 ctr = layout.center(cell);
    const auto crn = layout.corners(cell);
    for (int k = 0; k < 6; ++k) {
      const Vec2 pa = ctr, pb = crn[k], pc = crn[(k + 1) % 6];
      // lattice points p(i,j) = pa + (i/s)(pb-pa) + (j/s)(pc-pa), i+j <= s
      std::vector<int> ids((s + 1) * (s + 2) / 2);
      int pos = 0;
      for (int i = 0; i <= s; ++i)
        for (int j = 0; j <= s - i; ++j) {
          const double fi = static_cast<double>(i) / s, fj = static_cast<double>(j) / s;
          Vec2 p{pa.x + fi * (pb.x - pa.x) + fj * (pc.x - pa.x),
                 pa.y + fi * (pb.y - pa.y) + fj * (pc.y - pa.y)};
          ids[pos++] = pool.insert(p, mesh.vertices);
        }
      auto node = [&](int i, int j) {
        // row-major over i with rows of length s+1-i
        int offset = 0;
        for (int r = 0; r < i; ++r) offset += s + 1 - r;
        return ids[offset + j];
      };
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s - i; ++j) {
          mesh.triangles.push_back({{node(i, j), node(i + 1, j), node(i, j + 1)},
                                    cell.material, a});
          if (i + j < s - 1)
            mesh.triangles.push_back({{node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)},
                                      cell.material, a});
        }
    }
  }

  // orientation sanity and boundary extraction
  std::map<std::pair<int, int>, std::pair<int, int>> edge_use;  // (vmin,vmax) -> (count, tri)
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    if (mesh.triangle_area(t) <= 0.0) throw NumericError("negative triangle orientation");
    const auto& tr = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) {
      int a = tr.v[k], b = tr.v[(k + 1) % 3];
      auto& e = edge_use[{std::min(a, b), std::max(a, b)}];
      e.first += 1;
      e.second = t;
    }
  }
  for (const auto& [key, use] : edge_use) {
    if (use.first > 2) throw NumericError("non-manifold edge in mesh");
    if (use.first == 1) mesh.boundary_edges.push_back({key.first, key.second, use.second});
  }
  return mesh;
}

enum class RegionTag { top, bottom };

/// Signed line test on assembly centers. Point p and normal n define the
/// half-plane; centers with dot(c - p, n) >= 0 are tagged `top`, so exact
/// ties land on the top side.
struct HalfPlane {
  Vec2 point;
  Vec2 normal;
};

inline std::vector<RegionTag> split_region(const CoreLayout& layout, const HalfPlane& hp) {
  std::vector<RegionTag> tags(layout.n_assemblies());
  for (int i = 0; i < layout.n_assemblies(); ++i) {
    Vec2 c = layout.center(layout.cells[i]);
    Vec2 d{c.x - hp.point.x, c.y - hp.point.y};
    tags[i] = dot(d, hp.normal) >= 0.0 ? RegionTag::top : RegionTag::bottom;
  }
  return tags;
}

/// Horizontal split through the core center: upper half (ties included) vs lower.
inline HalfPlane horizontal_split(const CoreLayout& layout) {
  return {layout.core_center(), {0.0, 1.0}};
}

}  // namespace scm
