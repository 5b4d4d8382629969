#ifndef MIXEDVI_MESH_HPP
#define MIXEDVI_MESH_HPP

// Structured P1 triangulations of an axis-aligned rectangle whose four sides
// carry the boundary tags G1 (Dirichlet), G2 (traction), G3 (Tresca friction,
// multiplier support) and G4 (friction potential).

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mixedvi {

enum class Tag { G1 = 0, G2 = 1, G3 = 2, G4 = 3 };
enum class Side { Left = 0, Right = 1, Bottom = 2, Top = 3 };

inline constexpr std::array<Tag, 4> kAllTags{Tag::G1, Tag::G2, Tag::G3, Tag::G4};
inline constexpr std::array<Side, 4> kAllSides{Side::Left, Side::Right, Side::Bottom, Side::Top};

inline std::string_view to_string(Tag t) {
  switch (t) {
    case Tag::G1: return "G1";
    case Tag::G2: return "G2";
    case Tag::G3: return "G3";
    case Tag::G4: return "G4";
  }
  return "?";
}

inline std::string_view to_string(Side s) {
  switch (s) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    case Side::Bottom: return "bottom";
    case Side::Top: return "top";
  }
  return "?";
}

inline std::optional<Tag> parse_tag(std::string_view s) {
  for (Tag t : kAllTags)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

/// Assignment of a tag to every side of the rectangle.
struct BoundaryPartition {
  Tag left = Tag::G1;
  Tag right = Tag::G2;
  Tag bottom = Tag::G3;
  Tag top = Tag::G4;

  Tag operator[](Side s) const {
    switch (s) {
      case Side::Left: return left;
      case Side::Right: return right;
      case Side::Bottom: return bottom;
      case Side::Top: return top;
    }
    return left;
  }

  /// The side carrying `t`; only meaningful once every tag is known to be used.
  std::optional<Side> side_of(Tag t) const {
    for (Side s : kAllSides)
      if ((*this)[s] == t) return s;
    return std::nullopt;
  }

  /// Tags that no side carries. Each boundary part needs positive measure.
  std::vector<Tag> missing_tags() const {
    std::vector<Tag> out;
    for (Tag t : kAllTags)
      if (!side_of(t)) out.push_back(t);
    return out;
  }

  bool operator==(const BoundaryPartition&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct BoundaryEdge {
  std::array<int, 2> nodes;  // counter-clockwise: the domain lies to the left
  Tag tag;
  Side side;
  double length;
};

/// One entry of a trace map: a boundary edge with its endpoints.
struct TraceEdge {
  int edge;
  std::array<int, 2> nodes;
  double length;
};

class Mesh {
 public:
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<BoundaryEdge> boundary_edges;
  std::vector<int> dirichlet_nodes;  // sorted, nodes lying on G1 edges

  int nx = 0;
  int ny = 0;
  double width = 0.0;
  double height = 0.0;
  BoundaryPartition partition;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }

  double signed_area(int t) const {
    const auto& tri = triangles[t];
    const Point& a = nodes[tri[0]];
    const Point& b = nodes[tri[1]];
    const Point& c = nodes[tri[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  bool is_dirichlet(int node) const {
    return std::binary_search(dirichlet_nodes.begin(), dirichlet_nodes.end(), node);
  }

  /// Nodes not on G1, ascending.
  std::vector<int> free_nodes() const {
    std::vector<int> out;
    out.reserve(nodes.size());
    for (int i = 0; i < num_nodes(); ++i)
      if (!is_dirichlet(i)) out.push_back(i);
    return out;
  }

  /// Arc-length coordinate of `p` along `side`, measured from the side's
  /// corner with the smaller coordinate.
  double arc_position(Side side, const Point& p) const {
    return (side == Side::Left || side == Side::Right) ? p.y : p.x;
  }

  double side_length(Side side) const {
    return (side == Side::Left || side == Side::Right) ? height : width;
  }

  double tag_measure(Tag t) const {
    double total = 0.0;
    for (const auto& e : boundary_edges)
      if (e.tag == t) total += e.length;
    return total;
  }
};

namespace detail {

inline double distance(const Point& a, const Point& b) { return std::hypot(b.x - a.x, b.y - a.y); }

}  // namespace detail

/// Uniform nx-by-ny grid of [0,width]x[0,height], every cell cut along the
/// diagonal from its lower-left to its upper-right corner. Node (i, j) has
/// index j*(nx+1) + i.
inline Mesh build_rect_mesh(int nx, int ny, double width, double height,
                            const BoundaryPartition& partition = {}) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("build_rect_mesh: nx and ny must be >= 1");
  if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(width) || !std::isfinite(height))
    throw std::invalid_argument("build_rect_mesh: width and height must be positive");
  if (auto missing = partition.missing_tags(); !missing.empty())
    throw std::invalid_argument("build_rect_mesh: partition leaves tag " +
                                std::string(to_string(missing.front())) +
                                " without boundary (meas(Gamma_i) > 0 required)");

  Mesh m;
  m.nx = nx;
  m.ny = ny;
  m.width = width;
  m.height = height;
  m.partition = partition;

  const auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  // Coordinates are computed as fractions so the far sides land exactly on
  // width and height.
  m.nodes.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m.nodes.push_back({width * i / nx, height * j / ny});

  m.triangles.reserve(2 * static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int n00 = id(i, j), n10 = id(i + 1, j), n11 = id(i + 1, j + 1), n01 = id(i, j + 1);
      m.triangles.push_back({n00, n10, n11});
      m.triangles.push_back({n00, n11, n01});
    }

  auto add_edge = [&](int a, int b, Side side) {
    m.boundary_edges.push_back({{a, b}, partition[side], side, detail::distance(m.nodes[a], m.nodes[b])});
  };
  for (int i = 0; i < nx; ++i) add_edge(id(i, 0), id(i + 1, 0), Side::Bottom);
  for (int j = 0; j < ny; ++j) add_edge(id(nx, j), id(nx, j + 1), Side::Right);
  for (int i = nx; i > 0; --i) add_edge(id(i, ny), id(i - 1, ny), Side::Top);
  for (int j = ny; j > 0; --j) add_edge(id(0, j), id(0, j - 1), Side::Left);

  for (const auto& e : m.boundary_edges)
    if (e.tag == Tag::G1) {
      m.dirichlet_nodes.push_back(e.nodes[0]);
      m.dirichlet_nodes.push_back(e.nodes[1]);
    }
  std::sort(m.dirichlet_nodes.begin(), m.dirichlet_nodes.end());
  m.dirichlet_nodes.erase(std::unique(m.dirichlet_nodes.begin(), m.dirichlet_nodes.end()),
                          m.dirichlet_nodes.end());
  return m;
}

/// Boundary edges carrying `tag`, ordered lexicographically by midpoint (x, then y).
inline std::vector<TraceEdge> trace_dofs(const Mesh& mesh, Tag tag) {
  std::vector<TraceEdge> out;
  for (int e = 0; e < static_cast<int>(mesh.boundary_edges.size()); ++e) {
    const auto& be = mesh.boundary_edges[e];
    if (be.tag == tag) out.push_back({e, be.nodes, be.length});
  }
  auto midpoint = [&](const TraceEdge& t) {
    const Point& a = mesh.nodes[t.nodes[0]];
    const Point& b = mesh.nodes[t.nodes[1]];
    return std::array<double, 2>{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
  };
  std::sort(out.begin(), out.end(), [&](const TraceEdge& a, const TraceEdge& b) {
    return midpoint(a) < midpoint(b);
  });
  return out;
}

/// Debug export; schema in docs/formats.md.
inline nlohmann::json mesh_to_json(const Mesh& mesh) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["nx"] = mesh.nx;
  j["ny"] = mesh.ny;
  j["width"] = mesh.width;
  j["height"] = mesh.height;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& p : mesh.nodes) nodes.push_back({p.x, p.y});
  auto& tris = j["triangles"] = nlohmann::json::array();
  for (const auto& t : mesh.triangles) tris.push_back(t);
  auto& edges = j["boundary_edges"] = nlohmann::json::array();
  for (const auto& e : mesh.boundary_edges)
    edges.push_back({{"nodes", e.nodes}, {"tag", to_string(e.tag)}, {"side", to_string(e.side)},
                     {"length", e.length}});
  j["dirichlet_nodes"] = mesh.dirichlet_nodes;
  return j;
}

}  // namespace mixedvi

#endif  // MIXEDVI_MESH_HPP
