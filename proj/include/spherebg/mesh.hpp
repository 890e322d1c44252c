#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "spherebg/detail/mc_tables.hpp"
#include "spherebg/detail/parallel.hpp"
#include "spherebg/error.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/geometry.hpp"
#include "spherebg/io.hpp"

namespace spherebg {

struct Aabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  bool valid() const { return lo.allFinite() && hi.allFinite() && (hi.array() > lo.array()).all(); }
  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
  /// Largest corner norm; the box lies inside a ball of this radius.
  double max_corner_norm() const { return lo.cwiseAbs().cwiseMax(hi.cwiseAbs()).norm(); }
};

/// Scalar lattice over `bounds` with `nx * ny * nz` points, x fastest.
struct DensityGrid {
  std::array<int, 3> resolution{2, 2, 2};
  Aabb bounds;
  std::vector<double> values;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 spacing() const {
    return (bounds.hi - bounds.lo).cwiseQuotient(Vec3(resolution[0] - 1, resolution[1] - 1, resolution[2] - 1));
  }
  Vec3 point(int i, int j, int k) const {
    const Vec3 s = spacing();
    return bounds.lo + Vec3(i * s.x(), j * s.y(), k * s.z());
  }
  std::size_t size() const { return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2]; }

  void validate() const {
    for (int r : resolution) require(r >= 2, ErrorCode::InvariantViolation, "grid resolution must be >= 2 per axis");
    require(bounds.valid(), ErrorCode::InvariantViolation, "grid bounds must satisfy lo < hi");
    require(values.size() == size(), ErrorCode::ShapeMismatch, "grid value count does not match its resolution");
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  void validate() const {
    for (const auto& v : vertices) require(v.allFinite(), ErrorCode::InvariantViolation, "mesh vertex is not finite");
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles)
      for (int i : t) require(i >= 0 && i < n, ErrorCode::InvariantViolation, "triangle index out of range");
  }
};

/// Grid of an arbitrary scalar field; used directly for analytic fields.
inline DensityGrid sample_density_grid(const std::function<double(const Vec3&)>& field, const Aabb& bounds,
                                       std::array<int, 3> resolution) {
  DensityGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  for (int r : resolution) require(r >= 2, ErrorCode::InvalidArgument, "grid resolution must be >= 2 per axis");
  require(bounds.valid(), ErrorCode::InvalidArgument, "grid bounds must satisfy lo < hi");
  g.values.resize(g.size());
  detail::parallel_for(static_cast<std::size_t>(resolution[2]), [&](std::size_t k) {
    for (int j = 0; j < resolution[1]; ++j)
      for (int i = 0; i < resolution[0]; ++i)
        g.values[g.index(i, j, static_cast<int>(k))] = field(g.point(i, j, static_cast<int>(k)));
  });
  return g;
}

/// Foreground density on the lattice, evaluated one z-slice at a time.
inline DensityGrid sample_density_grid(const SceneParameters& p, const Aabb& bounds, std::array<int, 3> resolution) {
  for (int r : resolution) require(r >= 2, ErrorCode::InvalidArgument, "grid resolution must be >= 2 per axis");
  require(bounds.valid(), ErrorCode::InvalidArgument, "grid bounds must satisfy lo < hi");
  require(bounds.max_corner_norm() < p.sphere_radius, ErrorCode::OutOfBounds,
          "grid bounds reach outside the background sphere");
  DensityGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  g.values.resize(g.size());
  const Vec3 dir(0.0, 0.0, 1.0);
  detail::parallel_for(static_cast<std::size_t>(resolution[2]), [&](std::size_t k) {
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(resolution[0]) * resolution[1]);
    for (int j = 0; j < resolution[1]; ++j)
      for (int i = 0; i < resolution[0]; ++i) pts.push_back(g.point(i, j, static_cast<int>(k)));
    const ForegroundBatch b = eval_foreground_batch(p, pts, std::span<const Vec3>(&dir, 1));
    const std::size_t base = g.index(0, 0, static_cast<int>(k));
    for (std::size_t n = 0; n < pts.size(); ++n) g.values[base + n] = b.density[static_cast<Eigen::Index>(n)];
  });
  return g;
}

/// Marching cubes; corners with value >= threshold are inside. Vertices on
/// shared edges are shared, and the output is closed away from the grid
/// boundary. Negating field and threshold reverses every triangle, except in
/// cells with an ambiguous face, where the table separates the other pair.
inline TriangleMesh marching_cubes(const DensityGrid& grid, double threshold) {
  grid.validate();
  require(std::isfinite(threshold), ErrorCode::InvalidArgument, "threshold must be finite");
  const auto [nx, ny, nz] = grid.resolution;
  // Lattice edge id: 3 * point index + axis, axis 0/1/2 = +x/+y/+z.
  auto edge_id = [&](int i, int j, int k, int e) -> std::int64_t {
    const auto a = detail::kCornerOffset[detail::kEdgeCorners[e][0]];
    const auto b = detail::kCornerOffset[detail::kEdgeCorners[e][1]];
    const int ci[3] = {i + std::min(a[0], b[0]), j + std::min(a[1], b[1]), k + std::min(a[2], b[2])};
    const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
    return 3 * static_cast<std::int64_t>(grid.index(ci[0], ci[1], ci[2])) + axis;
  };

  // Triangles per z-slab as edge-id triples, merged in slab order below.
  std::vector<std::vector<std::array<std::int64_t, 3>>> slabs(static_cast<std::size_t>(nz - 1));
  detail::parallel_for(slabs.size(), [&](std::size_t ks) {
    const int k = static_cast<int>(ks);
    auto& out = slabs[ks];
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kCornerOffset[c];
          if (grid.at(i + o[0], j + o[1], k + o[2]) < threshold) cube |= 1 << c;
        }
        if (cube == 0 || cube == 255) continue;
        const auto& tri = detail::kTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3)
          out.push_back({edge_id(i, j, k, tri[t]), edge_id(i, j, k, tri[t + 1]), edge_id(i, j, k, tri[t + 2])});
      }
  });

  TriangleMesh mesh;
  std::vector<int> vertex_of(3 * grid.size(), -1);
  const Vec3 sp = grid.spacing();
  auto vertex = [&](std::int64_t id) {
    int& v = vertex_of[static_cast<std::size_t>(id)];
    if (v >= 0) return v;
    const std::size_t pi = static_cast<std::size_t>(id / 3);
    const int axis = static_cast<int>(id % 3);
    const int i = static_cast<int>(pi % nx), j = static_cast<int>((pi / nx) % ny), k = static_cast<int>(pi / nx / ny);
    const int d[3] = {axis == 0, axis == 1, axis == 2};
    const double f0 = grid.at(i, j, k), f1 = grid.at(i + d[0], j + d[1], k + d[2]);
    const double s = (threshold - f0) / (f1 - f0);
    Vec3 pos = grid.point(i, j, k);
    pos[axis] += s * sp[axis];
    v = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pos);
    return v;
  };
  for (const auto& slab : slabs)
    for (const auto& f : slab) mesh.triangles.push_back({vertex(f[0]), vertex(f[1]), vertex(f[2])});
  return mesh;
}

inline std::string encode_obj(const TriangleMesh& mesh) {
  mesh.validate();
  std::string out;
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
    out += line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out += line;
  }
  return out;
}

inline void export_obj(const TriangleMesh& mesh, const std::string& path) { write_file_atomic(path, encode_obj(mesh)); }

/// Reads `v` and triangular `f` records (plain 1-based indices).
inline TriangleMesh parse_obj(const std::string& text) {
  TriangleMesh mesh;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      require(static_cast<bool>(ls >> x >> y >> z), ErrorCode::ParseError, "obj line " + std::to_string(lineno));
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::array<int, 3> t;
      require(static_cast<bool>(ls >> t[0] >> t[1] >> t[2]), ErrorCode::ParseError,
              "obj line " + std::to_string(lineno));
      for (int& i : t) --i;
      mesh.triangles.push_back(t);
    }
  }
  mesh.validate();
  return mesh;
}

inline TriangleMesh load_obj(const std::string& path) { return parse_obj(read_file(path)); }

}  // namespace spherebg
