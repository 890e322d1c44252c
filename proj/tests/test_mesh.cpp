#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "spherebg/mesh.hpp"
#include "spherebg/random.hpp"

using namespace spherebg;
namespace fs = std::filesystem;

namespace {

double sphere_density(const Vec3& x, double r) { return std::max(0.0, r - x.norm()); }

DensityGrid sphere_grid(int n, double r = 1.0, double half = 1.2) {
  const Aabb b{Vec3::Constant(-half), Vec3::Constant(half)};
  return sample_density_grid([r](const Vec3& x) { return sphere_density(x, r); }, b, {n, n, n});
}

/// Number of undirected edges not shared by exactly two triangles.
int open_edges(const TriangleMesh& m) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  int bad = 0;
  for (const auto& [edge, n] : count) bad += n != 2;
  return bad;
}

/// Triangles as vertex-position triples, rotated to start at the smallest
/// vertex so that the set ignores index order but keeps orientation.
std::set<std::array<double, 9>> oriented_triangles(const TriangleMesh& m, bool reverse) {
  std::set<std::array<double, 9>> out;
  for (auto t : m.triangles) {
    if (reverse) std::swap(t[1], t[2]);
    auto less = [&](int a, int b) {
      const Vec3 &p = m.vertices[a], &q = m.vertices[b];
      return std::lexicographical_compare(p.data(), p.data() + 3, q.data(), q.data() + 3);
    };
    std::rotate(t.begin(), std::min_element(t.begin(), t.end(), less), t.end());
    std::array<double, 9> key;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) key[3 * i + j] = m.vertices[t[i]][j];
    out.insert(key);
  }
  return out;
}

double max_radius_error(const TriangleMesh& m, double r) {
  double e = 0.0;
  for (const auto& v : m.vertices) e = std::max(e, std::abs(v.norm() - r));
  return e;
}

}  // namespace

TEST(DensityGrid, CornersOfTwoByTwoByTwo) {
  const Aabb b{Vec3(-0.5, -1.0, 0.0), Vec3(1.5, 0.25, 2.0)};
  const auto g = sample_density_grid([](const Vec3& x) { return x.x() + 10.0 * x.y() + 100.0 * x.z(); }, b, {2, 2, 2});
  ASSERT_EQ(g.values.size(), 8u);
  std::size_t k = 0;
  for (double z : {0.0, 2.0})
    for (double y : {-1.0, 0.25})
      for (double x : {-0.5, 1.5}) EXPECT_DOUBLE_EQ(g.values[k++], x + 10.0 * y + 100.0 * z);
}

TEST(DensityGrid, AnalyticFieldMatchesClosedForm) {
  const Aabb b{Vec3(-1.0, -0.5, -0.8), Vec3(0.6, 1.0, 0.8)};
  const std::array<int, 3> res{7, 5, 4};
  const auto g = sample_density_grid([](const Vec3& x) { return x.norm(); }, b, res);
  for (int k = 0; k < res[2]; ++k)
    for (int j = 0; j < res[1]; ++j)
      for (int i = 0; i < res[0]; ++i) {
        const double x = -1.0 + 1.6 * i / 6.0, y = -0.5 + 1.5 * j / 4.0, z = -0.8 + 1.6 * k / 3.0;
        ASSERT_NEAR(g.values[static_cast<std::size_t>((k * res[1] + j) * res[0] + i)],
                    std::sqrt(x * x + y * y + z * z), 1e-14);
      }
}

TEST(DensityGrid, FreshSceneIsConstantLn2) {
  const SceneParameters p = init_parameters(foreground_spec({16, 16}, 4, 2, 3), background_spec(3, 4, {8}), 5, 3.0);
  const auto g = sample_density_grid(p, Aabb{}, {9, 8, 7});
  ASSERT_EQ(g.values.size(), 9u * 8u * 7u);
  for (double v : g.values) ASSERT_NEAR(v, std::log(2.0), 1e-15);
}

TEST(DensityGrid, TrainedFieldMatchesPointwiseEvaluation) {
  SceneParameters p = init_parameters(foreground_spec({16, 16}, 4, 2, 3), background_spec(3, 4, {8}), 5, 3.0);
  Rng rng(2);
  for (double& v : p.flat) v += rng.uniform(-0.3, 0.3);
  const Aabb b{Vec3(-0.7, -0.6, -0.5), Vec3(0.7, 0.8, 0.9)};
  const auto g = sample_density_grid(p, b, {5, 4, 3});
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i)
        ASSERT_NEAR(g.at(i, j, k), eval_foreground(p, g.point(i, j, k), Vec3(1.0, 0.0, 0.0)).density, 1e-12);
}

TEST(DensityGrid, BoundsOutsideSphereAreRejected) {
  const SceneParameters p = init_parameters(foreground_spec({4}, 2, 0, 3), background_spec(3, 2, {4}), 1, 3.0);
  try {
    sample_density_grid(p, Aabb{Vec3::Constant(-2.0), Vec3::Constant(2.0)}, {4, 4, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
  }
  EXPECT_THROW(sample_density_grid(p, Aabb{}, {1, 4, 4}), Error);
}

TEST(MarchingCubes, ConstantBelowThresholdIsEmpty) {
  DensityGrid g;
  g.resolution = {6, 5, 4};
  g.values.assign(g.size(), 0.3);
  const auto m = marching_cubes(g, 0.5);
  EXPECT_TRUE(m.vertices.empty());
  EXPECT_TRUE(m.triangles.empty());
  EXPECT_TRUE(marching_cubes(g, 0.3 - 1e-9).vertices.empty());  // constant above threshold
}

TEST(MarchingCubes, SingleCornerCase) {
  DensityGrid g;
  g.resolution = {2, 2, 2};
  g.bounds = Aabb{Vec3::Zero(), Vec3::Ones()};
  g.values.assign(8, 0.0);
  g.values[0] = 1.0;  // corner (0, 0, 0) inside
  const auto m = marching_cubes(g, 0.25);
  ASSERT_EQ(m.triangles.size(), 1u);
  ASSERT_EQ(m.vertices.size(), 3u);
  std::set<std::array<double, 3>> got;
  for (const auto& v : m.vertices) got.insert({v.x(), v.y(), v.z()});
  const std::set<std::array<double, 3>> want{{0.75, 0, 0}, {0, 0.75, 0}, {0, 0, 0.75}};
  EXPECT_EQ(got, want);
}

TEST(MarchingCubes, SphereVerticesNearAnalyticRadius) {
  for (int n : {16, 32, 64}) {
    const auto g = sphere_grid(n);
    const auto m = marching_cubes(g, 0.5);
    ASSERT_FALSE(m.triangles.empty());
    EXPECT_LT(max_radius_error(m, 0.5), 1.5 * g.spacing().norm()) << n;
    for (const auto& v : m.vertices) ASSERT_TRUE(g.bounds.contains(v));
  }
}

TEST(MarchingCubes, RefinementReducesError) {
  const double e64 = max_radius_error(marching_cubes(sphere_grid(64), 0.5), 0.5);
  const double e128 = max_radius_error(marching_cubes(sphere_grid(128), 0.5), 0.5);
  EXPECT_GE(e64 / e128, 1.8);
}

TEST(MarchingCubes, SphereIsClosedAndOutwardOriented) {
  const auto m = marching_cubes(sphere_grid(40), 0.5);
  EXPECT_EQ(open_edges(m), 0);
  double volume = 0.0;  // divergence theorem; positive for outward normals
  for (const auto& t : m.triangles)
    volume += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  EXPECT_NEAR(volume, 4.0 / 3.0 * kPi * 0.125, 0.01 * 4.0 / 3.0 * kPi * 0.125);
}

TEST(MarchingCubes, NoisyFieldStaysClosed) {
  DensityGrid g;
  g.resolution = {14, 12, 10};
  g.values.resize(g.size());
  Rng rng(8);
  for (int k = 0; k < 10; ++k)
    for (int j = 0; j < 12; ++j)
      for (int i = 0; i < 14; ++i) {
        const bool border = i == 0 || j == 0 || k == 0 || i == 13 || j == 11 || k == 9;
        g.values[g.index(i, j, k)] = border ? 0.0 : rng.uniform();
      }
  const auto m = marching_cubes(g, 0.5);
  ASSERT_GT(m.triangles.size(), 100u);
  EXPECT_EQ(open_edges(m), 0);
}

TEST(MarchingCubes, SignFlipReversesWinding) {
  for (int n : {17, 33}) {
    const auto g = sphere_grid(n, 1.0, 1.1);
    DensityGrid neg = g;
    for (double& v : neg.values) v = -v;
    const auto a = marching_cubes(g, 0.45);
    const auto b = marching_cubes(neg, -0.45);
    auto sorted = [](std::vector<Vec3> v) {
      std::sort(v.begin(), v.end(), [](const Vec3& p, const Vec3& q) {
        return std::lexicographical_compare(p.data(), p.data() + 3, q.data(), q.data() + 3);
      });
      return v;
    };
    EXPECT_EQ(sorted(a.vertices), sorted(b.vertices));
    EXPECT_EQ(oriented_triangles(a, false), oriented_triangles(b, true));
  }
}

TEST(MarchingCubes, Deterministic) {
  const auto g = sphere_grid(24);
  const auto a = marching_cubes(g, 0.5);
  const auto b = marching_cubes(g, 0.5);
  EXPECT_EQ(a.vertices, b.vertices);
  EXPECT_EQ(a.triangles, b.triangles);
}

TEST(MarchingCubes, SharedEdgesShareVertices) {
  const auto m = marching_cubes(sphere_grid(20), 0.5);
  std::set<std::array<double, 3>> unique;
  for (const auto& v : m.vertices) unique.insert({v.x(), v.y(), v.z()});
  EXPECT_EQ(unique.size(), m.vertices.size());
}

TEST(Obj, EmptyMesh) {
  EXPECT_EQ(encode_obj(TriangleMesh{}), "");
}

TEST(Obj, SingleTriangleRecords) {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1.25, -2, 0.5), Vec3(1.0 / 3.0, 2.0 / 3.0, 1)};
  m.triangles = {{0, 1, 2}};
  EXPECT_EQ(encode_obj(m),
            "v 0.000000 0.000000 0.000000\n"
            "v 1.250000 -2.000000 0.500000\n"
            "v 0.333333 0.666667 1.000000\n"
            "f 1 2 3\n");
}

TEST(Obj, RoundTripWithinFormatPrecision) {
  const auto m = marching_cubes(sphere_grid(18), 0.5);
  const fs::path d = fs::temp_directory_path() / "spherebg_mesh_obj";
  fs::create_directories(d);
  export_obj(m, (d / "s.obj").string());
  const auto back = load_obj((d / "s.obj").string());
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  EXPECT_EQ(back.triangles, m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    ASSERT_LT((back.vertices[i] - m.vertices[i]).cwiseAbs().maxCoeff(), 1e-5);
  std::istringstream in(encode_obj(m));
  std::string line;
  std::size_t v = 0, f = 0;
  while (std::getline(in, line)) {
    v += line.rfind("v ", 0) == 0;
    f += line.rfind("f ", 0) == 0;
  }
  EXPECT_EQ(v, m.vertices.size());
  EXPECT_EQ(f, m.triangles.size());
}

TEST(Obj, Errors) {
  TriangleMesh bad;
  bad.vertices = {Vec3::Zero()};
  bad.triangles = {{0, 0, 1}};
  EXPECT_THROW(encode_obj(bad), Error);
  EXPECT_THROW(parse_obj("v 1 2\n"), Error);
  EXPECT_THROW(parse_obj("v 0 0 0\nf 1 2 3\n"), Error);
  try {
    export_obj(TriangleMesh{}, "/nonexistent/dir/m.obj");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}
