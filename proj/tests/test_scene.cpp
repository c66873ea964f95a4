// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/error.hpp"
#include "cagesplat/gauss_scene.hpp"
#include "cagesplat/mesh.hpp"
#include "test_util.hpp"

#include <Eigen/Cholesky>

#include <fstream>

using namespace cagesplat;
using cagesplat::testing::TempDir;

namespace {

void patch_float(const std::filesystem::path &path, std::size_t offset, float value) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(reinterpret_cast<const char *>(&value), sizeof value);
}

int cube_face(const Vec3f &c) {
    int axis = 0;
    for (int a = 1; a < 3; ++a)
        if (std::abs(c[a]) > std::abs(c[axis])) axis = a;
    return 2 * axis + (c[axis] > 0.0f ? 1 : 0);
}

} // namespace

TEST(SceneFile, SinglePrimitiveRoundTripIsBitExact) {
    TempDir dir;
    GaussianScene s;
    GaussianPrimitive g;
    g.center = Vec3f::Zero();
    g.covariance = {1e-4f, 0.0f, 0.0f, 1e-4f, 0.0f, 1e-4f};
    g.opacity = 1.0f;
    g.color = Vec3f(1.0f, 0.0f, 0.0f);
    s.primitives.push_back(g);
    save_scene(s, dir / "one.cspl");
    EXPECT_EQ(std::filesystem::file_size(dir / "one.cspl"), kSplatHeaderBytes + kSplatRecordBytes);
    const GaussianScene r = load_scene(dir / "one.cspl");
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r.primitives[0], g);
}

TEST(SceneFile, RandomSceneRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(11);
    const GaussianScene s = cagesplat::testing::random_scene(1000, rng);
    save_scene(s, dir / "s.cspl");
    const GaussianScene r = load_scene(dir / "s.cspl");
    ASSERT_EQ(r.size(), s.size());
    for (std::size_t j = 0; j < s.size(); ++j) EXPECT_EQ(r.primitives[j], s.primitives[j]) << j;
}

TEST(SceneFile, EmptySceneHasZeroCount) {
    TempDir dir;
    save_scene(GaussianScene{}, dir / "e.cspl");
    EXPECT_EQ(std::filesystem::file_size(dir / "e.cspl"), kSplatHeaderBytes);
    EXPECT_TRUE(load_scene(dir / "e.cspl").empty());
}

TEST(SceneFile, OpacityOutOfRangeNamesRecord) {
    TempDir dir;
    std::mt19937_64 rng(2);
    save_scene(cagesplat::testing::random_scene(10, rng), dir / "bad.cspl");
    patch_float(dir / "bad.cspl", kSplatHeaderBytes + 7 * kSplatRecordBytes + 9 * sizeof(float), 1.5f);
    try {
        load_scene(dir / "bad.cspl");
        FAIL() << "expected FormatError";
    } catch (const FormatError &e) {
        EXPECT_TRUE(e.has_record());
        EXPECT_EQ(e.record(), 7u);
    }
}

TEST(SceneFile, NonPositiveCovarianceRejected) {
    TempDir dir;
    std::mt19937_64 rng(3);
    save_scene(cagesplat::testing::random_scene(5, rng), dir / "bad.cspl");
    patch_float(dir / "bad.cspl", kSplatHeaderBytes + 2 * kSplatRecordBytes + 3 * sizeof(float), -1.0f);
    try {
        load_scene(dir / "bad.cspl");
        FAIL() << "expected FormatError";
    } catch (const FormatError &e) {
        EXPECT_EQ(e.record(), 2u);
    }
}

TEST(SceneFile, BadMagicAndTruncation) {
    TempDir dir;
    std::mt19937_64 rng(4);
    save_scene(cagesplat::testing::random_scene(3, rng), dir / "s.cspl");
    std::filesystem::resize_file(dir / "s.cspl", kSplatHeaderBytes + 2 * kSplatRecordBytes);
    EXPECT_THROW(load_scene(dir / "s.cspl"), FormatError);
    std::ofstream(dir / "junk.cspl") << "PLY not a splat file";
    EXPECT_THROW(load_scene(dir / "junk.cspl"), FormatError);
    EXPECT_THROW(load_scene(dir / "missing.cspl"), IoError);
    EXPECT_THROW(save_scene(GaussianScene{}, dir / "no" / "such" / "dir.cspl"), IoError);
}

TEST(SceneBounds, ContainEveryCenter) {
    std::mt19937_64 rng(5);
    GaussianScene s = cagesplat::testing::random_scene(200, rng);
    for (const auto &c : s.centers()) EXPECT_TRUE(s.bounds.contains(c, 1e-7));
    Points moved = s.centers();
    for (auto &p : moved) p += Vec3d(3.0, 0.0, 0.0);
    s.set_centers(moved);
    for (const auto &c : s.centers()) EXPECT_TRUE(s.bounds.contains(c, 1e-6));
    EXPECT_THROW(s.set_centers(Points(3)), ShapeError);
}

TEST(Proxy, CubeFacesSampledByArea) {
    const TriangleMesh cube = make_unit_cube();
    std::array<double, 6> pooled{};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GaussianScene s = init_proxy_from_mesh(cube, 6000, seed);
        ASSERT_EQ(s.size(), 6000u);
        for (const auto &g : s.primitives) pooled[static_cast<std::size_t>(cube_face(g.center))] += 1.0;
    }
    double chi2 = 0.0;
    for (double c : pooled) {
        EXPECT_NEAR(c / 10.0, 1000.0, 50.0);
        chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
    }
    // 5 degrees of freedom, p = 0.01.
    EXPECT_LT(chi2, 15.086);
}

TEST(Proxy, SingleTriangleSampleInsideIt) {
    TriangleMesh tri;
    tri.vertices = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, 1, 0)};
    tri.triangles = {{0, 1, 2}};
    const GaussianScene s = init_proxy_from_mesh(tri, 1, 9);
    ASSERT_EQ(s.size(), 1u);
    const Vec3f c = s.primitives[0].center;
    EXPECT_GE(c.x(), 0.0f);
    EXPECT_GE(c.y(), 0.0f);
    EXPECT_LE(c.x() + c.y(), 1.0f + 1e-6f);
    EXPECT_NEAR(c.z(), 0.0f, 1e-7f);
}

TEST(Proxy, DeterministicAndValid) {
    const TriangleMesh cyl = make_cylinder(0.015, 0.1);
    const GaussianScene a = init_proxy_from_mesh(cyl, 2000, 42);
    const GaussianScene b = init_proxy_from_mesh(cyl, 2000, 42);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
        EXPECT_EQ(a.primitives[j], b.primitives[j]);
        EXPECT_EQ(validate(a.primitives[j]), "");
        Eigen::LLT<Mat3d> llt(a.primitives[j].covariance_matrix());
        EXPECT_EQ(llt.info(), Eigen::Success);
        EXPECT_FLOAT_EQ(a.primitives[j].opacity, 0.9f);
    }
    const GaussianScene c = init_proxy_from_mesh(cyl, 2000, 43);
    EXPECT_NE(a.primitives[0].center, c.primitives[0].center);
}

TEST(Proxy, FaceColorsUsedWhenPresent) {
    TriangleMesh tri;
    tri.vertices = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(0, 1, 0)};
    tri.triangles = {{0, 1, 2}};
    tri.face_colors = std::vector<Vec3f>{Vec3f(0.0f, 1.0f, 0.0f)};
    const GaussianScene s = init_proxy_from_mesh(tri, 20, 1);
    for (const auto &g : s.primitives) EXPECT_EQ(g.color, Vec3f(0.0f, 1.0f, 0.0f));
}

TEST(Proxy, RejectsEmptyMeshAndZeroCount) {
    EXPECT_THROW(init_proxy_from_mesh(TriangleMesh{}, 10, 0), InvalidArgument);
    EXPECT_THROW(init_proxy_from_mesh(make_unit_cube(), 0, 0), InvalidArgument);
    TriangleMesh degenerate;
    degenerate.vertices = {Vec3d(0, 0, 0), Vec3d(1, 0, 0), Vec3d(2, 0, 0)};
    degenerate.triangles = {{0, 1, 2}};
    EXPECT_THROW(init_proxy_from_mesh(degenerate, 10, 0), InvalidArgument);
}

TEST(Stl, BinaryRoundTripAndAsciiRejected) {
    TempDir dir;
    const TriangleMesh cyl = make_cylinder(0.02, 0.1, 16, 4);
    write_stl(cyl, dir / "c.stl");
    const TriangleMesh r = read_stl(dir / "c.stl");
    ASSERT_EQ(r.size(), cyl.size());
    double area_a = 0.0, area_b = 0.0;
    for (std::size_t t = 0; t < cyl.size(); ++t) {
        area_a += cyl.area(t);
        area_b += r.area(t);
    }
    EXPECT_NEAR(area_a, area_b, 1e-6 * area_a);
    // Polygonal prism: 16 side quads plus two fans.
    const double side = 2 * 0.02 * std::sin(std::numbers::pi / 16);
    EXPECT_NEAR(area_a, 16 * side * 0.1 + 2 * 16 * 0.5 * 0.02 * 0.02 * std::sin(2 * std::numbers::pi / 16), 1e-9);

    std::ofstream(dir / "a.stl") << "solid cube\n facet normal 0 0 1\n outer loop\n vertex 0 0 0\n vertex 1 0 0\n"
                                    " vertex 0 1 0\n endloop\n endfacet\nendsolid cube\n";
    EXPECT_THROW(read_stl(dir / "a.stl"), FormatError);
    EXPECT_THROW(read_stl(dir / "none.stl"), IoError);
}

TEST(Stl, OutwardNormals) {
    const TriangleMesh cube = make_unit_cube();
    for (std::size_t t = 0; t < cube.size(); ++t) {
        const auto &tri = cube.triangles[t];
        const Vec3d c = (cube.vertices[tri[0]] + cube.vertices[tri[1]] + cube.vertices[tri[2]]) / 3.0;
        EXPECT_GT(cube.normal(t).dot(c), 0.0);
    }
}
