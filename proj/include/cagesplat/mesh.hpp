// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace cagesplat {

/// Triangle soup as read from STL. Face colors are present only when every
/// facet of the source file carried a valid 15-bit color attribute.
struct TriangleMesh {
    std::vector<Vec3d> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::optional<std::vector<Vec3f>> face_colors;

    std::size_t size() const { return triangles.size(); }
    double area(std::size_t t) const;
    Vec3d normal(std::size_t t) const;
};

/// Reads a binary STL. ASCII STL files are rejected with a FormatError.
TriangleMesh read_stl(const std::filesystem::path &path);
void write_stl(const TriangleMesh &mesh, const std::filesystem::path &path);

// Closed primitive meshes used for proxies and tests. All are centered on
// the origin with outward-facing triangles.
TriangleMesh make_box(const Vec3d &min, const Vec3d &max);
TriangleMesh make_unit_cube();
/// Capped cylinder along +x.
TriangleMesh make_cylinder(double radius, double length, int segments = 48, int rings = 24);

} // namespace cagesplat
