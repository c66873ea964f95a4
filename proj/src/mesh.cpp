// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/mesh.hpp"

#include "cagesplat/error.hpp"
#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string_view>

namespace cagesplat {

double TriangleMesh::area(std::size_t t) const {
    const auto &tri = triangles[t];
    return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
}

Vec3d TriangleMesh::normal(std::size_t t) const {
    const auto &tri = triangles[t];
    return (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).normalized();
}

TriangleMesh read_stl(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open STL file " + path.string());
    const auto file_size = std::filesystem::file_size(path);

    char header[80] = {};
    in.read(header, 80);
    if (!in) throw FormatError("STL file shorter than its 80-byte header: " + path.string());
    const auto count = io::read_pod<std::uint32_t>(in);
    if (!in) throw FormatError("STL file missing triangle count: " + path.string());

    const std::uint64_t expected = 84ull + 50ull * count;
    if (expected != file_size) {
        if (std::string_view(header, 5) == "solid")
            throw FormatError("ASCII STL is not supported: " + path.string());
        throw FormatError("binary STL size does not match its triangle count: " + path.string());
    }

    TriangleMesh mesh;
    mesh.vertices.reserve(3 * count);
    mesh.triangles.reserve(count);
    std::vector<Vec3f> colors;
    bool all_colored = count > 0;
    for (std::uint32_t t = 0; t < count; ++t) {
        float rec[12];
        in.read(reinterpret_cast<char *>(rec), sizeof(rec));
        const auto attr = io::read_pod<std::uint16_t>(in);
        if (!in) throw FormatError("truncated STL facet", t);
        const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
        for (int v = 0; v < 3; ++v)
            mesh.vertices.emplace_back(rec[3 + 3 * v], rec[4 + 3 * v], rec[5 + 3 * v]);
        mesh.triangles.push_back({base, base + 1, base + 2});
        // VisCAM convention: bit 15 set marks a valid 5-5-5 RGB color.
        if (attr & 0x8000u) {
            colors.emplace_back(static_cast<float>(attr & 0x1f) / 31.0f, static_cast<float>((attr >> 5) & 0x1f) / 31.0f,
                                static_cast<float>((attr >> 10) & 0x1f) / 31.0f);
        } else {
            all_colored = false;
        }
    }
    if (all_colored) mesh.face_colors = std::move(colors);
    return mesh;
}

void write_stl(const TriangleMesh &mesh, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write STL file " + path.string());
    char header[80] = "binary STL written by cagesplat";
    out.write(header, 80);
    io::write_pod(out, static_cast<std::uint32_t>(mesh.triangles.size()));
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Vec3f n = mesh.normal(t).cast<float>();
        io::write_pod(out, n.x());
        io::write_pod(out, n.y());
        io::write_pod(out, n.z());
        for (auto v : mesh.triangles[t]) {
            const Vec3f p = mesh.vertices[v].cast<float>();
            io::write_pod(out, p.x());
            io::write_pod(out, p.y());
            io::write_pod(out, p.z());
        }
        std::uint16_t attr = 0;
        if (mesh.face_colors) {
            const Vec3f c = (*mesh.face_colors)[t];
            auto q = [](float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 31.0f)); };
            attr = static_cast<std::uint16_t>(0x8000u | q(c.x()) | (q(c.y()) << 5) | (q(c.z()) << 10));
        }
        io::write_pod(out, attr);
    }
    if (!out) throw IoError("failed writing STL file " + path.string());
}

TriangleMesh make_box(const Vec3d &lo, const Vec3d &hi) {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
    // Two triangles per face, counter-clockwise seen from outside.
    const std::uint32_t faces[6][4] = {
        {0, 4, 6, 2}, // -x
        {1, 3, 7, 5}, // +x
        {0, 1, 5, 4}, // -y
        {2, 6, 7, 3}, // +y
        {0, 2, 3, 1}, // -z
        {4, 5, 7, 6}, // +z
    };
    for (const auto &f : faces) {
        m.triangles.push_back({f[0], f[1], f[2]});
        m.triangles.push_back({f[0], f[2], f[3]});
    }
    return m;
}

TriangleMesh make_unit_cube() { return make_box(Vec3d::Constant(-0.5), Vec3d::Constant(0.5)); }

TriangleMesh make_cylinder(double radius, double length, int segments, int rings) {
    if (segments < 3 || rings < 1) throw InvalidArgument("cylinder needs >= 3 segments and >= 1 ring");
    TriangleMesh m;
    const double half = 0.5 * length;
    auto ring_vertex = [&](int ring, int seg) {
        const double a = 2.0 * std::numbers::pi * seg / segments;
        const double x = -half + length * ring / rings;
        return Vec3d(x, radius * std::cos(a), radius * std::sin(a));
    };
    for (int r = 0; r <= rings; ++r)
        for (int s = 0; s < segments; ++s) m.vertices.push_back(ring_vertex(r, s));
    auto vid = [&](int r, int s) { return static_cast<std::uint32_t>(r * segments + (s % segments)); };
    for (int r = 0; r < rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            m.triangles.push_back({vid(r, s), vid(r, s + 1), vid(r + 1, s + 1)});
            m.triangles.push_back({vid(r, s), vid(r + 1, s + 1), vid(r + 1, s)});
        }
    }
    const auto c0 = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.emplace_back(-half, 0.0, 0.0);
    const auto c1 = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.emplace_back(half, 0.0, 0.0);
    for (int s = 0; s < segments; ++s) {
        m.triangles.push_back({c0, vid(0, s + 1), vid(0, s)});
        m.triangles.push_back({c1, vid(rings, s), vid(rings, s + 1)});
    }
    return m;
}

} // namespace cagesplat
