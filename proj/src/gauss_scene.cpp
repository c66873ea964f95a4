// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/gauss_scene.hpp"

#include "binary_io.hpp"
#include "cagesplat/error.hpp"
#include "cagesplat/point_index.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace cagesplat {

Mat3d GaussianPrimitive::covariance_matrix() const {
    const auto &c = covariance;
    Mat3d m;
    m << c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5];
    return m;
}

std::array<float, 6> GaussianPrimitive::pack(const Mat3d &cov) {
    return {static_cast<float>(cov(0, 0)), static_cast<float>(cov(0, 1)), static_cast<float>(cov(0, 2)),
            static_cast<float>(cov(1, 1)), static_cast<float>(cov(1, 2)), static_cast<float>(cov(2, 2))};
}

std::string validate(const GaussianPrimitive &g) {
    if (!g.center.allFinite()) return "non-finite center";
    for (float v : g.covariance)
        if (!std::isfinite(v)) return "non-finite covariance";
    const Eigen::SelfAdjointEigenSolver<Mat3d> eig(g.covariance_matrix(), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() <= 1e-12) return "covariance is not positive definite";
    if (!(g.opacity >= 0.0f && g.opacity <= 1.0f)) return "opacity outside [0,1]";
    for (int c = 0; c < 3; ++c)
        if (!(g.color[c] >= 0.0f && g.color[c] <= 1.0f)) return "color outside [0,1]";
    return {};
}

void GaussianScene::recompute_bounds() {
    bounds = Aabb{};
    for (const auto &g : primitives) bounds.expand(g.center.cast<double>());
}

Points GaussianScene::centers() const {
    Points out;
    out.reserve(primitives.size());
    for (const auto &g : primitives) out.push_back(g.center.cast<double>());
    return out;
}

void GaussianScene::set_centers(std::span<const Vec3d> centers) {
    if (centers.size() != primitives.size())
        throw ShapeError("set_centers: got " + std::to_string(centers.size()) + " centers for " +
                         std::to_string(primitives.size()) + " primitives");
    for (std::size_t j = 0; j < centers.size(); ++j) primitives[j].center = centers[j].cast<float>();
    recompute_bounds();
}

GaussianScene load_scene(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open splat file " + path.string());
    if (!io::check_magic(in, "CSPL")) throw FormatError("bad splat magic in " + path.string());
    const auto version = io::read_pod<std::uint32_t>(in);
    const auto count = io::read_pod<std::uint64_t>(in);
    if (!in) throw FormatError("truncated splat header in " + path.string());
    if (version != kSplatVersion) throw FormatError("unsupported splat version " + std::to_string(version));

    const auto size = std::filesystem::file_size(path);
    if (size != kSplatHeaderBytes + count * kSplatRecordBytes)
        throw FormatError("splat file size does not match count " + std::to_string(count));

    GaussianScene scene;
    scene.primitives.resize(count);
    for (std::uint64_t j = 0; j < count; ++j) {
        float rec[14];
        if (!io::read_span(in, std::span<float>(rec, 14))) throw FormatError("truncated splat record", j);
        auto &g = scene.primitives[j];
        g.center = Vec3f(rec[0], rec[1], rec[2]);
        std::copy(rec + 3, rec + 9, g.covariance.begin());
        g.opacity = rec[9];
        g.color = Vec3f(rec[10], rec[11], rec[12]);
        if (auto why = validate(g); !why.empty()) throw FormatError(why, j);
    }
    scene.recompute_bounds();
    return scene;
}

void save_scene(const GaussianScene &scene, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write splat file " + path.string());
    io::write_magic(out, "CSPL");
    io::write_pod(out, kSplatVersion);
    io::write_pod(out, static_cast<std::uint64_t>(scene.size()));
    for (const auto &g : scene.primitives) {
        // The last word is reserved padding up to the 56-byte record.
        const float rec[14] = {g.center.x(),    g.center.y(),    g.center.z(),    g.covariance[0], g.covariance[1],
                               g.covariance[2], g.covariance[3], g.covariance[4], g.covariance[5], g.opacity,
                               g.color.x(),     g.color.y(),     g.color.z(),     0.0f};
        io::write_span(out, std::span<const float>(rec, 14));
    }
    out.flush();
    if (!out) throw IoError("failed writing splat file " + path.string());
}

GaussianScene init_proxy_from_mesh(const TriangleMesh &mesh, std::size_t n, std::uint64_t seed,
                                   const ProxyOptions &opts) {
    if (mesh.triangles.empty()) throw InvalidArgument("init_proxy_from_mesh: empty mesh");
    if (n == 0) throw InvalidArgument("init_proxy_from_mesh: n must be >= 1");

    std::vector<double> cumulative(mesh.size());
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.size(); ++t) {
        const double a = mesh.area(t);
        if (!(a > 0.0)) throw InvalidArgument("init_proxy_from_mesh: degenerate triangle " + std::to_string(t));
        total += a;
        cumulative[t] = total;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Points centers(n);
    std::vector<std::size_t> face(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double pick = uni(rng) * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), mesh.size() - 1);
        // Uniform point in a triangle via the square-root parameterization.
        const double r1 = std::sqrt(uni(rng));
        const double r2 = uni(rng);
        const auto &tri = mesh.triangles[t];
        centers[j] = (1.0 - r1) * mesh.vertices[tri[0]] + r1 * (1.0 - r2) * mesh.vertices[tri[1]] +
                     r1 * r2 * mesh.vertices[tri[2]];
        face[j] = t;
    }

    // Local spacing: mean distance to the nearest few samples. With too few
    // samples fall back to the spacing of a uniform grid over the area.
    const double fallback = std::sqrt(total / static_cast<double>(n));
    std::vector<double> spacing(n, fallback);
    const auto m = static_cast<std::size_t>(std::max(1, opts.spacing_neighbors));
    if (n > m) {
        const PointIndex index(centers);
        for (std::size_t j = 0; j < n; ++j) {
            const auto nb = index.k_nearest(centers[j], m, j);
            double s = 0.0;
            for (const auto &e : nb) s += std::sqrt(e.dist2);
            s /= static_cast<double>(nb.size());
            if (s > 0.0) spacing[j] = s;
        }
    }

    GaussianScene scene;
    scene.primitives.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        auto &g = scene.primitives[j];
        g.center = centers[j].cast<float>();
        const double sigma = opts.shape_factor * spacing[j];
        g.covariance = GaussianPrimitive::pack(Mat3d::Identity() * (sigma * sigma));
        g.opacity = opts.opacity;
        g.color = mesh.face_colors ? (*mesh.face_colors)[face[j]] : opts.albedo;
    }
    scene.recompute_bounds();
    return scene;
}

} // namespace cagesplat
