// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/geometry.hpp"
#include "cagesplat/mesh.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cagesplat {

/// One anisotropic Gaussian. Covariance is packed upper-triangular in the
/// order xx, xy, xz, yy, yz, zz.
struct GaussianPrimitive {
    Vec3f center = Vec3f::Zero();
    std::array<float, 6> covariance{1e-4f, 0.0f, 0.0f, 1e-4f, 0.0f, 1e-4f};
    float opacity = 1.0f;
    Vec3f color = Vec3f::Ones();

    Mat3d covariance_matrix() const;
    static std::array<float, 6> pack(const Mat3d &cov);

    friend bool operator==(const GaussianPrimitive &, const GaussianPrimitive &) = default;
};

/// Returns an empty string when valid, otherwise a description of the
/// first violated invariant.
std::string validate(const GaussianPrimitive &g);

/// Dense Gaussian set. Index j identifies the same primitive in every frame;
/// only centers change once a scene is built.
struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;
    std::uint64_t frame_id = 0;
    Aabb bounds;

    std::size_t size() const { return primitives.size(); }
    bool empty() const { return primitives.empty(); }

    void recompute_bounds();
    Points centers() const;
    /// Replaces every center and refreshes bounds. Sizes must match.
    void set_centers(std::span<const Vec3d> centers);
};

// Splat file: "CSPL", u32 version, u64 count, 56-byte records (13 f32
// fields and one reserved f32).
constexpr std::uint32_t kSplatVersion = 1;
constexpr std::size_t kSplatHeaderBytes = 16;
constexpr std::size_t kSplatRecordBytes = 56;

GaussianScene load_scene(const std::filesystem::path &path);
void save_scene(const GaussianScene &scene, const std::filesystem::path &path);

struct ProxyOptions {
    float opacity = 0.9f;
    Vec3f albedo{0.80f, 0.55f, 0.35f};
    double shape_factor = 0.6;   // sigma = shape_factor * local spacing
    int spacing_neighbors = 3;   // neighbors averaged for the local spacing
};

/// Area-uniform surface sampling of a triangle mesh into an isotropic
/// Gaussian proxy. Deterministic for a given seed.
GaussianScene init_proxy_from_mesh(const TriangleMesh &mesh, std::size_t n, std::uint64_t seed,
                                   const ProxyOptions &opts = {});

} // namespace cagesplat
