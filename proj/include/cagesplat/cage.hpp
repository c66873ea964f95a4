// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/gauss_scene.hpp"
#include "cagesplat/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cagesplat {

/// Regular lattice of control nodes. Nodes live in the canonical frame,
/// ordered row-major with x fastest; `region_transform` maps canonical
/// coordinates to the object frame.
struct CageGrid {
    std::array<int, 3> dims{2, 2, 2};
    std::vector<Vec3d> nodes;
    std::vector<std::vector<std::uint32_t>> neighbors;  // 6-neighborhood, ascending
    RigidTransform region_transform;

    std::size_t node_count() const { return nodes.size(); }
    /// Undirected edge count.
    std::size_t edge_count() const;
    std::size_t index(int ix, int iy, int iz) const {
        return static_cast<std::size_t>((iz * dims[1] + iy) * dims[0] + ix);
    }
    Aabb canonical_bounds() const { return Aabb::of(nodes); }
};

/// Relative padding added on each side of every box extent.
constexpr double kCagePadding = 0.05;

/// Uniform lattice over `bounds` (given in the canonical frame) padded by
/// kCagePadding on every side.
CageGrid build_cage(const Aabb &bounds, const std::array<int, 3> &dims,
                    const RigidTransform &region_transform = RigidTransform::identity());

/// Cage whose canonical bounds are the scene's bounds mapped through the
/// inverse region transform.
CageGrid build_cage_for(const GaussianScene &scene, const std::array<int, 3> &dims,
                        const RigidTransform &region_transform = RigidTransform::identity());

/// Normalized inverse-distance weights binding each Gaussian to its k
/// nearest cage nodes. Entry (j, m) lives at index j * k + m.
struct BindingWeights {
    std::size_t k = 8;
    double epsilon = 1e-6;
    std::size_t node_count = 0;
    std::vector<std::uint32_t> nodes;
    std::vector<double> weights;
    RigidTransform region_transform;

    std::size_t gaussian_count() const { return k == 0 ? 0 : nodes.size() / k; }
    std::span<const std::uint32_t> nodes_of(std::size_t j) const { return {nodes.data() + j * k, k}; }
    std::span<const double> weights_of(std::size_t j) const { return {weights.data() + j * k, k}; }
};

/// Per-node offsets, expressed in the cage's canonical frame.
struct CageDisplacementField {
    std::vector<Vec3d> offsets;
    double timestamp = 0.0;

    std::size_t size() const { return offsets.size(); }
    static CageDisplacementField zeros(std::size_t n, double t = 0.0) { return {std::vector<Vec3d>(n, Vec3d::Zero()), t}; }
};

/// Inverse-distance weights for a single point against explicit node
/// distances. A zero distance with epsilon == 0 takes the full weight.
std::vector<double> idw_weights(std::span<const double> distances, double epsilon);

BindingWeights bind_weights(const CageGrid &cage, std::span<const Vec3d> centers, std::size_t k = 8,
                            double epsilon = 1e-6);
BindingWeights bind_weights(const CageGrid &cage, const GaussianScene &scene, std::size_t k = 8,
                            double epsilon = 1e-6);

/// Per-Gaussian displacement sum_i w_ij * dc_i, rotated into the object frame.
Points gaussian_displacements(const BindingWeights &weights, const CageDisplacementField &field);

/// Scene with every center moved by its interpolated displacement. All
/// other attributes are copied unchanged.
GaussianScene propagate(const BindingWeights &weights, const CageDisplacementField &field,
                        const GaussianScene &scene);

struct LabelFitOptions {
    double lambda_reg = 1e-6;
    double rel_tolerance = 1e-10;
    std::size_t max_iterations = 0;  // 0 -> 10 * node count
};

struct LabelFitReport {
    std::array<std::size_t, 3> iterations{};
    std::array<double, 3> relative_residual{};  // of the normal equations
    double max_relative_residual() const;
};

/// Least-squares cage offsets reproducing per-Gaussian displacements given
/// in the object frame, with a Tikhonov term lambda_reg * |dc|^2. Each axis
/// is solved with conjugate gradients on the normal equations.
CageDisplacementField extract_cage_labels(const BindingWeights &weights, std::span<const Vec3d> gt_displacements,
                                          const LabelFitOptions &opts = {}, LabelFitReport *report = nullptr);
CageDisplacementField extract_cage_labels(const BindingWeights &weights, std::span<const Vec3d> gt_displacements,
                                          double lambda_reg, LabelFitReport *report = nullptr);

/// Rigid transform (no scale) taking the patch fiducials onto the cage
/// fiducials with minimal RMS error.
RigidTransform align_patch(std::span<const Vec3d> patch_fiducials, std::span<const Vec3d> cage_fiducials);
double rms_error(const RigidTransform &t, std::span<const Vec3d> from, std::span<const Vec3d> to);

// Sidecar and text formats.
void save_weights(const BindingWeights &w, const std::filesystem::path &path);
BindingWeights load_weights(const std::filesystem::path &path);
void save_cage(const CageGrid &cage, const std::filesystem::path &path);
CageGrid load_cage(const std::filesystem::path &path);

} // namespace cagesplat
