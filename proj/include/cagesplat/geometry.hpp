// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <limits>
#include <span>
#include <vector>

namespace cagesplat {

using Vec3f = Eigen::Vector3f;
using Vec3d = Eigen::Vector3d;
using Mat3d = Eigen::Matrix3d;
using Mat3f = Eigen::Matrix3f;

using Points = std::vector<Vec3d>;

/// Axis-aligned bounding box. Default-constructed boxes are empty.
struct Aabb {
    Vec3d min = Vec3d::Constant(std::numeric_limits<double>::infinity());
    Vec3d max = Vec3d::Constant(-std::numeric_limits<double>::infinity());

    bool empty() const { return (max.array() < min.array()).any(); }
    Vec3d extent() const { return empty() ? Vec3d::Zero() : Vec3d(max - min); }
    Vec3d center() const { return 0.5 * (min + max); }

    void expand(const Vec3d &p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    bool contains(const Vec3d &p, double tol = 0.0) const {
        return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
    }

    static Aabb of(std::span<const Vec3d> pts) {
        Aabb box;
        for (const auto &p : pts) box.expand(p);
        return box;
    }
};

/// Proper rigid motion x -> R x + t.
struct RigidTransform {
    Mat3d rotation = Mat3d::Identity();
    Vec3d translation = Vec3d::Zero();

    Vec3d apply(const Vec3d &p) const { return rotation * p + translation; }
    Vec3d apply_inverse(const Vec3d &p) const { return rotation.transpose() * (p - translation); }

    RigidTransform inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }
    RigidTransform compose(const RigidTransform &inner) const {
        return {rotation * inner.rotation, rotation * inner.translation + translation};
    }

    /// True when the rotation is orthonormal with det = +1.
    bool is_rigid(double tol = 1e-9) const {
        return (rotation * rotation.transpose() - Mat3d::Identity()).cwiseAbs().maxCoeff() < tol &&
               std::abs(rotation.determinant() - 1.0) < tol;
    }

    static RigidTransform identity() { return {}; }
};

} // namespace cagesplat
