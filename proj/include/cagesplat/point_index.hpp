// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/geometry.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace cagesplat {

/// A (squared distance, point index) pair returned by neighbor queries.
struct Neighbor {
    double dist2;
    std::size_t index;

    friend bool operator<(const Neighbor &a, const Neighbor &b) {
        return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
    }
};

/// Uniform-grid spatial index for exact nearest-neighbor queries over a
/// static point set. Queries expand Chebyshev shells of cells around the
/// query until no unvisited cell can hold a closer point, so results equal
/// a brute-force scan, including the (distance, index) tie order.
class PointIndex {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    explicit PointIndex(std::span<const Vec3d> points);

    std::size_t size() const { return points_.size(); }

    /// Nearest point to q; `skip` excludes one index (e.g. the query itself).
    Neighbor nearest(const Vec3d &q, std::size_t skip = npos) const;

    /// The k nearest points ordered by (distance, index).
    std::vector<Neighbor> k_nearest(const Vec3d &q, std::size_t k, std::size_t skip = npos) const;

private:
    template <class Visit>
    void search(const Vec3d &q, std::size_t k, Visit &&visit) const;

    std::int64_t cell_coord(double v, int axis) const;
    std::size_t cell_id(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>((z * dims_[1] + y) * dims_[0] + x);
    }

    std::vector<Vec3d> points_;          // sorted by cell
    std::vector<std::size_t> original_;  // sorted position -> input index
    std::vector<std::size_t> cell_start_;
    Vec3d origin_ = Vec3d::Zero();
    double cell_ = 1.0;
    std::array<std::int64_t, 3> dims_{1, 1, 1};
};

} // namespace cagesplat
