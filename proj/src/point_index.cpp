// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/point_index.hpp"

#include <algorithm>
#include <cmath>

namespace cagesplat {

namespace {

// Number of grid cells a cell edge of `h` produces over `extent`.
double cell_count(const Vec3d &extent, double h) {
    double n = 1.0;
    for (int a = 0; a < 3; ++a) n *= std::max(1.0, std::ceil(extent[a] / h));
    return n;
}

} // namespace

PointIndex::PointIndex(std::span<const Vec3d> points) {
    const std::size_t n = points.size();
    if (n == 0) {
        cell_start_ = {0, 0};
        return;
    }
    const Aabb box = Aabb::of(points);
    const Vec3d extent = box.extent();
    origin_ = box.min;

    // Aim for roughly two points per occupied cell; bisect on the cell edge.
    const double target = std::max(1.0, static_cast<double>(n) / 2.0);
    double hi = std::max(extent.maxCoeff(), 1e-12);
    double lo = hi * 1e-6;
    for (int it = 0; it < 60; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (cell_count(extent, mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    cell_ = hi;
    for (int a = 0; a < 3; ++a)
        dims_[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(extent[a] / cell_)));

    const std::size_t ncells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    std::vector<std::size_t> ids(n);
    cell_start_.assign(ncells + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto &p = points[i];
        ids[i] = cell_id(cell_coord(p.x(), 0), cell_coord(p.y(), 1), cell_coord(p.z(), 2));
        ++cell_start_[ids[i] + 1];
    }
    for (std::size_t c = 0; c < ncells; ++c) cell_start_[c + 1] += cell_start_[c];

    points_.resize(n);
    original_.resize(n);
    std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t slot = fill[ids[i]]++;
        points_[slot] = points[i];
        original_[slot] = i;
    }
}

std::int64_t PointIndex::cell_coord(double v, int axis) const {
    const auto c = static_cast<std::int64_t>(std::floor((v - origin_[axis]) / cell_));
    return std::clamp<std::int64_t>(c, 0, dims_[axis] - 1);
}

template <class Visit>
void PointIndex::search(const Vec3d &q, std::size_t k, Visit &&visit) const {
    const std::int64_t cx = cell_coord(q.x(), 0), cy = cell_coord(q.y(), 1), cz = cell_coord(q.z(), 2);
    const std::array<std::int64_t, 3> c{cx, cy, cz};
    const std::int64_t max_r = std::max({dims_[0], dims_[1], dims_[2]});

    for (std::int64_t r = 0; r <= max_r; ++r) {
        for (std::int64_t z = cz - r; z <= cz + r; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            for (std::int64_t y = cy - r; y <= cy + r; ++y) {
                if (y < 0 || y >= dims_[1]) continue;
                const bool yz_shell = std::abs(z - cz) == r || std::abs(y - cy) == r;
                for (std::int64_t x = cx - r; x <= cx + r; ++x) {
                    if (x < 0 || x >= dims_[0]) continue;
                    if (!yz_shell && std::abs(x - cx) != r) continue;
                    const std::size_t id = cell_id(x, y, z);
                    for (std::size_t s = cell_start_[id]; s < cell_start_[id + 1]; ++s)
                        visit(s, (points_[s] - q).squaredNorm());
                }
            }
        }
        // Lower bound on the distance to any cell outside the visited box.
        double bound = std::numeric_limits<double>::infinity();
        bool remaining = false;
        for (int a = 0; a < 3; ++a) {
            if (c[a] - r > 0) {
                remaining = true;
                bound = std::min(bound, q[a] - (origin_[a] + static_cast<double>(c[a] - r) * cell_));
            }
            if (c[a] + r < dims_[a] - 1) {
                remaining = true;
                bound = std::min(bound, origin_[a] + static_cast<double>(c[a] + r + 1) * cell_ - q[a]);
            }
        }
        if (!remaining) return;
        bound = std::max(bound, 0.0);
        if (visit.done(k, bound * bound)) return;
    }
}

namespace {

struct KCollector {
    std::vector<Neighbor> best;  // max-heap on (dist2, index)
    const std::vector<std::size_t> *original;
    std::size_t skip;
    std::size_t k;

    void operator()(std::size_t slot, double d2) {
        const std::size_t idx = (*original)[slot];
        if (idx == skip) return;
        const Neighbor cand{d2, idx};
        if (best.size() < k) {
            best.push_back(cand);
            std::push_heap(best.begin(), best.end());
        } else if (cand < best.front()) {
            std::pop_heap(best.begin(), best.end());
            best.back() = cand;
            std::push_heap(best.begin(), best.end());
        }
    }
    // Strictly greater: a point at exactly the bound could still win a tie on index.
    bool done(std::size_t want, double bound2) const {
        return best.size() >= want && best.front().dist2 < bound2;
    }
};

} // namespace

std::vector<Neighbor> PointIndex::k_nearest(const Vec3d &q, std::size_t k, std::size_t skip) const {
    KCollector col{{}, &original_, skip, k};
    if (k == 0 || points_.empty()) return {};
    col.best.reserve(k + 1);
    search(q, k, col);
    std::sort(col.best.begin(), col.best.end());
    return col.best;
}

Neighbor PointIndex::nearest(const Vec3d &q, std::size_t skip) const {
    auto r = k_nearest(q, 1, skip);
    if (r.empty()) return {std::numeric_limits<double>::infinity(), npos};
    return r.front();
}

} // namespace cagesplat
