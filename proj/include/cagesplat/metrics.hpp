// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/geometry.hpp"
#include "cagesplat/render.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cagesplat {

/// Symmetric mean nearest-neighbor distance, halved. Inputs in meters,
/// result in millimeters.
double chamfer(std::span<const Vec3d> a, std::span<const Vec3d> b);
/// O(n m) version of chamfer() for testing.
double chamfer_brute_force(std::span<const Vec3d> a, std::span<const Vec3d> b);

/// Intersection over union of the voxels occupied by each set, on a grid
/// anchored half a voxel below the joint bounding box.
double voxel_iou(std::span<const Vec3d> a, std::span<const Vec3d> b, double voxel_mm = 2.0);

/// Mean SSIM over the valid region with an 11x11 Gaussian window
/// (sigma 1.5), per channel then averaged, or on Rec.601 luma.
double ssim(const RenderedImage &x, const RenderedImage &y, bool luma = false);

/// Number of equal-length bins along the rest axis used for centerlines.
constexpr int kCenterlineBins = 16;

/// Bin centroids of `points`, binned by their rest position along `axis`
/// (the rest principal axis when `axis` is zero). Empty bins are dropped.
Points centerline(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis = Vec3d::Zero(),
                  int bins = kCenterlineBins);

/// Angle in degrees between lines fitted to the first and last quarters of
/// the centerline, rescaled so a constant-curvature arc reads its true
/// total bend.
double bend_angle(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis = Vec3d::Zero());

/// Signed rotation in degrees of the distal cross-section relative to the
/// proximal one, right-handed about the rest axis, rescaled from the bin
/// centers to the ends.
double twist_angle(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis = Vec3d::Zero());

/// Principal axis (unit, largest variance) of a point set.
Vec3d principal_axis(std::span<const Vec3d> points);

struct MetricReport {
    std::string sequence;
    std::string region;  // "center" or "full"
    double iou = 0.0;
    double ssim = 0.0;
    double chamfer_mm = 0.0;
    double angle_error_deg = 0.0;
};

void write_metric_csv(const std::vector<MetricReport> &rows, const std::filesystem::path &path);
/// Per-region means laid out like a results table.
std::string summary_table(const std::vector<MetricReport> &rows);

} // namespace cagesplat
