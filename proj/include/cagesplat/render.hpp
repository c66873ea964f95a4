// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/gauss_scene.hpp"
#include "cagesplat/geometry.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cagesplat {

/// Pinhole camera in the OpenCV convention: x right, y down, z forward.
struct Camera {
    Vec3d position = Vec3d(0.0, 0.0, -1.0);
    Vec3d look_at = Vec3d::Zero();
    Vec3d up = Vec3d(0.0, -1.0, 0.0);
    double fov_y = 0.8;  // rad
    int width = 640;
    int height = 400;
    double near_clip = 0.01;
    double far_clip = 100.0;

    /// Rows are the camera axes expressed in world coordinates.
    Mat3d rotation() const;
    double focal() const;
    Vec3d to_camera(const Vec3d &p) const { return rotation() * (p - position); }
    /// Throws InvalidArgument on a degenerate camera.
    void validate() const;
};

Camera load_camera(const std::filesystem::path &path);
void save_camera(const Camera &cam, const std::filesystem::path &path);

/// Camera orbiting `target` at `distance`, looking at it. Azimuth is about
/// +z, elevation above the xy plane.
Camera orbit_camera(const Vec3d &target, double distance, double azimuth, double elevation, double fov_y, int width,
                    int height);

struct SplatFragment {
    std::uint32_t index = 0;
    float mean_x = 0.0f, mean_y = 0.0f;  // px
    float cov_xx = 0.0f, cov_xy = 0.0f, cov_yy = 0.0f;  // px^2
    float conic_a = 0.0f, conic_b = 0.0f, conic_c = 0.0f;  // inverse covariance
    float depth = 0.0f;
    float opacity = 0.0f;
    Vec3f color = Vec3f::Zero();
    float radius_x = 0.0f, radius_y = 0.0f;  // 3 sigma half extents, px
};

/// Isotropic variance added to every projected covariance, px^2.
constexpr float kCovarianceFloor = 0.3f;
/// Fragments contribute only where the squared Mahalanobis distance is at
/// most this (3 sigma).
constexpr float kMaxMahalanobis2 = 9.0f;
/// Compositing stops once transmittance drops below this.
constexpr float kMinTransmittance = 1e-3f;

std::vector<SplatFragment> project(const GaussianScene &scene, const Camera &cam);

/// exp(x) for x in [-4.5, 0] via 2^n * p(f); relative error below 2e-7.
inline float gaussian_falloff(float x) {
    const float y = x * 1.44269504f;
    const float n = std::floor(y);
    const float t = y - n;
    // Minimax fit of 2^t on [0, 1).
    float p = 1.8775767e-3f;
    p = p * t + 8.9893397e-3f;
    p = p * t + 5.5826318e-2f;
    p = p * t + 2.4015361e-1f;
    p = p * t + 6.9315308e-1f;
    p = p * t + 9.9999994e-1f;
    const int e = static_cast<int>(n);
    return p * std::bit_cast<float>(static_cast<std::uint32_t>(127 + e) << 23);
}

/// Alpha of a fragment at a pixel center, 0 outside the 3 sigma ellipse.
inline float fragment_alpha(const SplatFragment &f, float px, float py) {
    const float dx = px - f.mean_x, dy = py - f.mean_y;
    const float q = f.conic_a * dx * dx + 2.0f * f.conic_b * dx * dy + f.conic_c * dy * dy;
    if (q > kMaxMahalanobis2) return 0.0f;
    return f.opacity * gaussian_falloff(-0.5f * q);
}

struct RenderedImage {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;    // row-major, 3 floats per pixel
    std::vector<float> alpha;  // 1 - final transmittance

    RenderedImage() = default;
    RenderedImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f),
                                  alpha(static_cast<std::size_t>(w) * h, 0.0f) {}
    float &at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct RenderStats {
    double project_ms = 0.0;
    double bin_ms = 0.0;
    double sort_ms = 0.0;
    double composite_ms = 0.0;
    std::size_t fragments = 0;
    std::size_t tile_entries = 0;

    double total_ms() const { return project_ms + bin_ms + sort_ms + composite_ms; }
    /// key=value lines.
    std::string to_text() const;
};

/// Tiled front-to-back compositing; fragments are binned to every tile their
/// 3 sigma box touches and sorted by (depth, index) within each tile.
RenderedImage rasterize(const std::vector<SplatFragment> &fragments, const Camera &cam, int tile_px = 16,
                        RenderStats *stats = nullptr);

/// Per-pixel compositing over one global (depth, index) order. Slow; used
/// to check rasterize().
RenderedImage rasterize_reference(const std::vector<SplatFragment> &fragments, const Camera &cam);

RenderedImage render_frame(const GaussianScene &scene, const Camera &cam, int tile_px = 16,
                           RenderStats *stats = nullptr);

/// 8-bit RGB PNG; values are multiplied by `exposure` and clamped to [0, 1].
std::vector<std::uint8_t> encode_png(const RenderedImage &img, double exposure = 1.0);
void write_image(const RenderedImage &img, const std::filesystem::path &path, double exposure = 1.0);
RenderedImage read_image(const std::filesystem::path &path);

} // namespace cagesplat
