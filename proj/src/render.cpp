// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/render.hpp"

#include "cagesplat/error.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace cagesplat {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool front_of(const SplatFragment &a, const SplatFragment &b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

// One compositing step; shared by the tiled and reference paths so both
// perform identical arithmetic.
inline bool blend(float alpha, const Vec3f &color, float *rgb, float &T) {
    const float w = T * alpha;
    rgb[0] += w * color[0];
    rgb[1] += w * color[1];
    rgb[2] += w * color[2];
    T *= 1.0f - alpha;
    return T < kMinTransmittance;
}

// Branch-free blend of one fragment over pixels [x0, x1] of a row. The
// arithmetic per pixel matches blend(). Returns how many pixels crossed
// the transmittance cutoff.
inline int blend_row(const SplatFragment &f, int x0, int x1, float py, float *__restrict T, float *__restrict r,
                     float *__restrict g, float *__restrict b) {
    int finished = 0;
    for (int x = x0; x <= x1; ++x) {
        const float a = fragment_alpha(f, static_cast<float>(x) + 0.5f, py);
        const bool on = a > 0.0f && T[x] >= kMinTransmittance;
        const float w = on ? T[x] * a : 0.0f;
        r[x] += w * f.color[0];
        g[x] += w * f.color[1];
        b[x] += w * f.color[2];
        const float t = on ? T[x] * (1.0f - a) : T[x];
        finished += (on && t < kMinTransmittance) ? 1 : 0;
        T[x] = t;
    }
    return finished;
}

// LSD radix sort on 16-bit digits.
void radix_sort(std::vector<std::uint64_t> &keys) {
    std::vector<std::uint64_t> tmp(keys.size());
    for (int shift = 0; shift < 64; shift += 16) {
        std::vector<std::uint32_t> count(65537, 0);
        for (auto k : keys) ++count[((k >> shift) & 0xffff) + 1];
        if (count[1] == keys.size()) continue;  // digit is zero everywhere
        std::partial_sum(count.begin(), count.end(), count.begin());
        for (auto k : keys) tmp[count[(k >> shift) & 0xffff]++] = k;
        keys.swap(tmp);
    }
}

std::uint8_t to_byte(float v, double exposure) {
    const double x = std::clamp(static_cast<double>(v) * exposure, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(x * 255.0));
}

} // namespace

Mat3d Camera::rotation() const {
    const Vec3d forward = (look_at - position).normalized();
    const Vec3d right = forward.cross(up).normalized();
    const Vec3d down = forward.cross(right);
    Mat3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    return r;
}

double Camera::focal() const { return 0.5 * height / std::tan(0.5 * fov_y); }

void Camera::validate() const {
    if (width <= 0 || height <= 0) throw InvalidArgument("camera: resolution must be positive");
    if (!(fov_y > 0.0 && fov_y < M_PI)) throw InvalidArgument("camera: fov_y must lie in (0, pi)");
    if (!(near_clip > 0.0 && near_clip < far_clip)) throw InvalidArgument("camera: need 0 < near < far");
    const Vec3d forward = look_at - position;
    if (forward.norm() <= 0.0) throw InvalidArgument("camera: position equals look_at");
    if (forward.normalized().cross(up).norm() < 1e-9) throw InvalidArgument("camera: up is parallel to the view direction");
}

Camera orbit_camera(const Vec3d &target, double distance, double azimuth, double elevation, double fov_y, int width,
                    int height) {
    Camera c;
    c.look_at = target;
    c.position = target + distance * Vec3d(std::cos(elevation) * std::cos(azimuth),
                                           std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
    c.up = Vec3d::UnitZ();
    c.fov_y = fov_y;
    c.width = width;
    c.height = height;
    c.near_clip = 0.01 * distance;
    c.far_clip = 100.0 * distance;
    return c;
}

void save_camera(const Camera &cam, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(17);
    auto vec = [&](const char *key, const Vec3d &v) { out << key << ' ' << v.x() << ' ' << v.y() << ' ' << v.z() << '\n'; };
    vec("position", cam.position);
    vec("look_at", cam.look_at);
    vec("up", cam.up);
    out << "fov_y " << cam.fov_y << '\n'
        << "resolution " << cam.width << ' ' << cam.height << '\n'
        << "near " << cam.near_clip << '\n'
        << "far " << cam.far_clip << '\n';
}

Camera load_camera(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Camera cam;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "position")
            ss >> cam.position.x() >> cam.position.y() >> cam.position.z();
        else if (key == "look_at")
            ss >> cam.look_at.x() >> cam.look_at.y() >> cam.look_at.z();
        else if (key == "up")
            ss >> cam.up.x() >> cam.up.y() >> cam.up.z();
        else if (key == "fov_y")
            ss >> cam.fov_y;
        else if (key == "resolution")
            ss >> cam.width >> cam.height;
        else if (key == "near")
            ss >> cam.near_clip;
        else if (key == "far")
            ss >> cam.far_clip;
        else
            throw FormatError(path.string() + ": unknown camera key '" + key + "'", lineno);
        if (!ss) throw FormatError(path.string() + ": malformed value for '" + key + "'", lineno);
    }
    cam.validate();
    return cam;
}

std::vector<SplatFragment> project(const GaussianScene &scene, const Camera &cam) {
    cam.validate();
    const Mat3d R = cam.rotation();
    const double f = cam.focal();
    const double cx = 0.5 * cam.width, cy = 0.5 * cam.height;
    const std::size_t n = scene.size();
    std::vector<SplatFragment> frags(n);
    std::vector<unsigned char> keep(n, 0);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const GaussianPrimitive &g = scene.primitives[static_cast<std::size_t>(i)];
        const Vec3d t = R * (g.center.cast<double>() - cam.position);
        if (!(t.z() > cam.near_clip && t.z() < cam.far_clip)) continue;

        const double iz = 1.0 / t.z();
        Eigen::Matrix<double, 2, 3> J;
        J << f * iz, 0.0, -f * t.x() * iz * iz, 0.0, f * iz, -f * t.y() * iz * iz;
        const Eigen::Matrix<double, 2, 3> M = J * R;
        const Eigen::Matrix2d cov = M * g.covariance_matrix() * M.transpose();

        SplatFragment fr;
        fr.index = static_cast<std::uint32_t>(i);
        fr.mean_x = static_cast<float>(f * t.x() * iz + cx);
        fr.mean_y = static_cast<float>(f * t.y() * iz + cy);
        fr.cov_xx = static_cast<float>(cov(0, 0)) + kCovarianceFloor;
        fr.cov_xy = static_cast<float>(cov(0, 1));
        fr.cov_yy = static_cast<float>(cov(1, 1)) + kCovarianceFloor;
        const float det = fr.cov_xx * fr.cov_yy - fr.cov_xy * fr.cov_xy;
        if (!(det > 0.0f)) continue;
        fr.conic_a = fr.cov_yy / det;
        fr.conic_b = -fr.cov_xy / det;
        fr.conic_c = fr.cov_xx / det;
        fr.radius_x = 3.0f * std::sqrt(fr.cov_xx);
        fr.radius_y = 3.0f * std::sqrt(fr.cov_yy);
        if (fr.mean_x + fr.radius_x < 0.0f || fr.mean_x - fr.radius_x > static_cast<float>(cam.width) ||
            fr.mean_y + fr.radius_y < 0.0f || fr.mean_y - fr.radius_y > static_cast<float>(cam.height))
            continue;
        fr.depth = static_cast<float>(t.z());
        fr.opacity = g.opacity;
        fr.color = g.color;
        frags[static_cast<std::size_t>(i)] = fr;
        keep[static_cast<std::size_t>(i)] = 1;
    }

    std::size_t m = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) frags[m++] = frags[i];
    frags.resize(m);
    return frags;
}

RenderedImage rasterize(const std::vector<SplatFragment> &fragments, const Camera &cam, int tile_px,
                        RenderStats *stats) {
    if (tile_px < 8) throw InvalidArgument("rasterize: tile_px must be >= 8");
    const int W = cam.width, H = cam.height;
    RenderedImage img(W, H);
    const int tx = (W + tile_px - 1) / tile_px, ty = (H + tile_px - 1) / tile_px;

    auto t0 = Clock::now();
    // Depths are positive, so their IEEE bits order like the values and
    // (depth bits, position) keys sort in (depth, index) order.
    std::vector<std::uint64_t> keys(fragments.size());
    std::uint32_t max_index = 0;
    for (std::size_t i = 0; i < fragments.size(); ++i) {
        keys[i] = (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(fragments[i].depth)) << 32) |
                  fragments[i].index;
        max_index = std::max(max_index, fragments[i].index);
    }
    radix_sort(keys);
    std::vector<std::uint32_t> slot(fragments.empty() ? 0 : static_cast<std::size_t>(max_index) + 1);
    for (std::size_t i = 0; i < fragments.size(); ++i) slot[fragments[i].index] = static_cast<std::uint32_t>(i);
    std::vector<std::uint32_t> order(fragments.size());
    for (std::size_t i = 0; i < keys.size(); ++i) order[i] = slot[static_cast<std::uint32_t>(keys[i])];
    const double sort_ms = ms_since(t0);

    // Pixels whose centers can fall inside each fragment's 3 sigma ellipse,
    // from a slightly inflated ellipse so rounding never drops a pixel.
    t0 = Clock::now();
    constexpr float kReach = kMaxMahalanobis2 + 0.1f;
    struct Box {
        int x0, x1, y0, y1;
    };
    std::vector<Box> boxes(fragments.size());
    std::vector<std::uint32_t> offsets(static_cast<std::size_t>(tx) * ty + 1, 0);
    for (std::size_t i = 0; i < fragments.size(); ++i) {
        const SplatFragment &f = fragments[i];
        const float grow = std::sqrt(kReach / kMaxMahalanobis2);
        const float rx = f.radius_x * grow + 0.01f, ry = f.radius_y * grow + 0.01f;
        Box bx{std::max(0, static_cast<int>(std::ceil(f.mean_x - rx - 0.5f))),
               std::min(W - 1, static_cast<int>(std::floor(f.mean_x + rx - 0.5f))),
               std::max(0, static_cast<int>(std::ceil(f.mean_y - ry - 0.5f))),
               std::min(H - 1, static_cast<int>(std::floor(f.mean_y + ry - 0.5f)))};
        boxes[i] = bx;
        if (bx.x0 > bx.x1 || bx.y0 > bx.y1) continue;
        for (int y = bx.y0 / tile_px; y <= bx.y1 / tile_px; ++y)
            for (int x = bx.x0 / tile_px; x <= bx.x1 / tile_px; ++x) ++offsets[static_cast<std::size_t>(y) * tx + x + 1];
    }
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    std::vector<std::uint32_t> entries(offsets.back());
    {
        // Filling in global depth order leaves every tile list sorted.
        std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
        for (auto id : order) {
            const Box &bx = boxes[id];
            if (bx.x0 > bx.x1 || bx.y0 > bx.y1) continue;
            for (int y = bx.y0 / tile_px; y <= bx.y1 / tile_px; ++y)
                for (int x = bx.x0 / tile_px; x <= bx.x1 / tile_px; ++x)
                    entries[cursor[static_cast<std::size_t>(y) * tx + x]++] = id;
        }
    }
    const double bin_ms = ms_since(t0);

    t0 = Clock::now();
#pragma omp parallel
    {
        // Planar per-tile accumulators keep the row kernel vectorizable.
        const std::size_t npx = static_cast<std::size_t>(tile_px) * tile_px;
        std::vector<float> T(npx), Cr(npx), Cg(npx), Cb(npx);
        std::vector<int> row_live(static_cast<std::size_t>(tile_px));
#pragma omp for schedule(dynamic, 4)
        for (int tile = 0; tile < tx * ty; ++tile) {
            const int bx = (tile % tx) * tile_px, by = (tile / tx) * tile_px;
            const int bw = std::min(tile_px, W - bx), bh = std::min(tile_px, H - by);
            std::fill(T.begin(), T.end(), 1.0f);
            std::fill(Cr.begin(), Cr.end(), 0.0f);
            std::fill(Cg.begin(), Cg.end(), 0.0f);
            std::fill(Cb.begin(), Cb.end(), 0.0f);
            std::fill(row_live.begin(), row_live.end(), bw);
            int live = bw * bh;
            for (std::uint32_t e = offsets[tile]; e < offsets[tile + 1] && live > 0; ++e) {
                const SplatFragment &f = fragments[entries[e]];
                const Box &b = boxes[entries[e]];
                const int x0 = std::max(bx, b.x0), x1 = std::min(bx + bw - 1, b.x1);
                const int y0 = std::max(by, b.y0), y1 = std::min(by + bh - 1, b.y1);
                const float inv_a = 1.0f / f.conic_a;
                for (int y = y0; y <= y1; ++y) {
                    if (row_live[y - by] == 0) continue;
                    const float py = static_cast<float>(y) + 0.5f;
                    // Pixel-center span of the inflated ellipse on this row;
                    // fragment_alpha() makes the exact cut.
                    const float dy = py - f.mean_y;
                    const float disc = f.conic_b * f.conic_b * dy * dy - f.conic_a * (f.conic_c * dy * dy - kReach);
                    if (disc < 0.0f) continue;
                    const float mid = f.mean_x - f.conic_b * dy * inv_a - 0.5f, half = std::sqrt(disc) * inv_a;
                    const int rx0 = std::max(x0, static_cast<int>(std::ceil(mid - half)));
                    const int rx1 = std::min(x1, static_cast<int>(std::floor(mid + half)));
                    const std::size_t off = static_cast<std::size_t>(y - by) * tile_px - bx;
                    const int finished = blend_row(f, rx0, rx1, py, T.data() + off, Cr.data() + off, Cg.data() + off,
                                                   Cb.data() + off);
                    row_live[y - by] -= finished;
                    live -= finished;
                }
            }
            for (int y = 0; y < bh; ++y)
                for (int x = 0; x < bw; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * tile_px + x;
                    const std::size_t q = static_cast<std::size_t>(by + y) * W + (bx + x);
                    img.rgb[3 * q] = Cr[p];
                    img.rgb[3 * q + 1] = Cg[p];
                    img.rgb[3 * q + 2] = Cb[p];
                    img.alpha[q] = 1.0f - T[p];
                }
        }
    }
    if (stats) {
        stats->sort_ms = sort_ms;
        stats->bin_ms = bin_ms;
        stats->composite_ms = ms_since(t0);
        stats->fragments = fragments.size();
        stats->tile_entries = entries.size();
    }
    return img;
}

RenderedImage rasterize_reference(const std::vector<SplatFragment> &fragments, const Camera &cam) {
    std::vector<SplatFragment> sorted = fragments;
    std::sort(sorted.begin(), sorted.end(), front_of);
    RenderedImage img(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            float T = 1.0f;
            float *rgb = &img.rgb[(static_cast<std::size_t>(y) * cam.width + x) * 3];
            for (const auto &f : sorted) {
                const float a = fragment_alpha(f, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f);
                if (a <= 0.0f) continue;
                if (blend(a, f.color, rgb, T)) break;
            }
            img.alpha[static_cast<std::size_t>(y) * cam.width + x] = 1.0f - T;
        }
    return img;
}

RenderedImage render_frame(const GaussianScene &scene, const Camera &cam, int tile_px, RenderStats *stats) {
    const auto t0 = Clock::now();
    const auto frags = project(scene, cam);
    const double project_ms = ms_since(t0);
    RenderedImage img = rasterize(frags, cam, tile_px, stats);
    if (stats) stats->project_ms = project_ms;
    return img;
}

std::string RenderStats::to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "project_ms=" << project_ms << '\n'
       << "bin_ms=" << bin_ms << '\n'
       << "sort_ms=" << sort_ms << '\n'
       << "composite_ms=" << composite_ms << '\n'
       << "total_ms=" << total_ms() << '\n'
       << "fragments=" << fragments << '\n'
       << "tile_entries=" << tile_entries << '\n';
    return os.str();
}

std::vector<std::uint8_t> encode_png(const RenderedImage &img, double exposure) {
    if (img.width <= 0 || img.height <= 0) throw InvalidArgument("encode_png: empty image");
    std::vector<std::uint8_t> px(img.rgb.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(img.rgb[i], exposure);

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, px.data(), 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data(), 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

void write_image(const RenderedImage &img, const std::filesystem::path &path, double exposure) {
    const auto bytes = encode_png(img, exposure);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

RenderedImage read_image(const std::filesystem::path &path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw IoError("cannot read " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError("cannot decode " + path.string() + ": " + image.message);
    }
    RenderedImage img(static_cast<int>(image.width), static_cast<int>(image.height));
    for (std::size_t i = 0; i < px.size(); ++i) img.rgb[i] = px[i] / 255.0f;
    std::fill(img.alpha.begin(), img.alpha.end(), 1.0f);
    return img;
}

} // namespace cagesplat
