// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/metrics.hpp"

#include "cagesplat/error.hpp"
#include "cagesplat/point_index.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace cagesplat {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double mean_nn(std::span<const Vec3d> from, const PointIndex &to) {
    double s = 0.0;
    for (const auto &p : from) s += std::sqrt(to.nearest(p).dist2);
    return s / static_cast<double>(from.size());
}

void require_nonempty(std::span<const Vec3d> a, std::span<const Vec3d> b, const char *op) {
    if (a.empty() || b.empty()) throw InvalidArgument(std::string(op) + ": point sets must be non-empty");
}

Vec3d line_direction(std::span<const Vec3d> pts) {
    Vec3d c = Vec3d::Zero();
    for (const auto &p : pts) c += p;
    c /= static_cast<double>(pts.size());
    Mat3d cov = Mat3d::Zero();
    for (const auto &p : pts) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3d> es(cov);
    Vec3d d = es.eigenvectors().col(2);
    if (d.dot(pts.back() - pts.front()) < 0.0) d = -d;
    return d;
}

struct Bins {
    Vec3d axis;
    std::vector<std::vector<std::size_t>> members;
};

Bins bin_by_rest(std::span<const Vec3d> rest, Vec3d axis, int n) {
    if (axis.norm() == 0.0) axis = principal_axis(rest);
    axis.normalize();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto &p : rest) {
        lo = std::min(lo, p.dot(axis));
        hi = std::max(hi, p.dot(axis));
    }
    if (!(hi > lo)) throw InvalidArgument("centerline: rest points have no extent along the axis");
    Bins b{axis, std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(n))};
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const int k = std::min(n - 1, static_cast<int>((rest[i].dot(axis) - lo) / (hi - lo) * n));
        b.members[static_cast<std::size_t>(k)].push_back(i);
    }
    return b;
}

} // namespace

double chamfer(std::span<const Vec3d> a, std::span<const Vec3d> b) {
    require_nonempty(a, b, "chamfer");
    const PointIndex ia(a), ib(b);
    return 0.5 * (mean_nn(a, ib) + mean_nn(b, ia)) * 1000.0;
}

double chamfer_brute_force(std::span<const Vec3d> a, std::span<const Vec3d> b) {
    require_nonempty(a, b, "chamfer");
    auto one = [](std::span<const Vec3d> from, std::span<const Vec3d> to) {
        double s = 0.0;
        for (const auto &p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto &q : to) best = std::min(best, (p - q).squaredNorm());
            s += std::sqrt(best);
        }
        return s / static_cast<double>(from.size());
    };
    return 0.5 * (one(a, b) + one(b, a)) * 1000.0;
}

double voxel_iou(std::span<const Vec3d> a, std::span<const Vec3d> b, double voxel_mm) {
    require_nonempty(a, b, "voxel_iou");
    if (!(voxel_mm > 0.0)) throw InvalidArgument("voxel_iou: voxel size must be positive");
    const double v = voxel_mm / 1000.0;
    Aabb box = Aabb::of(a);
    for (const auto &p : b) box.expand(p);
    const Vec3d origin = box.min - Vec3d::Constant(0.5 * v);
    const Vec3d ext = box.extent();
    const auto nx = static_cast<std::uint64_t>(ext.x() / v) + 2, ny = static_cast<std::uint64_t>(ext.y() / v) + 2;

    auto key = [&](const Vec3d &p) {
        const Vec3d g = ((p - origin) / v).array().floor();
        return (static_cast<std::uint64_t>(g.z()) * ny + static_cast<std::uint64_t>(g.y())) * nx +
               static_cast<std::uint64_t>(g.x());
    };
    std::unordered_set<std::uint64_t> va, vb;
    for (const auto &p : a) va.insert(key(p));
    for (const auto &p : b) vb.insert(key(p));
    std::size_t inter = 0;
    for (auto k : va) inter += vb.count(k);
    const std::size_t uni = va.size() + vb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double ssim(const RenderedImage &x, const RenderedImage &y, bool luma) {
    if (x.width != y.width || x.height != y.height) throw ShapeError("ssim: image sizes differ");
    constexpr int R = 5;  // 11x11 window
    const int W = x.width, H = x.height;
    if (W < 2 * R + 1 || H < 2 * R + 1) throw ShapeError("ssim: images must be at least 11x11");

    std::array<double, 2 * R + 1> g{};
    double gs = 0.0;
    for (int i = -R; i <= R; ++i) gs += g[i + R] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
    for (auto &v : g) v /= gs;

    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int channels = luma ? 1 : 3;
    auto plane = [&](const RenderedImage &img, int c) {
        std::vector<double> p(static_cast<std::size_t>(W) * H);
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = luma ? 0.299 * img.rgb[3 * i] + 0.587 * img.rgb[3 * i + 1] + 0.114 * img.rgb[3 * i + 2]
                        : static_cast<double>(img.rgb[3 * i + c]);
        return p;
    };
    // Separable filter restricted to windows fully inside the image.
    auto filter = [&](const std::vector<double> &p) {
        const int ow = W - 2 * R, oh = H - 2 * R;
        std::vector<double> tmp(static_cast<std::size_t>(ow) * H), out(static_cast<std::size_t>(ow) * oh);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int k = 0; k <= 2 * R; ++k) s += g[k] * p[static_cast<std::size_t>(r) * W + c + k];
                tmp[static_cast<std::size_t>(r) * ow + c] = s;
            }
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int k = 0; k <= 2 * R; ++k) s += g[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
                out[static_cast<std::size_t>(r) * ow + c] = s;
            }
        return out;
    };

    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const auto px = plane(x, c), py = plane(y, c);
        std::vector<double> xx(px.size()), yy(px.size()), xy(px.size());
        for (std::size_t i = 0; i < px.size(); ++i) {
            xx[i] = px[i] * px[i];
            yy[i] = py[i] * py[i];
            xy[i] = px[i] * py[i];
        }
        const auto mx = filter(px), my = filter(py), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        double s = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            s += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        }
        total += s / static_cast<double>(mx.size());
    }
    return total / channels;
}

Vec3d principal_axis(std::span<const Vec3d> points) {
    if (points.size() < 2) throw InvalidArgument("principal_axis: need at least two points");
    Vec3d c = Vec3d::Zero();
    for (const auto &p : points) c += p;
    c /= static_cast<double>(points.size());
    Mat3d cov = Mat3d::Zero();
    for (const auto &p : points) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3d> es(cov);
    return es.eigenvectors().col(2).normalized();
}

Points centerline(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis, int bins) {
    if (points.size() != rest.size()) throw ShapeError("centerline: points and rest differ in size");
    if (points.size() < 10) throw InvalidArgument("centerline: need at least 10 points");
    const Bins b = bin_by_rest(rest, axis, bins);
    Points out;
    for (const auto &m : b.members) {
        if (m.empty()) continue;
        Vec3d c = Vec3d::Zero();
        for (auto i : m) c += points[i];
        out.push_back(c / static_cast<double>(m.size()));
    }
    return out;
}

double bend_angle(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis) {
    const Points line = centerline(points, rest, axis);
    const int n = static_cast<int>(line.size());
    if (n < 4) throw InvalidArgument("bend_angle: degenerate centerline (" + std::to_string(n) + " bins)");
    const int q = std::max(2, n / 4);
    const Vec3d d0 = line_direction(std::span<const Vec3d>(line.data(), static_cast<std::size_t>(q)));
    const Vec3d d1 = line_direction(std::span<const Vec3d>(line.data() + (n - q), static_cast<std::size_t>(q)));
    const double raw = std::atan2(d0.cross(d1).norm(), d0.dot(d1));
    // Quarter-segment lines sit at the segment midpoints of an arc.
    return raw * kRadToDeg * n / (n - q);
}

double twist_angle(std::span<const Vec3d> points, std::span<const Vec3d> rest, Vec3d axis) {
    if (points.size() != rest.size()) throw ShapeError("twist_angle: points and rest differ in size");
    if (points.size() < 10) throw InvalidArgument("twist_angle: need at least 10 points");
    const Bins b = bin_by_rest(rest, axis, kCenterlineBins);
    const Vec3d &u = b.axis;

    auto section_angle = [&](const std::vector<std::size_t> &m) {
        if (m.size() < 3) throw InvalidArgument("twist_angle: cross-section bin with fewer than 3 points");
        Vec3d cr = Vec3d::Zero(), cp = Vec3d::Zero();
        for (auto i : m) {
            cr += rest[i];
            cp += points[i];
        }
        cr /= static_cast<double>(m.size());
        cp /= static_cast<double>(m.size());
        // 2D Procrustes rotation in the plane normal to u.
        double sin_sum = 0.0, cos_sum = 0.0;
        for (auto i : m) {
            Vec3d r = rest[i] - cr, p = points[i] - cp;
            r -= r.dot(u) * u;
            p -= p.dot(u) * u;
            sin_sum += u.dot(r.cross(p));
            cos_sum += r.dot(p);
        }
        return std::atan2(sin_sum, cos_sum);
    };
    const int n = kCenterlineBins;
    double a0 = section_angle(b.members.front());
    double a1 = section_angle(b.members.back());
    double d = a1 - a0;
    d = std::remainder(d, 2.0 * std::numbers::pi);
    return d * kRadToDeg * n / (n - 1);
}

void write_metric_csv(const std::vector<MetricReport> &rows, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "sequence,region,iou,ssim,chamfer_mm,angle_err_deg\n" << std::setprecision(9);
    for (const auto &r : rows)
        out << r.sequence << ',' << r.region << ',' << r.iou << ',' << r.ssim << ',' << r.chamfer_mm << ','
            << r.angle_error_deg << '\n';
}

std::string summary_table(const std::vector<MetricReport> &rows) {
    struct Acc {
        double iou = 0, ssim = 0, chamfer = 0, angle = 0;
        int n = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto &r : rows) {
        auto &a = acc[r.region];
        a.iou += r.iou;
        a.ssim += r.ssim;
        a.chamfer += r.chamfer_mm;
        a.angle += r.angle_error_deg;
        ++a.n;
    }
    std::ostringstream os;
    os << std::left << std::setw(10) << "region" << std::right << std::setw(10) << "IoU" << std::setw(10) << "SSIM"
       << std::setw(14) << "Chamfer(mm)" << std::setw(14) << "Angle(deg)" << std::setw(8) << "n" << '\n';
    os << std::fixed;
    for (const auto &[region, a] : acc) {
        os << std::left << std::setw(10) << region << std::right << std::setprecision(3) << std::setw(10) << a.iou / a.n
           << std::setw(10) << a.ssim / a.n << std::setw(14) << a.chamfer / a.n << std::setw(14) << a.angle / a.n
           << std::setw(8) << a.n << '\n';
    }
    return os.str();
}

} // namespace cagesplat
