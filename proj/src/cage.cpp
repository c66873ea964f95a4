// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/cage.hpp"

#include "binary_io.hpp"
#include "cagesplat/error.hpp"
#include "cagesplat/point_index.hpp"

#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cagesplat {

std::size_t CageGrid::edge_count() const {
    std::size_t twice = 0;
    for (const auto &nb : neighbors) twice += nb.size();
    return twice / 2;
}

CageGrid build_cage(const Aabb &bounds, const std::array<int, 3> &dims, const RigidTransform &region_transform) {
    for (int a = 0; a < 3; ++a)
        if (dims[a] < 2) throw InvalidArgument("build_cage: every dimension needs at least 2 nodes");
    if (bounds.empty()) throw InvalidArgument("build_cage: empty bounds");
    const Vec3d extent = bounds.extent();
    if ((extent.array() <= 0.0).any()) throw InvalidArgument("build_cage: degenerate box (zero extent)");
    if (!region_transform.is_rigid(1e-6)) throw InvalidArgument("build_cage: region transform is not rigid");

    const Vec3d lo = bounds.min - kCagePadding * extent;
    const Vec3d span = (1.0 + 2.0 * kCagePadding) * extent;

    CageGrid cage;
    cage.dims = dims;
    cage.region_transform = region_transform;
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    cage.nodes.resize(n);
    cage.neighbors.resize(n);
    for (int iz = 0; iz < dims[2]; ++iz) {
        for (int iy = 0; iy < dims[1]; ++iy) {
            for (int ix = 0; ix < dims[0]; ++ix) {
                const std::size_t id = cage.index(ix, iy, iz);
                cage.nodes[id] = lo + Vec3d(span.x() * ix / (dims[0] - 1), span.y() * iy / (dims[1] - 1),
                                            span.z() * iz / (dims[2] - 1));
                auto &nb = cage.neighbors[id];
                if (iz > 0) nb.push_back(static_cast<std::uint32_t>(cage.index(ix, iy, iz - 1)));
                if (iy > 0) nb.push_back(static_cast<std::uint32_t>(cage.index(ix, iy - 1, iz)));
                if (ix > 0) nb.push_back(static_cast<std::uint32_t>(cage.index(ix - 1, iy, iz)));
                if (ix + 1 < dims[0]) nb.push_back(static_cast<std::uint32_t>(cage.index(ix + 1, iy, iz)));
                if (iy + 1 < dims[1]) nb.push_back(static_cast<std::uint32_t>(cage.index(ix, iy + 1, iz)));
                if (iz + 1 < dims[2]) nb.push_back(static_cast<std::uint32_t>(cage.index(ix, iy, iz + 1)));
            }
        }
    }
    return cage;
}

CageGrid build_cage_for(const GaussianScene &scene, const std::array<int, 3> &dims,
                        const RigidTransform &region_transform) {
    Aabb box;
    for (const auto &g : scene.primitives) box.expand(region_transform.apply_inverse(g.center.cast<double>()));
    return build_cage(box, dims, region_transform);
}

std::vector<double> idw_weights(std::span<const double> distances, double epsilon) {
    std::vector<double> w(distances.size(), 0.0);
    if (distances.empty()) return w;
    if (epsilon <= 0.0) {
        const auto zeros = std::count(distances.begin(), distances.end(), 0.0);
        if (zeros > 0) {
            for (std::size_t i = 0; i < distances.size(); ++i)
                if (distances[i] == 0.0) w[i] = 1.0 / static_cast<double>(zeros);
            return w;
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        w[i] = 1.0 / (distances[i] + epsilon);
        total += w[i];
    }
    for (auto &v : w) v /= total;
    return w;
}

BindingWeights bind_weights(const CageGrid &cage, std::span<const Vec3d> centers, std::size_t k, double epsilon) {
    if (centers.empty()) throw InvalidArgument("bind_weights: empty scene");
    if (k < 1 || k > cage.node_count())
        throw InvalidArgument("bind_weights: k must be in [1, node count]");
    if (epsilon < 0.0) throw InvalidArgument("bind_weights: epsilon must be >= 0");

    BindingWeights out;
    out.k = k;
    out.epsilon = epsilon;
    out.node_count = cage.node_count();
    out.region_transform = cage.region_transform;
    out.nodes.resize(centers.size() * k);
    out.weights.resize(centers.size() * k);

    const PointIndex index(cage.nodes);
    std::vector<double> dist(k);
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const Vec3d p = cage.region_transform.apply_inverse(centers[j]);
        const auto nb = index.k_nearest(p, k);
        for (std::size_t m = 0; m < k; ++m) {
            out.nodes[j * k + m] = static_cast<std::uint32_t>(nb[m].index);
            dist[m] = std::sqrt(nb[m].dist2);
        }
        const auto w = idw_weights(dist, epsilon);
        std::copy(w.begin(), w.end(), out.weights.begin() + static_cast<std::ptrdiff_t>(j * k));
    }
    return out;
}

BindingWeights bind_weights(const CageGrid &cage, const GaussianScene &scene, std::size_t k, double epsilon) {
    const Points centers = scene.centers();
    return bind_weights(cage, centers, k, epsilon);
}

Points gaussian_displacements(const BindingWeights &weights, const CageDisplacementField &field) {
    if (field.size() != weights.node_count)
        throw ShapeError("propagate: field has " + std::to_string(field.size()) + " offsets for a cage of " +
                         std::to_string(weights.node_count) + " nodes");
    const std::size_t n = weights.gaussian_count();
    const Mat3d &rot = weights.region_transform.rotation;
    const bool identity = rot == Mat3d::Identity();
    Points out(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t sj = 0; sj < static_cast<std::ptrdiff_t>(n); ++sj) {
        const auto j = static_cast<std::size_t>(sj);
        Vec3d d = Vec3d::Zero();
        const auto nodes = weights.nodes_of(j);
        const auto w = weights.weights_of(j);
        for (std::size_t m = 0; m < weights.k; ++m) d += w[m] * field.offsets[nodes[m]];
        out[j] = identity ? d : Vec3d(rot * d);
    }
    return out;
}

GaussianScene propagate(const BindingWeights &weights, const CageDisplacementField &field, const GaussianScene &scene) {
    if (scene.size() != weights.gaussian_count())
        throw ShapeError("propagate: scene size does not match the binding weights");
    const Points d = gaussian_displacements(weights, field);
    GaussianScene out = scene;
    for (std::size_t j = 0; j < d.size(); ++j)
        out.primitives[j].center = (scene.primitives[j].center.cast<double>() + d[j]).cast<float>();
    out.frame_id = scene.frame_id + 1;
    out.recompute_bounds();
    return out;
}

double LabelFitReport::max_relative_residual() const {
    return *std::max_element(relative_residual.begin(), relative_residual.end());
}

namespace {

using SparseW = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SparseW weight_matrix(const BindingWeights &w) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(w.nodes.size());
    for (std::size_t j = 0; j < w.gaussian_count(); ++j) {
        const auto nodes = w.nodes_of(j);
        const auto ws = w.weights_of(j);
        for (std::size_t m = 0; m < w.k; ++m)
            trip.emplace_back(static_cast<int>(j), static_cast<int>(nodes[m]), ws[m]);
    }
    SparseW mat(static_cast<Eigen::Index>(w.gaussian_count()), static_cast<Eigen::Index>(w.node_count));
    mat.setFromTriplets(trip.begin(), trip.end());
    return mat;
}

struct CgResult {
    Eigen::VectorXd x;
    std::size_t iterations = 0;
    double relative_residual = 0.0;
};

// Conjugate gradients on (W^T W + lambda I) x = W^T b, starting from zero so
// that a singular system converges to its minimal-norm solution.
CgResult solve_normal_equations(const SparseW &w, const Eigen::SparseMatrix<double> &wt, const Eigen::VectorXd &b,
                                double lambda, double tol, std::size_t max_iter) {
    const Eigen::Index n = w.cols();
    CgResult res;
    res.x = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd rhs = wt * b;
    const double rhs_norm = rhs.norm();
    if (rhs_norm == 0.0) return res;

    auto apply = [&](const Eigen::VectorXd &v) -> Eigen::VectorXd {
        Eigen::VectorXd wv = w * v;
        return wt * wv + lambda * v;
    };
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    while (res.iterations < max_iter) {
        if (std::sqrt(rr) <= tol * rhs_norm) break;
        const Eigen::VectorXd ap = apply(p);
        const double pap = p.dot(ap);
        if (!(pap > 0.0)) break;
        const double alpha = rr / pap;
        res.x += alpha * p;
        r -= alpha * ap;
        const double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
        ++res.iterations;
        // Refresh the recursive residual periodically to limit drift.
        if (res.iterations % 50 == 0) {
            r = rhs - apply(res.x);
            rr = r.squaredNorm();
        }
    }
    res.relative_residual = (rhs - apply(res.x)).norm() / rhs_norm;
    return res;
}

} // namespace

CageDisplacementField extract_cage_labels(const BindingWeights &weights, std::span<const Vec3d> gt,
                                          const LabelFitOptions &opts, LabelFitReport *report) {
    const std::size_t ng = weights.gaussian_count();
    if (ng == 0) throw InvalidArgument("extract_cage_labels: zero Gaussians");
    if (gt.size() != ng)
        throw ShapeError("extract_cage_labels: " + std::to_string(gt.size()) + " displacements for " +
                         std::to_string(ng) + " Gaussians");
    if (opts.lambda_reg < 0.0) throw InvalidArgument("extract_cage_labels: lambda_reg must be >= 0");

    const SparseW w = weight_matrix(weights);
    const Eigen::SparseMatrix<double> wt = w.transpose();
    const std::size_t cap = opts.max_iterations ? opts.max_iterations : 10 * weights.node_count;
    const Mat3d rt = weights.region_transform.rotation.transpose();

    std::array<Eigen::VectorXd, 3> rhs;
    for (auto &v : rhs) v.resize(static_cast<Eigen::Index>(ng));
    for (std::size_t j = 0; j < ng; ++j) {
        const Vec3d d = rt * gt[j];
        for (int a = 0; a < 3; ++a) rhs[a][static_cast<Eigen::Index>(j)] = d[a];
    }

    std::array<CgResult, 3> sol;
#pragma omp parallel for schedule(static, 1)
    for (int a = 0; a < 3; ++a)
        sol[a] = solve_normal_equations(w, wt, rhs[a], opts.lambda_reg, opts.rel_tolerance, cap);

    LabelFitReport rep;
    for (int a = 0; a < 3; ++a) {
        rep.iterations[a] = sol[a].iterations;
        rep.relative_residual[a] = sol[a].relative_residual;
    }
    if (report) *report = rep;
    // The tolerance is applied to the recursive residual; allow the true
    // residual a little slack before declaring failure.
    const double limit = std::max(1e-8, 100.0 * opts.rel_tolerance);
    for (int a = 0; a < 3; ++a) {
        if (!(sol[a].relative_residual <= limit)) {
            std::ostringstream msg;
            msg << "extract_cage_labels: CG did not converge on axis " << a << " after " << sol[a].iterations
                << " iterations (relative residual " << sol[a].relative_residual << ")";
            throw NumericError(msg.str());
        }
    }

    CageDisplacementField field = CageDisplacementField::zeros(weights.node_count);
    for (std::size_t i = 0; i < weights.node_count; ++i)
        for (int a = 0; a < 3; ++a) field.offsets[i][a] = sol[a].x[static_cast<Eigen::Index>(i)];
    return field;
}

CageDisplacementField extract_cage_labels(const BindingWeights &weights, std::span<const Vec3d> gt,
                                          double lambda_reg, LabelFitReport *report) {
    LabelFitOptions opts;
    opts.lambda_reg = lambda_reg;
    return extract_cage_labels(weights, gt, opts, report);
}

RigidTransform align_patch(std::span<const Vec3d> from, std::span<const Vec3d> to) {
    if (from.size() != to.size() || from.size() < 3)
        throw InvalidArgument("align_patch: need matching sets of at least 3 fiducials");
    Vec3d cf = Vec3d::Zero(), ct = Vec3d::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) {
        cf += from[i];
        ct += to[i];
    }
    cf /= static_cast<double>(from.size());
    ct /= static_cast<double>(to.size());

    Mat3d h = Mat3d::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) h += (from[i] - cf) * (to[i] - ct).transpose();

    const Eigen::JacobiSVD<Mat3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3d s = svd.singularValues();
    if (!(s[0] > 0.0) || s[1] <= 1e-10 * s[0]) throw InvalidArgument("align_patch: collinear fiducials");

    const Mat3d u = svd.matrixU();
    const Mat3d v = svd.matrixV();
    Mat3d d = Mat3d::Identity();
    d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    RigidTransform t;
    t.rotation = v * d * u.transpose();
    t.translation = ct - t.rotation * cf;
    return t;
}

double rms_error(const RigidTransform &t, std::span<const Vec3d> from, std::span<const Vec3d> to) {
    double acc = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) acc += (t.apply(from[i]) - to[i]).squaredNorm();
    return from.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(from.size()));
}

void save_weights(const BindingWeights &w, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write weights file " + path.string());
    io::write_magic(out, "CBWT");
    io::write_pod(out, std::uint32_t{1});
    io::write_pod(out, static_cast<std::uint32_t>(w.k));
    io::write_pod(out, w.epsilon);
    io::write_pod(out, static_cast<std::uint64_t>(w.gaussian_count()));
    io::write_pod(out, static_cast<std::uint64_t>(w.node_count));
    for (std::size_t e = 0; e < w.nodes.size(); ++e) {
        io::write_pod(out, w.nodes[e]);
        io::write_pod(out, static_cast<float>(w.weights[e]));
    }
    if (!out) throw IoError("failed writing weights file " + path.string());
}

BindingWeights load_weights(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file " + path.string());
    if (!io::check_magic(in, "CBWT")) throw FormatError("bad weights magic in " + path.string());
    if (io::read_pod<std::uint32_t>(in) != 1) throw FormatError("unsupported weights version");
    BindingWeights w;
    w.k = io::read_pod<std::uint32_t>(in);
    w.epsilon = io::read_pod<double>(in);
    const auto count = io::read_pod<std::uint64_t>(in);
    w.node_count = io::read_pod<std::uint64_t>(in);
    if (!in || w.k == 0) throw FormatError("truncated weights header");
    w.nodes.resize(count * w.k);
    w.weights.resize(count * w.k);
    for (std::size_t e = 0; e < w.nodes.size(); ++e) {
        w.nodes[e] = io::read_pod<std::uint32_t>(in);
        w.weights[e] = io::read_pod<float>(in);
        if (!in) throw FormatError("truncated weights entry", e / w.k);
        if (w.nodes[e] >= w.node_count) throw FormatError("weights entry references a missing node", e / w.k);
    }
    return w;
}

void save_cage(const CageGrid &cage, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write cage file " + path.string());
    out << std::setprecision(17);
    out << "cagesplat-cage 1\n";
    out << "dims " << cage.dims[0] << ' ' << cage.dims[1] << ' ' << cage.dims[2] << '\n';
    out << "transform";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << ' ' << cage.region_transform.rotation(r, c);
    for (int a = 0; a < 3; ++a) out << ' ' << cage.region_transform.translation[a];
    out << '\n';
    for (const auto &p : cage.nodes) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    if (!out) throw IoError("failed writing cage file " + path.string());
}

CageGrid load_cage(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open cage file " + path.string());
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "cagesplat-cage" || version != 1) throw FormatError("not a cage file: " + path.string());
    std::array<int, 3> dims{};
    in >> tag >> dims[0] >> dims[1] >> dims[2];
    if (!in || tag != "dims") throw FormatError("missing cage dims");
    RigidTransform t;
    in >> tag;
    if (tag != "transform") throw FormatError("missing cage transform");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) in >> t.rotation(r, c);
    for (int a = 0; a < 3; ++a) in >> t.translation[a];
    if (!in) throw FormatError("malformed cage transform");
    for (int a = 0; a < 3; ++a)
        if (dims[a] < 2) throw FormatError("cage dims must be >= 2");
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    std::vector<Vec3d> nodes(n);
    for (std::size_t i = 0; i < n; ++i) {
        in >> nodes[i].x() >> nodes[i].y() >> nodes[i].z();
        if (!in) throw FormatError("truncated cage node list", i);
    }
    // Rebuild topology from the lattice corners, then restore exact positions.
    CageGrid cage = build_cage(Aabb::of(nodes), dims, t);
    cage.nodes = std::move(nodes);
    return cage;
}

} // namespace cagesplat
