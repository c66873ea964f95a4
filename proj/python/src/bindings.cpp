// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/cage.hpp"
#include "cagesplat/config.hpp"
#include "cagesplat/error.hpp"
#include "cagesplat/gauss_scene.hpp"
#include "cagesplat/metrics.hpp"
#include "cagesplat/pipeline.hpp"
#include "cagesplat/render.hpp"
#include "cagesplat/sensor.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

namespace py = pybind11;
using namespace cagesplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Points to_points(const Array &a, const char *name) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeError(std::string(name) + ": expected an (N, 3) array");
    Points p(static_cast<std::size_t>(a.shape(0)));
    const auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) p[i] = Vec3d(r(i, 0), r(i, 1), r(i, 2));
    return p;
}

Array to_array(const Points &p) {
    Array a({static_cast<py::ssize_t>(p.size()), py::ssize_t{3}});
    auto w = a.mutable_unchecked<2>();
    for (std::size_t i = 0; i < p.size(); ++i)
        for (int c = 0; c < 3; ++c) w(i, c) = p[i](c);
    return a;
}

Vec3d to_vec(const std::vector<double> &v, const char *name) {
    if (v.size() != 3) throw ShapeError(std::string(name) + ": expected 3 values");
    return {v[0], v[1], v[2]};
}

Array image_array(const RenderedImage &img) {
    Array a({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width), py::ssize_t{3}});
    std::copy(img.rgb.begin(), img.rgb.end(), a.mutable_data());
    return a;
}

RenderedImage to_image(const Array &a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image: expected an (H, W, 3) array");
    RenderedImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
    return img;
}

PipelineConfig config_for(const std::filesystem::path &path, std::optional<std::uint64_t> seed,
                          std::optional<std::filesystem::path> out) {
    PipelineConfig cfg = path.empty() ? parse_config("") : load_config(path);
    if (seed) cfg.general.seed = *seed;
    if (out) cfg.paths.work = *out;
    return cfg;
}

py::dict metric_row(const MetricReport &r) {
    py::dict d;
    d["sequence"] = r.sequence;
    d["region"] = r.region;
    d["iou"] = r.iou;
    d["ssim"] = r.ssim;
    d["chamfer_mm"] = r.chamfer_mm;
    d["angle_error_deg"] = r.angle_error_deg;
    return d;
}

} // namespace

PYBIND11_MODULE(_cagesplat, m) {
    m.doc() = "Cage-guided Gaussian splat deformation from tactile sensing.";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const IoError &e) {
            PyErr_SetString(PyExc_OSError, e.what());
        } catch (const InvalidArgument &e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ShapeError &e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error &e) {
            py::set_error(base, e.what());
        }
    });

    // Cage binding and label fitting.
    py::class_<CageGrid>(m, "Cage")
        .def_property_readonly("dims", [](const CageGrid &c) { return c.dims; })
        .def_property_readonly("nodes", [](const CageGrid &c) { return to_array(c.nodes); })
        .def_property_readonly("node_count", &CageGrid::node_count)
        .def_property_readonly("edge_count", &CageGrid::edge_count);

    m.def(
        "build_cage",
        [](const std::vector<double> &lo, const std::vector<double> &hi, const std::array<int, 3> &dims) {
            return build_cage(Aabb{to_vec(lo, "lo"), to_vec(hi, "hi")}, dims);
        },
        py::arg("lo"), py::arg("hi"), py::arg("dims"), "Uniform lattice over a padded box.");

    py::class_<BindingWeights>(m, "Binding")
        .def_readonly("k", &BindingWeights::k)
        .def_readonly("node_count", &BindingWeights::node_count)
        .def_property_readonly("point_count", &BindingWeights::gaussian_count)
        .def_property_readonly("nodes",
                               [](const BindingWeights &w) {
                                   py::array_t<std::uint32_t> a({static_cast<py::ssize_t>(w.gaussian_count()),
                                                                 static_cast<py::ssize_t>(w.k)});
                                   std::copy(w.nodes.begin(), w.nodes.end(), a.mutable_data());
                                   return a;
                               })
        .def_property_readonly("weights", [](const BindingWeights &w) {
            Array a({static_cast<py::ssize_t>(w.gaussian_count()), static_cast<py::ssize_t>(w.k)});
            std::copy(w.weights.begin(), w.weights.end(), a.mutable_data());
            return a;
        });

    m.def(
        "bind",
        [](const CageGrid &cage, const Array &points, std::size_t k, double epsilon) {
            return bind_weights(cage, to_points(points, "points"), k, epsilon);
        },
        py::arg("cage"), py::arg("points"), py::arg("k") = 8, py::arg("epsilon") = 1e-6,
        "Inverse-distance weights to the k nearest cage nodes.");

    m.def(
        "interpolate",
        [](const BindingWeights &w, const Array &offsets) {
            return to_array(gaussian_displacements(w, CageDisplacementField{to_points(offsets, "offsets"), 0.0}));
        },
        py::arg("binding"), py::arg("offsets"), "Per-point displacements from per-node offsets.");

    m.def(
        "fit_labels",
        [](const BindingWeights &w, const Array &displacements, double lambda_reg) {
            return to_array(extract_cage_labels(w, to_points(displacements, "displacements"), lambda_reg).offsets);
        },
        py::arg("binding"), py::arg("displacements"), py::arg("lambda_reg") = 1e-6,
        "Regularized least-squares node offsets reproducing per-point displacements.");

    // Analytic deformation oracle.
    m.def(
        "oracle_deform",
        [](const Array &points, const std::string &mode, double magnitude, double axis_angle, double span,
           double anchor) {
            DeformationState s;
            s.mode = parse_mode(mode);
            s.magnitude = magnitude;
            s.axis_angle = axis_angle;
            s.span = span;
            s.anchor = anchor;
            return to_array(oracle_deform(to_points(points, "points"), s));
        },
        py::arg("points"), py::arg("mode"), py::arg("magnitude"), py::arg("axis_angle") = 0.0, py::arg("span") = 0.0,
        py::arg("anchor") = 0.5, "Displacements of a bend or twist with magnitude in radians.");

    // Metrics.
    m.def(
        "chamfer",
        [](const Array &a, const Array &b) { return chamfer(to_points(a, "a"), to_points(b, "b")); },
        py::arg("a"), py::arg("b"), "Symmetric Chamfer distance in millimeters.");
    m.def(
        "voxel_iou",
        [](const Array &a, const Array &b, double voxel_mm) {
            return voxel_iou(to_points(a, "a"), to_points(b, "b"), voxel_mm);
        },
        py::arg("a"), py::arg("b"), py::arg("voxel_mm") = 2.0);
    m.def(
        "ssim", [](const Array &x, const Array &y, bool luma) { return ssim(to_image(x), to_image(y), luma); },
        py::arg("x"), py::arg("y"), py::arg("luma") = false);
    m.def(
        "bend_angle",
        [](const Array &points, const Array &rest) {
            return bend_angle(to_points(points, "points"), to_points(rest, "rest"));
        },
        py::arg("points"), py::arg("rest"), "Bend angle in degrees between the rod ends.");
    m.def(
        "twist_angle",
        [](const Array &points, const Array &rest) {
            return twist_angle(to_points(points, "points"), to_points(rest, "rest"));
        },
        py::arg("points"), py::arg("rest"), "Signed end-to-end twist in degrees.");

    // Scenes and rendering.
    m.def(
        "scene_centers", [](const std::filesystem::path &path) { return to_array(load_scene(path).centers()); },
        py::arg("path"), "Centers of a saved Gaussian scene.");
    m.def(
        "render",
        [](const std::filesystem::path &scene, std::optional<std::filesystem::path> camera, int width, int height) {
            const GaussianScene s = load_scene(scene);
            Camera cam;
            if (camera) {
                cam = load_camera(*camera);
            } else {
                const PipelineConfig cfg = parse_config("");
                cam = preview_camera(cfg, s, width, height);
            }
            return image_array(render_frame(s, cam));
        },
        py::arg("scene"), py::arg("camera") = py::none(), py::arg("width") = 320, py::arg("height") = 200,
        "Renders a saved scene to an (H, W, 3) float array.");

    // Pipeline stages. `config` is an INI path; an empty path uses defaults.
    m.def(
        "run_gen",
        [](const std::filesystem::path &config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            const auto r = cmd_gen(config_for(config, seed, out));
            py::dict d;
            d["sequences"] = r.sequences;
            d["frames"] = r.frames;
            return d;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "run_fit_labels",
        [](const std::filesystem::path &config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            const auto r = cmd_fit_labels(config_for(config, seed, out));
            py::dict d;
            d["frames"] = r.frames;
            d["max_normal_residual"] = r.max_normal_residual;
            d["max_rms_m"] = r.max_rms_m;
            return d;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "run_train",
        [](const std::filesystem::path &config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            const auto r = cmd_train(config_for(config, seed, out));
            py::list history;
            for (const auto &e : r.history) {
                py::dict h;
                h["epoch"] = e.epoch;
                h["train_loss"] = e.train_loss;
                h["val_loss"] = e.val_loss;
                h["lr"] = e.lr;
                history.append(h);
            }
            py::dict d;
            d["history"] = history;
            d["best_epoch"] = r.best_epoch;
            d["early_stopped"] = r.early_stopped;
            return d;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "run_infer",
        [](const std::filesystem::path &config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            const auto r = cmd_infer(config_for(config, seed, out));
            py::dict d;
            d["frames"] = r.frames;
            d["mean_frame_ms"] = r.mean_frame_ms;
            return d;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
    m.def(
        "run_eval",
        [](const std::filesystem::path &config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            py::list rows;
            for (const auto &r : cmd_eval(config_for(config, seed, out))) rows.append(metric_row(r));
            return rows;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
}
