// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/pipeline.hpp"

#include "cagesplat/error.hpp"
#include "cagesplat/mesh.hpp"
#include "rng.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace cagesplat {

namespace fs = std::filesystem;

namespace {

// Seed streams; each stage draws from its own.
constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kGenStream = 2;
constexpr std::uint64_t kStreamStream = 3;
constexpr std::uint64_t kDeployStream = 4;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

void say(const LogFn &log, const std::string &msg) {
    if (log) log(msg);
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<fs::path> list_sequences(const fs::path &dir) {
    if (!fs::is_directory(dir)) throw IoError("missing dataset directory " + dir.string() + " (run gen first)");
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "meta")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no sequences under " + dir.string());
    return out;
}

ProxyOptions proxy_options(const PipelineConfig &cfg) {
    ProxyOptions o;
    o.opacity = static_cast<float>(cfg.scene.opacity);
    o.shape_factor = cfg.scene.shape_factor;
    return o;
}

AcquisitionChain make_chain(const PipelineConfig &cfg) {
    return AcquisitionChain(cfg.sensor_model().calibration, cfg.sensor.cutoff_hz, cfg.sensor.sample_hz,
                            cfg.sensor.median);
}

/// Evenly strided Gaussian subsample supervising the direct variant.
std::vector<std::size_t> direct_subsample(std::size_t n, std::size_t want) {
    want = std::clamp<std::size_t>(want, 1, n);
    std::vector<std::size_t> idx(want);
    for (std::size_t i = 0; i < want; ++i) idx[i] = i * n / want;
    return idx;
}

template <class T> std::vector<T> pick(const std::vector<T> &v, const std::vector<std::size_t> &idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

GaussianScene subset_scene(const GaussianScene &s, const std::vector<std::size_t> &idx) {
    GaussianScene out;
    out.frame_id = s.frame_id;
    out.primitives = pick(s.primitives, idx);
    out.recompute_bounds();
    return out;
}

Points offset_points(const Points &rest, const Points &disp) {
    Points out(rest.size());
    for (std::size_t i = 0; i < rest.size(); ++i) out[i] = rest[i] + disp[i];
    return out;
}

double angle_of(DeformMode mode, const Points &pts, const Points &rest, const Vec3d &axis) {
    return mode == DeformMode::bend ? bend_angle(pts, rest, axis) : twist_angle(pts, rest, axis);
}

} // namespace

fs::path Workspace::sequence(const fs::path &base, DeformMode mode, int axis) const {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%02d", to_string(mode).c_str(), axis);
    return base / name;
}

GaussianScene training_scene(const PipelineConfig &cfg) {
    const double h = 0.5 * cfg.scene.sheet_size, t = 0.5 * cfg.scene.sheet_thickness;
    return init_proxy_from_mesh(make_box(Vec3d(-h, -h, -t), Vec3d(h, h, t)), cfg.scene.gaussians,
                                detail::mix_seed(cfg.seed(), kSceneStream), proxy_options(cfg));
}

TriangleMesh deployment_mesh(const PipelineConfig &cfg) {
    if (cfg.infer.geometry == "cylinder") return make_cylinder(cfg.infer.cylinder_radius, cfg.infer.cylinder_length);
    return read_stl(cfg.infer.geometry);
}

GaussianScene deployment_scene(const PipelineConfig &cfg, std::size_t gaussians) {
    return init_proxy_from_mesh(deployment_mesh(cfg), gaussians, detail::mix_seed(cfg.seed(), kDeployStream),
                                proxy_options(cfg));
}

std::vector<std::size_t> sensed_region(const GaussianScene &rest, double patch_size) {
    const Vec3d c = rest.bounds.center();
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const Vec3d p = rest.primitives[i].center.cast<double>() - c;
        if (std::abs(p.x()) <= 0.5 * patch_size && std::abs(p.y()) <= 0.5 * patch_size) idx.push_back(i);
    }
    return idx;
}

Camera preview_camera(const PipelineConfig &cfg, const GaussianScene &rest, int width, int height) {
    return orbit_camera(rest.bounds.center(), cfg.render.distance, deg2rad(cfg.render.azimuth_deg),
                        deg2rad(cfg.render.elevation_deg), deg2rad(cfg.render.fov_deg), width, height);
}

GenSummary cmd_gen(const PipelineConfig &cfg, const LogFn &log) {
    validate(cfg);
    const Workspace ws{cfg.paths.work};
    fs::remove_all(ws.train());
    fs::create_directories(ws.train());

    const GaussianScene scene = training_scene(cfg);
    save_scene(scene, ws.train() / "scene.cspl");
    const CageGrid cage = build_cage_for(scene, cfg.cage.dims);
    save_cage(cage, ws.train() / "cage.txt");
    save_weights(bind_weights(cage, scene, cfg.cage.k, cfg.cage.epsilon), ws.train() / "weights.bin");
    say(log, "sheet proxy: " + std::to_string(scene.size()) + " Gaussians, cage " + std::to_string(cage.node_count()) +
                 " nodes");

    GenSummary out;
    for (const DeformMode mode : cfg.gen.modes) {
        for (int a = 0; a < cfg.gen.n_axes; ++a) {
            // One axis at a time keeps ground truth for a single sequence in memory.
            DatasetOptions opts = cfg.dataset_options();
            opts.geometry_id = "sheet";
            opts.axis_offset = std::numbers::pi * a / cfg.gen.n_axes;
            const std::uint64_t seed =
                detail::mix_seed(cfg.seed(), kGenStream, static_cast<std::uint64_t>(mode), static_cast<std::uint64_t>(a));
            auto seqs = generate_dataset(scene, mode, 1, cfg.gen.n_keyposes, cfg.gen.n_interp, seed, opts);
            const fs::path dir = ws.sequence(ws.train(), mode, a);
            save_sequence(seqs.front(), dir);
            out.frames += seqs.front().size();
            out.sequences.push_back(dir);
            say(log, "wrote " + dir.string() + " (" + std::to_string(seqs.front().size()) + " frames)");
        }
    }
    return out;
}

FitSummary cmd_fit_labels(const PipelineConfig &cfg, const LogFn &log) {
    validate(cfg);
    const Workspace ws{cfg.paths.work};
    const auto dirs = list_sequences(ws.train());
    const BindingWeights w = load_weights(ws.train() / "weights.bin");
    LabelFitOptions opts;
    opts.lambda_reg = cfg.cage.lambda_reg;

    std::ofstream report(ws.train() / "fit_report.csv");
    if (!report) throw IoError("cannot write fit_report.csv");
    report << "sequence,frame,normal_residual,rms_m\n" << std::setprecision(9);

    FitSummary out;
    for (const auto &dir : dirs) {
        MotionSequence seq = load_sequence(dir, true);
        const std::size_t n = seq.size();
        seq.labels.assign(n, {});
        std::vector<double> normal(n), rms(n);
#pragma omp parallel for schedule(dynamic)
        for (std::size_t f = 0; f < n; ++f) {
            LabelFitReport rep;
            seq.labels[f] = extract_cage_labels(w, seq.gt_displacements[f], opts, &rep);
            seq.labels[f].timestamp = seq.frames[f].timestamp;
            const Points fit = gaussian_displacements(w, seq.labels[f]);
            double ss = 0.0;
            for (std::size_t j = 0; j < fit.size(); ++j) ss += (fit[j] - seq.gt_displacements[f][j]).squaredNorm();
            normal[f] = rep.max_relative_residual();
            rms[f] = fit.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(fit.size()));
        }
        for (std::size_t f = 0; f < n; ++f) {
            report << dir.filename().string() << ',' << f << ',' << normal[f] << ',' << rms[f] << '\n';
            out.max_normal_residual = std::max(out.max_normal_residual, normal[f]);
            out.max_rms_m = std::max(out.max_rms_m, rms[f]);
        }
        out.frames += n;
        save_labels(seq, dir);
        say(log, "labeled " + dir.filename().string());
    }
    std::ostringstream msg;
    msg << "fit " << out.frames << " frames, max normal-equation residual " << out.max_normal_residual
        << ", max RMS " << out.max_rms_m * 1e3 << " mm";
    say(log, msg.str());
    return out;
}

TrainResult cmd_train(const PipelineConfig &cfg, const LogFn &log) {
    validate(cfg);
    const Workspace ws{cfg.paths.work};
    const auto dirs = list_sequences(ws.train());
    const bool direct = cfg.model.architecture == Architecture::direct;

    const CageGrid cage = load_cage(ws.train() / "cage.txt");
    NodeSet nodes;
    std::vector<std::size_t> subsample;
    if (direct) {
        const GaussianScene scene = load_scene(ws.train() / "scene.cspl");
        subsample = direct_subsample(scene.size(), cfg.direct_points);
        nodes = point_nodes(pick(scene.centers(), subsample), cfg.model.coord_scale);
    } else {
        nodes = cage_nodes(cage, cfg.model.coord_scale);
    }

    std::vector<TrainingSequence> data;
    for (const auto &dir : dirs) {
        MotionSequence seq = load_sequence(dir, direct);
        if (!direct && !seq.has_labels())
            throw InvalidArgument("sequence " + dir.filename().string() + " has no cage labels (run fit-labels)");
        TrainingSequence ts;
        AcquisitionChain chain = make_chain(cfg);
        for (std::size_t f = 0; f < seq.size(); ++f) {
            ts.frames.push_back(chain.process(seq.frames[f]).grid);
            ts.t_norm.push_back(seq.states[f].phase);
            ts.targets.push_back(direct ? pick(seq.gt_displacements[f], subsample) : seq.labels[f].offsets);
        }
        ts.nodes = &nodes;
        data.push_back(std::move(ts));
    }

    const std::size_t node_count = direct ? 0 : cage.node_count();
    fs::create_directories(ws.model());
    DeformerModel model = (cfg.resume && fs::exists(ws.checkpoint()))
                              ? (direct ? load_checkpoint(ws.checkpoint()) : load_checkpoint(ws.checkpoint(), node_count))
                              : DeformerModel(cfg.model_config(node_count));
    if (cfg.resume && fs::exists(ws.checkpoint())) say(log, "resuming from " + ws.checkpoint().string());
    say(log, "training " + to_string(model.config().architecture) + " on " + std::to_string(data.size()) +
                 " sequences, " + std::to_string(model.parameter_count()) + " parameters");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(model, data, cfg.train_config());
    save_checkpoint(model, ws.checkpoint());
    write_history_csv(r, ws.model() / "history.csv");
    std::ostringstream msg;
    msg << "trained " << r.history.size() << " epochs in " << ms_since(t0) / 1e3 << " s, best epoch " << r.best_epoch
        << " (val " << r.history[static_cast<std::size_t>(r.best_epoch)].val_loss << ")"
        << (r.early_stopped ? ", stopped early" : "");
    say(log, msg.str());
    return r;
}

void synthesize_stream(const PipelineConfig &cfg, const LogFn &log) {
    const Workspace ws{cfg.paths.work};
    GaussianScene scene;
    for (const DeformMode mode : cfg.infer.modes) {
        const fs::path dir = ws.stream() / to_string(mode);
        if (fs::exists(dir / "meta")) continue;
        if (scene.empty()) scene = deployment_scene(cfg, cfg.infer.gaussians);
        DatasetOptions opts = cfg.dataset_options();
        opts.geometry_id = cfg.infer.geometry == "cylinder" ? "cylinder" : fs::path(cfg.infer.geometry).stem().string();
        opts.axis_offset = deg2rad(mode == DeformMode::bend ? cfg.infer.bend_axis_deg : cfg.infer.twist_axis_deg);
        auto seqs = generate_dataset(scene, mode, 1, cfg.infer.n_keyposes, cfg.infer.n_interp,
                                     detail::mix_seed(cfg.seed(), kStreamStream, static_cast<std::uint64_t>(mode)), opts);
        save_sequence(seqs.front(), dir);
        say(log, "synthesized " + dir.string());
    }
}

InferSummary cmd_infer(const PipelineConfig &cfg, const LogFn &log) {
    validate(cfg);
    const Workspace ws{cfg.paths.work};
    if (!fs::exists(ws.checkpoint())) throw IoError("missing checkpoint " + ws.checkpoint().string() + " (run train)");
    fs::create_directories(ws.infer());

    if (cfg.infer.geometry == "cylinder") write_stl(deployment_mesh(cfg), ws.infer() / "geometry.stl");
    const GaussianScene rest = deployment_scene(cfg, cfg.infer.gaussians);
    save_scene(rest, ws.infer() / "scene.cspl");

    DeformerModel model = load_checkpoint(ws.checkpoint());
    const bool direct = model.config().architecture == Architecture::direct;
    const double scale = model.config().coord_scale;
    CageGrid cage;
    BindingWeights weights;
    NodeSet nodes;
    if (direct) {
        nodes = point_nodes(rest.centers(), scale);
    } else {
        cage = build_cage_for(rest, cfg.cage.dims);
        if (cage.node_count() != model.config().node_count)
            throw ShapeError("checkpoint was built for " + std::to_string(model.config().node_count) +
                             " cage nodes, the deployment cage has " + std::to_string(cage.node_count()));
        save_cage(cage, ws.infer() / "cage.txt");
        weights = bind_weights(cage, rest, cfg.cage.k, cfg.cage.epsilon);
        nodes = cage_nodes(cage, scale);
    }
    say(log, "deploying on " + cfg.infer.geometry + ": " + std::to_string(rest.size()) + " Gaussians");

    synthesize_stream(cfg, log);
    const Camera cam = preview_camera(cfg, rest, cfg.render.width, cfg.render.height);

    InferSummary out;
    double total_ms = 0.0;
    for (const DeformMode mode : cfg.infer.modes) {
        const MotionSequence seq = load_sequence(ws.stream() / to_string(mode), false);
        const fs::path dir = ws.infer() / to_string(mode);
        fs::create_directories(dir);
        if (cfg.infer.render) fs::create_directories(dir / "frames");

        AcquisitionChain chain = make_chain(cfg);
        EmaState ema(cfg.infer.ema_beta);
        std::vector<Points> disps;
        std::ofstream timing(dir / "timing.csv");
        timing << "frame,filter_ms,forward_ms,propagate_ms,render_ms\n" << std::setprecision(6);
        const double t_first = seq.frames.empty() ? 0.0 : seq.frames.front().timestamp;
        const double duration = seq.frames.empty() ? 0.0 : seq.frames.back().timestamp - t_first;

        for (std::size_t f = 0; f < seq.size(); ++f) {
            auto t = std::chrono::steady_clock::now();
            const SensorFrame filtered = chain.process(seq.frames[f]);
            const double filter_ms = ms_since(t);
            const double t_norm = duration > 0.0 ? (seq.frames[f].timestamp - t_first) / duration : 0.0;

            t = std::chrono::steady_clock::now();
            CageDisplacementField raw;
            if (direct)
                raw.offsets = model.predict_points(filtered, t_norm, nodes);
            else
                raw = model.predict(filtered, t_norm, nodes);
            raw.timestamp = filtered.timestamp;
            const CageDisplacementField &field = ema.update(raw);
            const double forward_ms = ms_since(t);

            t = std::chrono::steady_clock::now();
            Points disp = direct ? field.offsets : gaussian_displacements(weights, field);
            const double propagate_ms = ms_since(t);

            double render_ms = 0.0;
            if (cfg.infer.render) {
                t = std::chrono::steady_clock::now();
                GaussianScene frame_scene = rest;
                frame_scene.set_centers(offset_points(rest.centers(), disp));
                frame_scene.frame_id = f;
                const RenderedImage img = render_frame(frame_scene, cam, cfg.render.tile_px);
                render_ms = ms_since(t);
                char name[32];
                std::snprintf(name, sizeof name, "%04zu.png", f);
                write_image(img, dir / "frames" / name, cfg.render.exposure);
            }
            timing << f << ',' << filter_ms << ',' << forward_ms << ',' << propagate_ms << ',' << render_ms << '\n';
            total_ms += filter_ms + forward_ms + propagate_ms + render_ms;
            disps.push_back(std::move(disp));
        }
        write_displacements(disps, dir / "disp.bin");
        out.frames += disps.size();
        say(log, "inferred " + std::to_string(disps.size()) + " " + to_string(mode) + " frames");
    }
    out.mean_frame_ms = out.frames ? total_ms / static_cast<double>(out.frames) : 0.0;
    std::ostringstream msg;
    msg << "mean frame time " << out.mean_frame_ms << " ms";
    say(log, msg.str());
    return out;
}

std::vector<MetricReport> cmd_eval(const PipelineConfig &cfg, const LogFn &log) {
    validate(cfg);
    const Workspace ws{cfg.paths.work};
    const GaussianScene rest = load_scene(ws.infer() / "scene.cspl");
    const Points rest_pts = rest.centers();
    const auto center = sensed_region(rest, cfg.eval.patch_size);
    if (center.empty()) throw InvalidArgument("eval: the sensed patch covers no Gaussians");
    const Points rest_center = pick(rest_pts, center);
    const Vec3d axis = principal_axis(rest_pts);
    const Camera cam = preview_camera(cfg, rest, cfg.eval.image_width, cfg.eval.image_height);
    const std::string geometry =
        cfg.infer.geometry == "cylinder" ? "cylinder" : fs::path(cfg.infer.geometry).stem().string();

    std::vector<MetricReport> rows;
    for (const DeformMode mode : cfg.infer.modes) {
        const MotionSequence gt = load_sequence(ws.stream() / to_string(mode), true);
        const fs::path pred_file = ws.infer() / to_string(mode) / "disp.bin";
        const std::vector<Points> pred = fs::exists(pred_file) ? read_displacements(pred_file, rest.size()) : std::vector<Points>{};
        if (pred.size() < gt.size()) {
            std::string ids;
            for (std::size_t f = pred.size(); f < gt.size(); ++f) ids += (ids.empty() ? "" : ", ") + std::to_string(f);
            throw InvalidArgument("eval: missing " + to_string(mode) + " predictions for frames " + ids);
        }

        std::vector<MetricReport> mode_rows(2 * gt.size());
#pragma omp parallel for schedule(dynamic)
        for (std::size_t f = 0; f < gt.size(); ++f) {
            char id[64];
            std::snprintf(id, sizeof id, "%s_%s_%04zu", geometry.c_str(), to_string(mode).c_str(), f);
            const Points p = offset_points(rest_pts, pred[f]);
            const Points g = offset_points(rest_pts, gt.gt_displacements[f]);
            for (int region = 0; region < 2; ++region) {
                const bool full = region == 1;
                const Points pp = full ? p : pick(p, center);
                const Points gg = full ? g : pick(g, center);
                const Points &rr = full ? rest_pts : rest_center;
                GaussianScene ps = full ? rest : subset_scene(rest, center), gs = ps;
                ps.set_centers(pp);
                gs.set_centers(gg);

                MetricReport m;
                m.sequence = id;
                m.region = full ? "full" : "center";
                m.chamfer_mm = chamfer(pp, gg);
                m.iou = voxel_iou(pp, gg, cfg.eval.voxel_mm);
                m.ssim = ssim(render_frame(ps, cam), render_frame(gs, cam), cfg.eval.ssim_luma);
                m.angle_error_deg = std::abs(angle_of(mode, pp, rr, axis) - angle_of(mode, gg, rr, axis));
                mode_rows[2 * f + static_cast<std::size_t>(region)] = m;
            }
        }
        rows.insert(rows.end(), mode_rows.begin(), mode_rows.end());
    }

    fs::create_directories(ws.eval());
    write_metric_csv(rows, ws.eval() / "metrics.csv");
    const std::string table = summary_table(rows);
    std::ofstream(ws.eval() / "summary.txt") << table;
    say(log, table);
    return rows;
}

void write_displacements(const std::vector<Points> &frames, const fs::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    std::vector<float> buf;
    for (const auto &f : frames) {
        buf.resize(3 * f.size());
        for (std::size_t j = 0; j < f.size(); ++j)
            for (int a = 0; a < 3; ++a) buf[3 * j + a] = static_cast<float>(f[j][a]);
        out.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Points> read_displacements(const fs::path &path, std::size_t gaussians) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (gaussians == 0) throw InvalidArgument("read_displacements: zero Gaussians");
    const auto bytes = fs::file_size(path);
    const std::size_t frame_bytes = gaussians * 3 * sizeof(float);
    if (bytes % frame_bytes != 0)
        throw FormatError(path.string() + " is not a whole number of " + std::to_string(gaussians) + "-Gaussian frames");
    std::vector<Points> out(bytes / frame_bytes, Points(gaussians));
    std::vector<float> buf(3 * gaussians);
    for (auto &f : out) {
        in.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(frame_bytes));
        for (std::size_t j = 0; j < gaussians; ++j) f[j] = Vec3d(buf[3 * j], buf[3 * j + 1], buf[3 * j + 2]);
    }
    return out;
}

} // namespace cagesplat
