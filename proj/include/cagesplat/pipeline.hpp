// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/cage.hpp"
#include "cagesplat/config.hpp"
#include "cagesplat/deformer.hpp"
#include "cagesplat/metrics.hpp"
#include "cagesplat/render.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cagesplat {

/// Directory layout under paths.work.
struct Workspace {
    std::filesystem::path root;

    std::filesystem::path train() const { return root / "train"; }
    std::filesystem::path model() const { return root / "model"; }
    std::filesystem::path checkpoint() const { return model() / "model.cdnn"; }
    std::filesystem::path stream() const { return root / "stream"; }
    std::filesystem::path infer() const { return root / "infer"; }
    std::filesystem::path eval() const { return root / "eval"; }
    std::filesystem::path sequence(const std::filesystem::path &base, DeformMode mode, int axis) const;
};

/// Progress lines go here; the CLI prints them, tests stay quiet.
using LogFn = std::function<void(const std::string &)>;

/// Sheet proxy the network is trained on.
GaussianScene training_scene(const PipelineConfig &cfg);
/// Mesh of the unseen deployment geometry: the built-in cylinder along +x
/// or a binary STL already expressed in the canonical frame.
TriangleMesh deployment_mesh(const PipelineConfig &cfg);
GaussianScene deployment_scene(const PipelineConfig &cfg, std::size_t gaussians);

/// Indices of Gaussians whose rest center lies over the sensed patch.
std::vector<std::size_t> sensed_region(const GaussianScene &rest, double patch_size);
/// Camera for evaluation and previews, orbiting the scene's center.
Camera preview_camera(const PipelineConfig &cfg, const GaussianScene &rest, int width, int height);

struct GenSummary {
    std::vector<std::filesystem::path> sequences;
    std::size_t frames = 0;
};
/// Training scene, cage, weights and one sequence per mode and axis.
GenSummary cmd_gen(const PipelineConfig &cfg, const LogFn &log = {});

struct FitSummary {
    std::size_t frames = 0;
    double max_normal_residual = 0.0;  // relative, of the normal equations
    double max_rms_m = 0.0;            // |W dc - gt| per Gaussian, RMS
};
/// Adds cage labels to every training sequence; writes fit_report.csv.
FitSummary cmd_fit_labels(const PipelineConfig &cfg, const LogFn &log = {});

/// Trains from the labeled sequences (or, for the direct variant, from a
/// fixed subsample of sheet Gaussians) and writes the checkpoint and
/// history. Continues from an existing checkpoint when cfg.resume is set.
TrainResult cmd_train(const PipelineConfig &cfg, const LogFn &log = {});

/// Synthesizes the oracle sensor stream for the deployment geometry, one
/// sequence per mode, including ground truth for cmd_eval. Skips modes
/// whose stream already exists.
void synthesize_stream(const PipelineConfig &cfg, const LogFn &log = {});

struct InferSummary {
    std::size_t frames = 0;
    double mean_frame_ms = 0.0;
};
/// Zero-shot deployment: filter chain, forward, EMA, propagation and
/// optional rendering per frame. Reads only the checkpoint, the geometry
/// and sensor frames; never the training data.
InferSummary cmd_infer(const PipelineConfig &cfg, const LogFn &log = {});

/// Center and full rows for every frame of every mode; writes metrics.csv
/// and summary.txt.
std::vector<MetricReport> cmd_eval(const PipelineConfig &cfg, const LogFn &log = {});

// Per-frame displacement files shared by infer and eval: f32 xyz per
// Gaussian, frames back to back.
void write_displacements(const std::vector<Points> &frames, const std::filesystem::path &path);
std::vector<Points> read_displacements(const std::filesystem::path &path, std::size_t gaussians);

} // namespace cagesplat
