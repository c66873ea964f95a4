// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/deformer.hpp"
#include "cagesplat/sensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cagesplat {

/// Every tunable of the pipeline. Loaded from an INI-style file; keys not
/// listed here are rejected so typos fail loudly.
struct PipelineConfig {
    struct General {
        std::uint64_t seed = 0;
    } general;

    struct Scene {  // training geometry: a flat sheet
        double sheet_size = 0.10;        // m, square side
        double sheet_thickness = 0.002;  // m
        std::size_t gaussians = 20000;
        double shape_factor = 0.6;
        double opacity = 0.9;
    } scene;

    struct Cage {
        std::array<int, 3> dims{15, 15, 15};
        std::size_t k = 8;
        double epsilon = 1e-6;
        double lambda_reg = 1e-6;
    } cage;

    struct Sensor {
        int rows = 10;
        int cols = 10;
        double sample_hz = 250.0;
        double cutoff_hz = 10.0;
        bool median = true;
        double noise_ohm = 2.0;
        double r0_ohm = 1000.0;
        double r0_spread = 0.0;
        double gauge_factor = 2.0;
        double strain_offset = 0.005;
        bool adc = false;
        int adc_bits = 12;
    } sensor;

    struct Gen {
        std::vector<DeformMode> modes{DeformMode::bend, DeformMode::twist};
        int n_axes = 8;
        int n_keyposes = 20;
        int n_interp = 8;
        double max_magnitude_deg = 90.0;
        double anchor = 0.5;
    } gen;

    ModelConfig model;
    std::size_t direct_points = 400;  // sheet Gaussians supervising the direct variant

    TrainConfig train;
    bool resume = false;

    struct Infer {
        std::string geometry = "cylinder";  // "cylinder" or an STL path
        double cylinder_radius = 0.015;
        double cylinder_length = 0.10;
        std::size_t gaussians = 20000;
        std::vector<DeformMode> modes{DeformMode::bend, DeformMode::twist};
        double bend_axis_deg = 90.0;
        double twist_axis_deg = 0.0;
        int n_keyposes = 20;
        int n_interp = 1;
        double ema_beta = 0.7;
        bool render = false;
    } infer;

    struct Render {
        int width = 640;
        int height = 400;
        double fov_deg = 45.0;
        int tile_px = 16;
        double distance = 0.25;
        double azimuth_deg = 35.0;
        double elevation_deg = 40.0;
        double exposure = 1.0;
        std::size_t coarse_gaussians = 100000;
        std::size_t high_gaussians = 500000;
    } render;

    struct Eval {
        double voxel_mm = 2.0;
        bool ssim_luma = false;
        double patch_size = 0.03;  // m, square sensed region at the center
        int image_width = 160;
        int image_height = 100;
    } eval;

    struct Serve {
        std::string host = "127.0.0.1";
        int port = 7421;
        std::string preset = "coarse";
    } serve;

    struct Paths {
        std::filesystem::path work = "work";
    } paths;

    /// Applies general.seed to every seeded stage.
    std::uint64_t seed() const { return general.seed; }
    SensorModel sensor_model() const;
    DatasetOptions dataset_options() const;
    ModelConfig model_config(std::size_t node_count) const;
    TrainConfig train_config() const;
};

/// Parses INI text. Throws InvalidArgument naming the offending key.
PipelineConfig parse_config(const std::string &text);
PipelineConfig load_config(const std::filesystem::path &path);
/// Round-trips through parse_config.
std::string to_ini(const PipelineConfig &cfg);
/// Throws InvalidArgument on the first violated precondition.
void validate(const PipelineConfig &cfg);

} // namespace cagesplat
