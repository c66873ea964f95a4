// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/cage.hpp"
#include "cagesplat/gauss_scene.hpp"
#include "cagesplat/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cagesplat {

using SensorGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using AdcGrid = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One timestamped resistance image. Before calibration `grid` holds raw
/// channel readings (ohms); afterwards it holds dR/R0 per channel.
struct SensorFrame {
    SensorGrid grid;
    double timestamp = 0.0;
    std::optional<AdcGrid> adc_raw;

    int rows() const { return static_cast<int>(grid.rows()); }
    int cols() const { return static_cast<int>(grid.cols()); }
};

/// Two-point calibration per channel: R = gain * raw + offset, normalized
/// against the resting baseline r0.
struct CalibrationTable {
    SensorGrid r0;
    SensorGrid gain;
    SensorGrid offset;

    static CalibrationTable uniform(int rows, int cols, double r0_ohm);
    /// Baselines spread uniformly by +-spread around r0_ohm (deterministic).
    static CalibrationTable with_spread(int rows, int cols, double r0_ohm, double spread, std::uint64_t seed);
};

SensorFrame calibrate(const SensorFrame &raw, const CalibrationTable &table);
/// Inverse of calibrate: normalized dR/R0 back to raw channel readings.
SensorFrame decalibrate(const SensorFrame &normalized, const CalibrationTable &table);

/// First-order causal IIR low-pass, y_t = a x_t + (1 - a) y_{t-1}, with the
/// state starting at zero (the resting level of normalized frames).
class LowPassFilter {
public:
    LowPassFilter(double cutoff_hz, double sample_hz);

    double coefficient() const { return a_; }
    SensorFrame apply(const SensorFrame &frame);
    void reset() { state_.reset(); }

private:
    double a_;
    std::optional<SensorGrid> state_;
};

std::vector<SensorFrame> lowpass_iir(std::span<const SensorFrame> sequence, double cutoff_hz, double sample_hz);

/// 3x3 median with replicate padding at the borders.
SensorFrame median3x3(const SensorFrame &frame);

/// Block-concatenates equally sized patches row-major into one frame. The
/// result carries the latest input timestamp.
SensorFrame tile_frames(std::span<const SensorFrame> patches, int layout_rows, int layout_cols, double sample_hz);

enum class DeformMode { bend, twist };

std::string to_string(DeformMode m);
DeformMode parse_mode(const std::string &s);

/// Actuation parameters of the analytic oracle. For a bend `axis_angle` is
/// the in-plane direction of the fold line; for a twist it is the direction
/// of the twist axis. `span` is the member length the actuation spreads over.
/// `anchor` places the section that stays put, as a fraction of the span
/// from its low end: 0 holds the base, 0.5 the middle.
struct DeformationState {
    DeformMode mode = DeformMode::bend;
    double magnitude = 0.0;
    double axis_angle = 0.0;
    double phase = 0.0;
    double span = 0.0;
    double anchor = 0.5;
};

/// Unit in-plane vectors of a state: `axis` along the central axis and
/// `length` along the direction the actuation accumulates over.
struct ActuationFrame {
    Vec3d axis;
    Vec3d length;
};
ActuationFrame actuation_frame(const DeformationState &state);

/// Extent of a point set along the direction the state accumulates over.
double actuated_span(std::span<const Vec3d> rest, const DeformationState &state);

/// Analytic displacements for points given in the canonical frame (normal
/// along +z, object centered at the origin). A bend is a constant-curvature
/// arc held fixed and tangent at the anchor section; a twist rotates each
/// cross-section about the central axis by an angle growing linearly from
/// the anchor.
Points oracle_deform(std::span<const Vec3d> rest, const DeformationState &state);
Points oracle_deform(const GaussianScene &scene, const DeformationState &state);

/// Gauge model of the tactile patch. Cells sense normal strain at a fixed
/// offset from the neutral surface along a gauge direction that turns with
/// the row (row r points at angle pi r / rows), so every row is a rosette
/// sample and the pattern encodes curvature magnitude, axis orientation and
/// bend/twist type.
struct SensorModel {
    int rows = 10;
    int cols = 10;
    double patch_size = 0.03;     // m, square patch
    double gauge_factor = 2.0;    // dR/R0 per unit strain
    double strain_offset = 0.005; // m, gauge layer to neutral surface
    double default_span = 0.10;   // m, used when a state carries no span
    CalibrationTable calibration = CalibrationTable::uniform(10, 10, 1000.0);
    bool adc = false;
    int adc_bits = 12;
    double divider_ref_ohm = 1000.0;
};

/// Noise-free per-cell strain for a state.
SensorGrid gauge_strain(const DeformationState &state, const SensorModel &model);

/// Raw resistance frame for a deformation state plus Gaussian noise (ohms).
SensorFrame simulate_resistance(const DeformationState &state, double noise_std, std::uint64_t seed,
                                const SensorModel &model = {});

/// Divider-voltage ADC model used when SensorModel::adc is set.
AdcGrid adc_encode(const SensorGrid &ohms, const SensorModel &model);
SensorGrid adc_decode(const AdcGrid &codes, const SensorModel &model);

/// calibrate -> low-pass -> median, with filter state carried across frames.
class AcquisitionChain {
public:
    AcquisitionChain(CalibrationTable table, double cutoff_hz, double sample_hz, bool median = true);
    SensorFrame process(const SensorFrame &raw);
    void reset() { lowpass_.reset(); }

private:
    CalibrationTable table_;
    LowPassFilter lowpass_;
    bool median_;
};

struct MotionSequence {
    std::string geometry_id;
    DeformMode mode = DeformMode::bend;
    double sample_hz = 250.0;
    std::vector<SensorFrame> frames;
    std::vector<DeformationState> states;
    std::vector<Points> gt_displacements;
    std::vector<CageDisplacementField> labels;  // empty until extracted

    std::size_t size() const { return frames.size(); }
    bool has_labels() const { return !labels.empty() && labels.size() == frames.size(); }
};

struct DatasetOptions {
    double max_magnitude = 1.5707963267948966;  // rad
    double sample_hz = 250.0;
    double noise_ohm = 2.0;
    double anchor = 0.5;
    double axis_offset = 0.0;  // rad, added to every axis orientation
    std::string geometry_id = "sheet";
    SensorModel sensor;
};

/// One sequence per axis orientation (evenly spaced over [0, pi) and shifted
/// by axis_offset). Each
/// sequence ramps over n_keyposes key magnitudes with n_interp states
/// interpolated linearly between consecutive keys.
std::vector<MotionSequence> generate_dataset(const GaussianScene &scene, DeformMode mode, int n_axes, int n_keyposes,
                                             int n_interp, std::uint64_t seed, const DatasetOptions &opts = {});

/// Directory layout: meta, states.csv, frames.bin, gt.bin, labels.bin.
void save_sequence(const MotionSequence &seq, const std::filesystem::path &dir);
MotionSequence load_sequence(const std::filesystem::path &dir, bool with_gt = true);
/// Writes only labels.bin for an existing sequence directory.
void save_labels(const MotionSequence &seq, const std::filesystem::path &dir);

} // namespace cagesplat
