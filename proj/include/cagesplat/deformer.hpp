// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/autodiff.hpp"
#include "cagesplat/cage.hpp"
#include "cagesplat/sensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cagesplat {

/// kind of network behind a DeformerModel. `direct` bypasses the cage and
/// regresses a displacement for every Gaussian independently.
enum class Architecture { cage_gat, direct };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string &s);

struct ModelConfig {
    Architecture architecture = Architecture::cage_gat;
    int grid_rows = 10;
    int grid_cols = 10;
    int conv1_channels = 16;
    int conv2_channels = 32;
    int feature_dim = 128;
    int time_bands = 6;
    int heads = 4;
    int hidden = 256;            // per-head width
    double coord_scale = 0.05;   // m; node coordinates and outputs are in these units
    std::size_t node_count = 0;  // cage node count the model is built for; 0 for direct
    std::uint64_t seed = 0;
};

/// [sin(2^b pi t), cos(2^b pi t)] for b = 0..bands-1, sin first. t is
/// clamped to [0, 1].
std::vector<float> time_embedding(double t_norm, int bands = 6);

/// Node positions and connectivity the network runs on.
struct NodeSet {
    ad::TensorPtr positions;        // [n, 3]: x, y over coord_scale; z over the set's half-thickness
    ad::Adjacency attention;        // neighbors plus self
    ad::Adjacency neighbors;        // neighbors only

    std::size_t size() const { return positions ? static_cast<std::size_t>(positions->dim(0)) : 0; }
};

NodeSet cage_nodes(const CageGrid &cage, double coord_scale);
/// Free points without connectivity, for the direct variant.
NodeSet point_nodes(std::span<const Vec3d> points, double coord_scale);

class DeformerModel {
public:
    explicit DeformerModel(const ModelConfig &cfg);
    // Parameters are shared tensors; copies would alias them.
    DeformerModel(const DeformerModel &) = delete;
    DeformerModel &operator=(const DeformerModel &) = delete;
    DeformerModel(DeformerModel &&) = default;
    DeformerModel &operator=(DeformerModel &&) = default;

    const ModelConfig &config() const { return cfg_; }
    std::vector<std::pair<std::string, ad::TensorPtr>> &parameters() { return params_; }
    const std::vector<std::pair<std::string, ad::TensorPtr>> &parameters() const { return params_; }
    ad::TensorPtr parameter(const std::string &name) const;
    std::size_t parameter_count() const;

    /// Records one frame's forward pass. `frame` is a normalized (dR/R0)
    /// grid. Returns [n, 3] offsets in coord_scale units.
    ad::TensorPtr forward(ad::Tape &tape, const SensorGrid &frame, double t_norm, const NodeSet &nodes) const;

    /// Inference helpers returning meters. predict() yields a cage field in
    /// the cage's canonical frame; predict_points() is for the direct variant.
    CageDisplacementField predict(const SensorFrame &frame, double t_norm, const NodeSet &nodes) const;
    CageDisplacementField predict(const SensorFrame &frame, double t_norm, const CageGrid &cage) const;
    Points predict_points(const SensorFrame &frame, double t_norm, const NodeSet &nodes) const;

    std::mt19937_64 &rng() { return rng_; }
    const std::mt19937_64 &rng() const { return rng_; }

private:
    ad::TensorPtr add_param(const std::string &name, ad::Shape shape, double fan_in, double fan_out);
    ad::TensorPtr encode(ad::Tape &tape, const SensorGrid &frame, double t_norm) const;
    void check_frame(const SensorGrid &frame) const;

    ModelConfig cfg_;
    std::vector<std::pair<std::string, ad::TensorPtr>> params_;
    mutable std::mt19937_64 rng_;
};

/// (1/n) sum |pred - gt|^2 + lambda (1/n) sum |pred - prev|^2; the second
/// term is skipped without a previous field.
double deformer_loss(const CageDisplacementField &pred, const CageDisplacementField &gt,
                     const CageDisplacementField *prev, double lambda);

struct TrainConfig {
    int epochs = 100;
    double lr0 = 1e-3;
    double lr_min_ratio = 0.01;
    double lambda_smooth = 0.1;
    double noise_std = 0.02;
    int early_stop_patience = 10;
    int window = 4;                  // consecutive frames per step
    std::size_t max_windows = 0;     // per epoch; 0 means all
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Cosine decay from lr0 at epoch 0 to lr_min_ratio * lr0 at the last epoch.
double cosine_lr(const TrainConfig &cfg, int epoch);

/// One training sequence: normalized frames with per-frame targets in
/// meters on a fixed node set.
struct TrainingSequence {
    std::vector<SensorGrid> frames;
    std::vector<double> t_norm;
    std::vector<Points> targets;
    const NodeSet *nodes = nullptr;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    bool early_stopped = false;
};

/// Adam + cosine schedule over windows of consecutive frames. The best
/// validation parameters are restored at the end. Deterministic given the
/// config seed.
TrainResult train(DeformerModel &model, std::span<const TrainingSequence> data, const TrainConfig &cfg);

void write_history_csv(const TrainResult &r, const std::filesystem::path &path);

/// s_t = beta s_{t-1} + (1 - beta) raw_t, seeded by the first raw field.
struct EmaState {
    double beta = 0.7;
    std::optional<CageDisplacementField> smoothed;

    explicit EmaState(double b = 0.7);
    const CageDisplacementField &update(const CageDisplacementField &raw);
    void reset() { smoothed.reset(); }
};

CageDisplacementField infer_smoothed(const DeformerModel &model, const SensorFrame &frame, double t_norm,
                                     const NodeSet &nodes, EmaState &ema);

void save_checkpoint(const DeformerModel &model, const std::filesystem::path &path);
DeformerModel load_checkpoint(const std::filesystem::path &path);
/// Loads and checks that the model was built for `node_count` cage nodes.
DeformerModel load_checkpoint(const std::filesystem::path &path, std::size_t node_count);

} // namespace cagesplat
