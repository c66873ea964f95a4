// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cagesplat/cage.hpp"
#include "cagesplat/config.hpp"
#include "cagesplat/deformer.hpp"
#include "cagesplat/render.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace cagesplat {

/// Wire framing: u32 little-endian byte count, then that many bytes of
/// UTF-8 JSON.
std::string frame_message(const nlohmann::json &msg);
/// Largest accepted message body.
constexpr std::uint32_t kMaxMessageBytes = 16u << 20;

std::string base64_encode(const std::vector<std::uint8_t> &bytes);
std::vector<std::uint8_t> base64_decode(const std::string &text);

/// Orbit camera state steered by set_camera.
struct OrbitState {
    double azimuth = 0.6;    // rad
    double elevation = 0.7;  // rad
    double distance = 0.25;  // m
    double fov_y = 0.8;      // rad
    double exposure = 1.0;
    int width = 640;
    int height = 400;
};

/// Everything a live session acts on, without any networking: the trained
/// model, the deployment scene and its binding, EMA state and the camera.
/// Thread-safe.
class LiveEngine {
public:
    LiveEngine(DeformerModel model, GaussianScene rest, const PipelineConfig &cfg);

    nlohmann::json hello() const;

    /// Handles one inbound message. Control messages are answered
    /// immediately; a sensor_frame is queued (latest wins) and answered by
    /// the next step(). Malformed input yields an error reply.
    std::vector<nlohmann::json> handle(const nlohmann::json &msg);
    std::vector<nlohmann::json> handle_text(const std::string &text);

    /// True when a queued frame or camera change awaits step().
    bool pending() const;
    /// Applies the latest queued frame (if any) and renders. Returns the
    /// cage_state (only when a frame was applied) and frame messages.
    std::vector<nlohmann::json> step();

    double ema_beta() const;
    OrbitState orbit() const;
    const GaussianScene &rest() const { return rest_; }
    /// Current deformed scene (rest until a frame arrives).
    GaussianScene current_scene() const;
    Camera camera() const;
    std::size_t dropped_frames() const;

private:
    nlohmann::json handle_sensor_frame(const nlohmann::json &msg);
    nlohmann::json handle_set_camera(const nlohmann::json &msg);
    nlohmann::json handle_set_ema(const nlohmann::json &msg);
    Camera camera_locked() const;

    mutable std::mutex mu_;
    DeformerModel model_;
    GaussianScene rest_;
    Points rest_centers_;
    CageGrid cage_;
    BindingWeights weights_;
    NodeSet nodes_;
    bool direct_ = false;
    int tile_px_ = 16;
    AcquisitionChain chain_;
    EmaState ema_;
    OrbitState orbit_;
    Points displacement_;
    std::optional<CageDisplacementField> last_field_;

    struct Queued {
        SensorFrame frame;
        bool normalized = true;
        std::optional<double> t_norm;
    };
    std::optional<Queued> queued_;
    bool camera_dirty_ = true;
    std::size_t dropped_ = 0;
    std::uint64_t seq_ = 0;
    double first_timestamp_ = -1.0;
    double cycle_s_ = 1.0;
};

/// Builds the engine for cmd_serve from the checkpoint and the deployment
/// geometry at the configured preset.
std::unique_ptr<LiveEngine> make_live_engine(const PipelineConfig &cfg);

/// TCP front end for a LiveEngine. One session at a time; further
/// connections get a busy message and are closed. One receiver thread and
/// one render loop per session.
class Service {
public:
    /// Binds immediately; throws IoError when the address is in use. Port 0
    /// picks a free port.
    Service(LiveEngine &engine, const std::string &host, unsigned short port);
    ~Service();
    Service(const Service &) = delete;
    Service &operator=(const Service &) = delete;

    unsigned short port() const;
    /// Accepts sessions until stop(). With handle_signals, SIGINT and
    /// SIGTERM also stop it.
    void run(bool handle_signals = false);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Runs the service for a config until interrupted.
void cmd_serve(const PipelineConfig &cfg, const std::function<void(const std::string &)> &log = {});

} // namespace cagesplat
