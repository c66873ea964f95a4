// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/service.hpp"

#include "cagesplat/error.hpp"
#include "cagesplat/pipeline.hpp"

#include <boost/asio.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <deque>

namespace cagesplat {

namespace asio = boost::asio;
using asio::ip::tcp;
using nlohmann::json;

namespace {

json error_reply(const std::string &message, const std::string &in_reply_to = {}) {
    json e = {{"type", "error"}, {"message", message}};
    if (!in_reply_to.empty()) e["in_reply_to"] = in_reply_to;
    return e;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

json vec_json(const Vec3d &v) { return json::array({v.x(), v.y(), v.z()}); }

double number_field(const json &msg, const char *key, double fallback) {
    if (!msg.contains(key)) return fallback;
    const auto &v = msg.at(key);
    if (!v.is_number()) throw InvalidArgument(std::string("field '") + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw InvalidArgument(std::string("field '") + key + "' must be finite");
    return d;
}

} // namespace

std::string frame_message(const json &msg) {
    const std::string body = msg.dump();
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out(4, '\0');
    for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((n >> (8 * i)) & 0xffu);
    return out + body;
}

std::string base64_encode(const std::vector<std::uint8_t> &bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string &text) {
    if (text.size() % 4 != 0) throw InvalidArgument("base64 length must be a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char *>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw InvalidArgument("invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

// -- LiveEngine ---------------------------------------------------------------

LiveEngine::LiveEngine(DeformerModel model, GaussianScene rest, const PipelineConfig &cfg)
    : model_(std::move(model)), rest_(std::move(rest)), rest_centers_(rest_.centers()),
      tile_px_(cfg.render.tile_px),
      chain_(cfg.sensor_model().calibration, cfg.sensor.cutoff_hz, cfg.sensor.sample_hz, cfg.sensor.median),
      ema_(cfg.infer.ema_beta), displacement_(rest_.size(), Vec3d::Zero()) {
    const ModelConfig &mc = model_.config();
    direct_ = mc.architecture == Architecture::direct;
    if (direct_) {
        nodes_ = point_nodes(rest_centers_, mc.coord_scale);
    } else {
        cage_ = build_cage_for(rest_, cfg.cage.dims);
        if (cage_.node_count() != mc.node_count)
            throw ShapeError("checkpoint was built for " + std::to_string(mc.node_count) + " cage nodes, the live cage has " +
                             std::to_string(cage_.node_count()));
        weights_ = bind_weights(cage_, rest_, cfg.cage.k, cfg.cage.epsilon);
        nodes_ = cage_nodes(cage_, mc.coord_scale);
    }
    orbit_.azimuth = cfg.render.azimuth_deg * std::numbers::pi / 180.0;
    orbit_.elevation = cfg.render.elevation_deg * std::numbers::pi / 180.0;
    orbit_.distance = cfg.render.distance;
    orbit_.fov_y = cfg.render.fov_deg * std::numbers::pi / 180.0;
    orbit_.exposure = cfg.render.exposure;
    orbit_.width = cfg.render.width;
    orbit_.height = cfg.render.height;
    // Live time wraps over one training ramp.
    const int frames = cfg.gen.n_keyposes + (cfg.gen.n_keyposes - 1) * cfg.gen.n_interp;
    cycle_s_ = std::max(1, frames - 1) / cfg.sensor.sample_hz;
}

json LiveEngine::hello() const {
    std::lock_guard lock(mu_);
    return {{"type", "hello"},
            {"version", 1},
            {"scene",
             {{"gaussians", rest_.size()},
              {"cage_nodes", direct_ ? 0 : cage_.node_count()},
              {"architecture", to_string(model_.config().architecture)},
              {"bounds_min", vec_json(rest_.bounds.min)},
              {"bounds_max", vec_json(rest_.bounds.max)}}},
            {"sensor", {{"rows", model_.config().grid_rows}, {"cols", model_.config().grid_cols}}},
            {"camera",
             {{"azimuth", orbit_.azimuth},
              {"elevation", orbit_.elevation},
              {"distance", orbit_.distance},
              {"fov_y", orbit_.fov_y},
              {"exposure", orbit_.exposure},
              {"width", orbit_.width},
              {"height", orbit_.height}}},
            {"ema_beta", ema_.beta}};
}

std::vector<json> LiveEngine::handle_text(const std::string &text) {
    json msg;
    try {
        msg = json::parse(text);
    } catch (const json::parse_error &e) {
        return {error_reply(std::string("malformed JSON: ") + e.what())};
    }
    return handle(msg);
}

std::vector<json> LiveEngine::handle(const json &msg) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
        return {error_reply("message must be an object with a string 'type'")};
    const std::string type = msg["type"].get<std::string>();
    try {
        if (type == "sensor_frame") {
            json r = handle_sensor_frame(msg);
            return r.is_null() ? std::vector<json>{} : std::vector<json>{r};
        }
        if (type == "set_camera") return {handle_set_camera(msg)};
        if (type == "set_ema") return {handle_set_ema(msg)};
        if (type == "hello") return {hello()};
    } catch (const Error &e) {
        return {error_reply(e.what(), type)};
    } catch (const json::exception &e) {
        return {error_reply(e.what(), type)};
    }
    return {error_reply("unknown message type '" + type + "'", type)};
}

json LiveEngine::handle_sensor_frame(const json &msg) {
    if (!msg.contains("grid") || !msg["grid"].is_array()) throw InvalidArgument("sensor_frame needs a 'grid' array of rows");
    const auto &rows = msg["grid"];
    const int want_r = model_.config().grid_rows, want_c = model_.config().grid_cols;
    if (static_cast<int>(rows.size()) != want_r) throw ShapeError("grid must have " + std::to_string(want_r) + " rows");
    SensorFrame f;
    f.grid.resize(want_r, want_c);
    for (int r = 0; r < want_r; ++r) {
        const auto &row = rows[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<int>(row.size()) != want_c)
            throw ShapeError("grid row " + std::to_string(r) + " must have " + std::to_string(want_c) + " values");
        for (int c = 0; c < want_c; ++c) {
            const auto &v = row[static_cast<std::size_t>(c)];
            if (!v.is_number() || !std::isfinite(v.get<double>()))
                throw InvalidArgument("grid values must be finite numbers");
            f.grid(r, c) = v.get<double>();
        }
    }
    Queued q;
    q.normalized = msg.value("normalized", true);
    if (msg.contains("t")) q.t_norm = std::clamp(number_field(msg, "t", 0.0), 0.0, 1.0);

    std::lock_guard lock(mu_);
    f.timestamp = number_field(msg, "timestamp", static_cast<double>(seq_) / 250.0);
    q.frame = std::move(f);
    if (queued_) ++dropped_;
    queued_ = std::move(q);
    return nullptr;
}

json LiveEngine::handle_set_camera(const json &msg) {
    std::lock_guard lock(mu_);
    OrbitState o = orbit_;
    o.azimuth = number_field(msg, "azimuth", o.azimuth);
    o.elevation = number_field(msg, "elevation", o.elevation);
    o.distance = number_field(msg, "distance", o.distance);
    o.fov_y = number_field(msg, "fov_y", o.fov_y);
    o.exposure = number_field(msg, "exposure", o.exposure);
    o.width = static_cast<int>(number_field(msg, "width", o.width));
    o.height = static_cast<int>(number_field(msg, "height", o.height));
    if (!(o.distance > 0.0)) throw InvalidArgument("distance must be positive");
    if (!(o.fov_y > 0.0 && o.fov_y < std::numbers::pi)) throw InvalidArgument("fov_y must lie in (0, pi)");
    if (!(o.exposure > 0.0)) throw InvalidArgument("exposure must be positive");
    if (o.width < 1 || o.height < 1 || o.width > 4096 || o.height > 4096)
        throw InvalidArgument("resolution must lie in [1, 4096]");
    if (std::abs(o.elevation) >= 0.5 * std::numbers::pi) throw InvalidArgument("elevation must lie in (-pi/2, pi/2)");
    orbit_ = o;
    camera_dirty_ = true;
    return {{"type", "set_camera"},
            {"azimuth", o.azimuth},
            {"elevation", o.elevation},
            {"distance", o.distance},
            {"fov_y", o.fov_y},
            {"exposure", o.exposure},
            {"width", o.width},
            {"height", o.height}};
}

json LiveEngine::handle_set_ema(const json &msg) {
    if (!msg.contains("beta")) throw InvalidArgument("set_ema needs 'beta'");
    const double beta = number_field(msg, "beta", 0.0);
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("beta must lie in [0, 1)");
    std::lock_guard lock(mu_);
    ema_.beta = beta;
    return {{"type", "set_ema"}, {"beta", beta}};
}

bool LiveEngine::pending() const {
    std::lock_guard lock(mu_);
    return queued_.has_value() || camera_dirty_;
}

std::vector<json> LiveEngine::step() {
    std::vector<json> out;
    GaussianScene scene;
    Camera cam;
    double exposure = 1.0;
    json timing = json::object();
    std::uint64_t seq = 0;
    {
        std::lock_guard lock(mu_);
        if (queued_) {
            Queued q = std::move(*queued_);
            queued_.reset();
            auto t = std::chrono::steady_clock::now();
            const SensorFrame filtered = q.normalized ? median3x3(q.frame) : chain_.process(q.frame);
            if (first_timestamp_ < 0.0) first_timestamp_ = q.frame.timestamp;
            const double t_norm =
                q.t_norm ? *q.t_norm : std::fmod(std::max(0.0, q.frame.timestamp - first_timestamp_), cycle_s_) / cycle_s_;
            CageDisplacementField raw;
            if (direct_)
                raw.offsets = model_.predict_points(filtered, t_norm, nodes_);
            else
                raw = model_.predict(filtered, t_norm, nodes_);
            raw.timestamp = q.frame.timestamp;
            const CageDisplacementField &field = ema_.update(raw);
            timing["forward_ms"] = ms_since(t);

            t = std::chrono::steady_clock::now();
            displacement_ = direct_ ? field.offsets : gaussian_displacements(weights_, field);
            last_field_ = field;
            timing["propagate_ms"] = ms_since(t);

            json offsets = json::array();
            double max_norm = 0.0;
            for (const auto &o : field.offsets) max_norm = std::max(max_norm, o.norm());
            if (!direct_)
                for (const auto &o : field.offsets) offsets.push_back(vec_json(o));
            out.push_back({{"type", "cage_state"},
                           {"seq", seq_},
                           {"timestamp", field.timestamp},
                           {"t_norm", t_norm},
                           {"ema_beta", ema_.beta},
                           {"max_offset_m", max_norm},
                           {"offsets", std::move(offsets)}});
        }
        camera_dirty_ = false;
        scene = rest_;
        Points centers(rest_centers_.size());
        for (std::size_t i = 0; i < centers.size(); ++i) centers[i] = rest_centers_[i] + displacement_[i];
        scene.set_centers(centers);
        scene.frame_id = seq_;
        cam = camera_locked();
        exposure = orbit_.exposure;
        timing["dropped"] = dropped_;
        seq = seq_++;
    }

    RenderStats stats;
    auto t = std::chrono::steady_clock::now();
    const RenderedImage img = render_frame(scene, cam, tile_px_, &stats);
    timing["render_ms"] = ms_since(t);
    t = std::chrono::steady_clock::now();
    const std::string png = base64_encode(encode_png(img, exposure));
    timing["encode_ms"] = ms_since(t);
    timing["project_ms"] = stats.project_ms;
    timing["composite_ms"] = stats.composite_ms;
    timing["fragments"] = stats.fragments;
    out.push_back({{"type", "frame"},
                   {"seq", seq},
                   {"width", img.width},
                   {"height", img.height},
                   {"png", png},
                   {"timing", timing}});
    return out;
}

double LiveEngine::ema_beta() const {
    std::lock_guard lock(mu_);
    return ema_.beta;
}

OrbitState LiveEngine::orbit() const {
    std::lock_guard lock(mu_);
    return orbit_;
}

GaussianScene LiveEngine::current_scene() const {
    std::lock_guard lock(mu_);
    GaussianScene s = rest_;
    Points c(rest_centers_.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = rest_centers_[i] + displacement_[i];
    s.set_centers(c);
    return s;
}

Camera LiveEngine::camera() const {
    std::lock_guard lock(mu_);
    return camera_locked();
}

Camera LiveEngine::camera_locked() const {
    return orbit_camera(rest_.bounds.center(), orbit_.distance, orbit_.azimuth, orbit_.elevation, orbit_.fov_y,
                        orbit_.width, orbit_.height);
}

std::size_t LiveEngine::dropped_frames() const {
    std::lock_guard lock(mu_);
    return dropped_;
}

std::unique_ptr<LiveEngine> make_live_engine(const PipelineConfig &cfg) {
    const Workspace ws{cfg.paths.work};
    if (!std::filesystem::exists(ws.checkpoint()))
        throw IoError("missing checkpoint " + ws.checkpoint().string() + " (run train)");
    const std::size_t n = cfg.serve.preset == "high" ? cfg.render.high_gaussians : cfg.render.coarse_gaussians;
    return std::make_unique<LiveEngine>(load_checkpoint(ws.checkpoint()), deployment_scene(cfg, n), cfg);
}

// -- Service ------------------------------------------------------------------

struct Service::Impl {
    LiveEngine &engine;
    asio::io_context io;
    tcp::acceptor acceptor;
    std::optional<asio::signal_set> signals;

    std::mutex session_mu;
    std::shared_ptr<tcp::socket> session_socket;
    std::thread session_thread;
    std::atomic<bool> session_active{false};
    std::atomic<bool> stopping{false};

    Impl(LiveEngine &e, const std::string &host, unsigned short port) : engine(e), acceptor(io) {
        boost::system::error_code ec;
        const tcp::endpoint ep(asio::ip::make_address(host, ec), port);
        if (ec) throw InvalidArgument("invalid host address '" + host + "'");
        acceptor.open(ep.protocol());
        acceptor.set_option(tcp::acceptor::reuse_address(true));
        acceptor.bind(ep, ec);
        if (ec) throw IoError("cannot bind " + host + ":" + std::to_string(port) + ": " + ec.message());
        acceptor.listen();
    }

    void accept_next() {
        acceptor.async_accept([this](boost::system::error_code ec, tcp::socket sock) {
            if (ec || stopping) return;
            auto s = std::make_shared<tcp::socket>(std::move(sock));
            if (session_active) {
                boost::system::error_code ignore;
                const std::string busy =
                    frame_message({{"type", "busy"}, {"message", "another session is active"}});
                asio::write(*s, asio::buffer(busy), ignore);
                s->shutdown(tcp::socket::shutdown_both, ignore);
                s->close(ignore);
            } else {
                start_session(s);
            }
            accept_next();
        });
    }

    void start_session(std::shared_ptr<tcp::socket> s) {
        std::lock_guard lock(session_mu);
        if (session_thread.joinable()) session_thread.join();
        session_active = true;
        session_socket = s;
        session_thread = std::thread([this, s] {
            run_session(*s);
            boost::system::error_code ignore;
            s->close(ignore);
            session_active = false;
        });
    }

    void run_session(tcp::socket &sock) {
        std::mutex write_mu;
        std::mutex wake_mu;
        std::condition_variable wake;
        bool closing = false;

        auto send = [&](const json &msg) {
            const std::string bytes = frame_message(msg);
            std::lock_guard lock(write_mu);
            boost::system::error_code ec;
            asio::write(sock, asio::buffer(bytes), ec);
            return !ec;
        };

        send(engine.hello());

        // Render loop: applies the newest frame at its own cadence.
        std::thread render([&] {
            for (;;) {
                {
                    std::unique_lock lock(wake_mu);
                    wake.wait(lock, [&] { return closing || engine.pending(); });
                    if (closing) return;
                }
                for (const auto &m : engine.step())
                    if (!send(m)) return;
            }
        });

        for (;;) {
            unsigned char header[4];
            boost::system::error_code ec;
            asio::read(sock, asio::buffer(header), ec);
            if (ec) break;
            const std::uint32_t n = header[0] | (header[1] << 8) | (header[2] << 16) |
                                    (static_cast<std::uint32_t>(header[3]) << 24);
            if (n > kMaxMessageBytes) {
                send(error_reply("message of " + std::to_string(n) + " bytes exceeds the limit"));
                break;
            }
            std::string body(n, '\0');
            asio::read(sock, asio::buffer(body), ec);
            if (ec) break;
            for (const auto &reply : engine.handle_text(body)) send(reply);
            std::lock_guard lock(wake_mu);
            wake.notify_one();
        }
        {
            std::lock_guard lock(wake_mu);
            closing = true;
        }
        wake.notify_one();
        render.join();
    }
};

Service::Service(LiveEngine &engine, const std::string &host, unsigned short port)
    : impl_(std::make_unique<Impl>(engine, host, port)) {}

Service::~Service() {
    stop();
}

unsigned short Service::port() const { return impl_->acceptor.local_endpoint().port(); }

void Service::run(bool handle_signals) {
    if (handle_signals) {
        impl_->signals.emplace(impl_->io, SIGINT, SIGTERM);
        impl_->signals->async_wait([this](const boost::system::error_code &, int) { stop(); });
    }
    impl_->accept_next();
    impl_->io.run();
}

void Service::stop() {
    if (impl_->stopping.exchange(true)) return;
    asio::post(impl_->io, [this] {
        boost::system::error_code ignore;
        impl_->acceptor.close(ignore);
        if (impl_->signals) impl_->signals->cancel(ignore);
    });
    std::lock_guard lock(impl_->session_mu);
    if (impl_->session_socket) {
        boost::system::error_code ignore;
        impl_->session_socket->shutdown(tcp::socket::shutdown_both, ignore);
    }
    if (impl_->session_thread.joinable()) impl_->session_thread.join();
}

void cmd_serve(const PipelineConfig &cfg, const std::function<void(const std::string &)> &log) {
    validate(cfg);
    auto engine = make_live_engine(cfg);
    Service service(*engine, cfg.serve.host, static_cast<unsigned short>(cfg.serve.port));
    if (log)
        log("serving " + std::to_string(engine->rest().size()) + " Gaussians on " + cfg.serve.host + ":" +
            std::to_string(service.port()));
    service.run(true);
}

} // namespace cagesplat
