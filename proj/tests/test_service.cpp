// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/error.hpp"
#include "cagesplat/pipeline.hpp"
#include "cagesplat/service.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <boost/asio.hpp>

#include <chrono>
#include <thread>

using namespace cagesplat;
using nlohmann::json;
namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

PipelineConfig small_config() {
    PipelineConfig c = load_config(std::filesystem::path(CAGESPLAT_SOURCE_DIR) / "configs" / "toy.ini");
    c.render.width = 48;
    c.render.height = 32;
    return c;
}

/// Engine over a 600-Gaussian cylinder. A randomized output head makes the
/// field respond to frames; otherwise the model predicts the rest pose.
std::unique_ptr<LiveEngine> make_engine(bool random_head, double ema_beta = 0.7) {
    PipelineConfig c = small_config();
    c.infer.ema_beta = ema_beta;
    GaussianScene rest = deployment_scene(c, 600);
    const CageGrid cage = build_cage_for(rest, c.cage.dims);
    DeformerModel m(c.model_config(cage.node_count()));
    if (random_head) {
        std::mt19937_64 rng(77);
        std::uniform_real_distribution<float> u(-0.5f, 0.5f);
        for (const char *name : {"head.w2", "head.b2"})
            for (auto &v : m.parameter(name)->values) v = u(rng);
    }
    return std::make_unique<LiveEngine>(std::move(m), std::move(rest), c);
}

json grid_message(double value, int rows = 10, int cols = 10) {
    json grid = json::array();
    for (int r = 0; r < rows; ++r) grid.push_back(std::vector<double>(static_cast<std::size_t>(cols), value));
    return {{"type", "sensor_frame"}, {"grid", grid}, {"t", 0.5}};
}

const json *find_type(const std::vector<json> &msgs, const std::string &type) {
    for (const auto &m : msgs)
        if (m.value("type", "") == type) return &m;
    return nullptr;
}

std::vector<Vec3d> offsets_of(const json &cage_state) {
    std::vector<Vec3d> out;
    for (const auto &o : cage_state.at("offsets")) out.emplace_back(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
    return out;
}

json read_message(tcp::socket &s) {
    std::uint8_t len[4];
    asio::read(s, asio::buffer(len, 4));
    const std::uint32_t n = len[0] | (len[1] << 8) | (len[2] << 16) | (static_cast<std::uint32_t>(len[3]) << 24);
    std::string body(n, '\0');
    asio::read(s, asio::buffer(body.data(), n));
    return json::parse(body);
}

void send_message(tcp::socket &s, const json &msg) { asio::write(s, asio::buffer(frame_message(msg))); }

/// Reads until a message of `type` arrives.
json await(tcp::socket &s, const std::string &type) {
    for (int i = 0; i < 50; ++i) {
        json m = read_message(s);
        if (m.value("type", "") == type) return m;
    }
    throw std::runtime_error("no " + type + " message");
}

} // namespace

TEST(Wire, FramingIsLengthPrefixedJson) {
    const json msg = {{"type", "hello"}, {"x", 1}};
    const std::string f = frame_message(msg);
    const std::string body = msg.dump();
    ASSERT_EQ(f.size(), body.size() + 4);
    EXPECT_EQ(static_cast<unsigned char>(f[0]), body.size() & 0xff);
    EXPECT_EQ(f[1], 0);
    EXPECT_EQ(f.substr(4), body);
}

TEST(Wire, Base64RoundTrip) {
    std::mt19937_64 rng(5);
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 100u, 1001u}) {
        std::vector<std::uint8_t> bytes(n);
        for (auto &b : bytes) b = static_cast<std::uint8_t>(rng());
        const std::string text = base64_encode(bytes);
        EXPECT_EQ(text.size(), 4 * ((n + 2) / 3)) << n;
        EXPECT_EQ(base64_decode(text), bytes) << n;
    }
    EXPECT_EQ(base64_encode({'M', 'a'}), "TWE=");
    EXPECT_THROW(base64_decode("@@@"), InvalidArgument);
}

TEST(LiveEngine, HelloDescribesScene) {
    auto e = make_engine(false);
    const json h = e->hello();
    EXPECT_EQ(h["type"], "hello");
    EXPECT_EQ(h["scene"]["gaussians"], 600);
    EXPECT_EQ(h["scene"]["cage_nodes"], 75);
    EXPECT_EQ(h["sensor"]["rows"], 10);
    EXPECT_EQ(h["sensor"]["cols"], 10);
    EXPECT_DOUBLE_EQ(h["ema_beta"].get<double>(), 0.7);
}

TEST(LiveEngine, MalformedInputGetsErrorAndSessionSurvives) {
    auto e = make_engine(false);
    auto r = e->handle_text("{not json");
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["type"], "error");
    r = e->handle({{"type", "teleport"}});
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["type"], "error");
    EXPECT_EQ(r[0]["in_reply_to"], "teleport");
    r = e->handle(grid_message(0.0, 9, 10));
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["type"], "error");
    json bad = grid_message(0.0);
    bad["grid"][2][3] = "x";
    EXPECT_EQ(e->handle(bad).at(0)["type"], "error");
    EXPECT_EQ(e->handle({{"type", "set_camera"}, {"distance", -1.0}}).at(0)["type"], "error");
    EXPECT_TRUE(e->handle(grid_message(0.0)).empty());
    EXPECT_NE(find_type(e->step(), "frame"), nullptr);
}

TEST(LiveEngine, SetEmaEchoesAndRejectsOutOfRange) {
    auto e = make_engine(false);
    auto r = e->handle({{"type", "set_ema"}, {"beta", 0.3}});
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["type"], "set_ema");
    EXPECT_DOUBLE_EQ(r[0]["beta"].get<double>(), 0.3);
    EXPECT_DOUBLE_EQ(e->ema_beta(), 0.3);
    for (double b : {1.0, -0.1}) {
        r = e->handle({{"type", "set_ema"}, {"beta", b}});
        EXPECT_EQ(r.at(0)["type"], "error") << b;
    }
    EXPECT_DOUBLE_EQ(e->ema_beta(), 0.3);
}

TEST(LiveEngine, SetCameraEchoesAndMovesView) {
    auto e = make_engine(false);
    const Vec3d before = e->camera().position;
    const auto r = e->handle({{"type", "set_camera"}, {"azimuth", 1.0}, {"width", 40}, {"height", 30}});
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["type"], "set_camera");
    EXPECT_TRUE(e->pending());
    EXPECT_GT((e->camera().position - before).norm(), 1e-3);
    const auto out = e->step();
    const json *frame = find_type(out, "frame");
    ASSERT_NE(frame, nullptr);
    EXPECT_EQ((*frame)["width"], 40);
    EXPECT_EQ((*frame)["height"], 30);
}

TEST(LiveEngine, ZeroFrameRendersRest) {
    auto e = make_engine(false);
    e->handle(grid_message(0.0));
    const auto out = e->step();
    const json *state = find_type(out, "cage_state");
    const json *frame = find_type(out, "frame");
    ASSERT_NE(state, nullptr);
    ASSERT_NE(frame, nullptr);
    EXPECT_EQ((*state)["max_offset_m"].get<double>(), 0.0);
    const auto png = base64_decode((*frame)["png"].get<std::string>());
    const OrbitState o = e->orbit();
    EXPECT_EQ(png, encode_png(render_frame(e->rest(), e->camera()), o.exposure));
    for (const char *k : {"forward_ms", "propagate_ms", "render_ms", "encode_ms", "fragments", "dropped"})
        EXPECT_TRUE((*frame)["timing"].contains(k)) << k;
}

TEST(LiveEngine, EmaImpulseDecaysGeometrically) {
    const double beta = 0.5;
    auto e = make_engine(true, 0.9);
    e->handle({{"type", "set_ema"}, {"beta", beta}});
    auto state_after = [&](double v) {
        e->handle(grid_message(v));
        return offsets_of(*find_type(e->step(), "cage_state"));
    };
    const auto base = state_after(0.0);  // seeds the average with the zero-frame field
    const auto first = state_after(0.03);
    double initial = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) initial = std::max(initial, (first[i] - base[i]).norm());
    ASSERT_GT(initial, 1e-5);
    for (int k = 1; k <= 5; ++k) {
        const auto s = state_after(0.0);
        for (std::size_t i = 0; i < base.size(); ++i) {
            const Vec3d expect = std::pow(beta, k) * (first[i] - base[i]);
            EXPECT_LT((s[i] - base[i] - expect).norm(), 1e-9 + 1e-6 * initial) << k << " " << i;
        }
    }
}

TEST(LiveEngine, LatestFrameWins) {
    auto e = make_engine(true);
    for (double v : {0.01, 0.02, 0.0}) EXPECT_TRUE(e->handle(grid_message(v)).empty());
    EXPECT_EQ(e->dropped_frames(), 2u);
    const auto out = e->step();
    ASSERT_NE(find_type(out, "frame"), nullptr);
    EXPECT_EQ((*find_type(out, "frame"))["timing"]["dropped"], 2);

    // Only the zero frame was applied, so the field equals a fresh zero-frame field.
    auto fresh = make_engine(true);
    fresh->handle(grid_message(0.0));
    EXPECT_EQ(offsets_of(*find_type(out, "cage_state")), offsets_of(*find_type(fresh->step(), "cage_state")));
    EXPECT_FALSE(e->pending());
}

TEST(Service, HelloBusyAndFrames) {
    auto e = make_engine(false);
    Service svc(*e, "127.0.0.1", 0);
    std::thread runner([&] { svc.run(); });
    asio::io_context io;
    tcp::socket a(io);
    a.connect({asio::ip::make_address("127.0.0.1"), svc.port()});
    EXPECT_EQ(read_message(a)["type"], "hello");

    tcp::socket b(io);
    b.connect({asio::ip::make_address("127.0.0.1"), svc.port()});
    EXPECT_EQ(read_message(b)["type"], "busy");

    send_message(a, {{"type", "set_ema"}, {"beta", 0.2}});
    EXPECT_DOUBLE_EQ(await(a, "set_ema")["beta"].get<double>(), 0.2);
    send_message(a, grid_message(0.0));
    EXPECT_EQ(await(a, "cage_state")["max_offset_m"].get<double>(), 0.0);
    const json frame = await(a, "frame");
    EXPECT_FALSE(base64_decode(frame["png"].get<std::string>()).empty());

    // Malformed JSON is answered and the session stays open.
    const std::string junk = "{oops";
    const std::uint32_t n = static_cast<std::uint32_t>(junk.size());
    const char len[4] = {static_cast<char>(n), 0, 0, 0};
    asio::write(a, asio::buffer(std::string(len, 4) + junk));
    EXPECT_EQ(await(a, "error")["type"], "error");
    send_message(a, {{"type", "hello"}});
    EXPECT_EQ(await(a, "hello")["type"], "hello");

    svc.stop();
    runner.join();
}

TEST(Service, PortInUseIsIoError) {
    auto e = make_engine(false);
    Service first(*e, "127.0.0.1", 0);
    EXPECT_THROW(Service(*e, "127.0.0.1", first.port()), IoError);
}

TEST(Service, NewSessionAfterDisconnect) {
    auto e = make_engine(false);
    Service svc(*e, "127.0.0.1", 0);
    std::thread runner([&] { svc.run(); });
    asio::io_context io;
    {
        tcp::socket a(io);
        a.connect({asio::ip::make_address("127.0.0.1"), svc.port()});
        EXPECT_EQ(read_message(a)["type"], "hello");
    }
    json reply;
    for (int attempt = 0; attempt < 50; ++attempt) {
        tcp::socket b(io);
        b.connect({asio::ip::make_address("127.0.0.1"), svc.port()});
        reply = read_message(b);
        if (reply["type"] == "hello") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    EXPECT_EQ(reply["type"], "hello");
    svc.stop();
    runner.join();
}
