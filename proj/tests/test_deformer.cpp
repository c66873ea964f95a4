// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/deformer.hpp"
#include "cagesplat/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

using namespace cagesplat;
using cagesplat::testing::TempDir;

namespace {

ModelConfig tiny_config(std::size_t nodes, Architecture arch = Architecture::cage_gat, std::uint64_t seed = 11) {
    ModelConfig c;
    c.architecture = arch;
    c.grid_rows = 5;
    c.grid_cols = 5;
    c.conv1_channels = 4;
    c.conv2_channels = 4;
    c.feature_dim = 8;
    c.time_bands = 2;
    c.heads = 2;
    c.hidden = 6;
    c.coord_scale = 0.05;
    c.node_count = arch == Architecture::cage_gat ? nodes : 0;
    c.seed = seed;
    return c;
}

CageGrid small_cage() { return build_cage(Aabb{Vec3d(-0.02, -0.02, -0.002), Vec3d(0.02, 0.02, 0.002)}, {2, 2, 2}); }

/// Fills the output head so a fresh model has a nonzero field.
void randomize_head(DeformerModel &m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-0.5f, 0.5f);
    for (const char *name : {"head.w2", "head.b2"})
        for (auto &v : m.parameter(name)->values) v = u(rng);
}

SensorGrid random_grid(std::mt19937_64 &rng, int rows = 5, int cols = 5) {
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    SensorGrid g(rows, cols);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
    return g;
}

SensorFrame frame_of(const SensorGrid &g, double t = 0.0) {
    SensorFrame f;
    f.grid = g;
    f.timestamp = t;
    return f;
}

/// Amplitude-scaled copies of one pattern; targets move linearly with it.
TrainingSequence toy_sequence(const NodeSet &nodes, int frames, std::mt19937_64 &rng) {
    TrainingSequence s;
    s.nodes = &nodes;
    const SensorGrid pattern = random_grid(rng);
    for (int f = 0; f < frames; ++f) {
        const double a = static_cast<double>(f) / (frames - 1);
        s.frames.push_back(pattern * a);
        s.t_norm.push_back(a);
        Points p(nodes.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = Vec3d(0.0, 0.0, 0.004 * a * (i % 2 ? 1.0 : -1.0));
        s.targets.push_back(p);
    }
    return s;
}

double max_abs(const Points &p) {
    double m = 0.0;
    for (const auto &v : p) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
}

} // namespace

TEST(TimeEmbedding, ValuesAtKnownPoints) {
    const auto e0 = time_embedding(0.0, 6);
    ASSERT_EQ(e0.size(), 12u);
    for (int b = 0; b < 6; ++b) {
        EXPECT_FLOAT_EQ(e0[2 * b], 0.0f);
        EXPECT_FLOAT_EQ(e0[2 * b + 1], 1.0f);
    }
    const auto e = time_embedding(0.25, 3);
    EXPECT_NEAR(e[0], std::sin(std::numbers::pi * 0.25), 1e-6);
    EXPECT_NEAR(e[1], std::cos(std::numbers::pi * 0.25), 1e-6);
    EXPECT_NEAR(e[2], 1.0, 1e-6);
    EXPECT_NEAR(e[3], 0.0, 1e-6);
    EXPECT_NEAR(e[4], 0.0, 1e-6);
    EXPECT_NEAR(e[5], -1.0, 1e-6);
    EXPECT_EQ(time_embedding(1.7, 2), time_embedding(1.0, 2));
    EXPECT_EQ(time_embedding(-0.3, 2), time_embedding(0.0, 2));
}

TEST(Deformer, FreshModelPredictsRest) {
    const CageGrid cage = small_cage();
    DeformerModel m(tiny_config(cage.node_count()));
    std::mt19937_64 rng(1);
    const auto field = m.predict(frame_of(random_grid(rng)), 0.3, cage);
    ASSERT_EQ(field.size(), cage.node_count());
    EXPECT_EQ(max_abs(field.offsets), 0.0);
}

TEST(Deformer, PermutationEquivariant) {
    const CageGrid cage = small_cage();
    DeformerModel m(tiny_config(cage.node_count()));
    randomize_head(m, 5);
    std::vector<std::uint32_t> perm(cage.node_count());
    std::iota(perm.begin(), perm.end(), 0u);
    std::mt19937_64 rng(2);
    std::shuffle(perm.begin(), perm.end(), rng);

    // Node perm[i] of the original cage becomes node i.
    std::vector<std::uint32_t> inv(perm.size());
    for (std::uint32_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    CageGrid p = cage;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        p.nodes[i] = cage.nodes[perm[i]];
        p.neighbors[i].clear();
        for (auto j : cage.neighbors[perm[i]]) p.neighbors[i].push_back(inv[j]);
        std::sort(p.neighbors[i].begin(), p.neighbors[i].end());
    }

    const auto frame = frame_of(random_grid(rng));
    const auto a = m.predict(frame, 0.4, cage);
    const auto b = m.predict(frame, 0.4, p);
    ASSERT_GT(max_abs(a.offsets), 1e-4);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_LT((b.offsets[i] - a.offsets[perm[i]]).norm(), 1e-7) << i;
}

TEST(Deformer, ForwardIsDeterministic) {
    const CageGrid cage = small_cage();
    DeformerModel a(tiny_config(cage.node_count()));
    DeformerModel b(tiny_config(cage.node_count()));
    randomize_head(a, 3);
    randomize_head(b, 3);
    std::mt19937_64 rng(4);
    const auto frame = frame_of(random_grid(rng));
    EXPECT_EQ(a.predict(frame, 0.5, cage).offsets, a.predict(frame, 0.5, cage).offsets);
    EXPECT_EQ(a.predict(frame, 0.5, cage).offsets, b.predict(frame, 0.5, cage).offsets);
}

TEST(Deformer, RejectsMismatchedInputs) {
    const CageGrid cage = small_cage();
    DeformerModel m(tiny_config(cage.node_count() + 1));
    std::mt19937_64 rng(5);
    EXPECT_THROW(m.predict(frame_of(random_grid(rng)), 0.0, cage), ShapeError);
    DeformerModel ok(tiny_config(cage.node_count()));
    EXPECT_THROW(ok.predict(frame_of(random_grid(rng, 6, 5)), 0.0, cage), ShapeError);
    EXPECT_THROW(parse_architecture("mlp"), InvalidArgument);
    EXPECT_EQ(parse_architecture(to_string(Architecture::direct)), Architecture::direct);
}

TEST(Deformer, DirectVariantRunsOnFreePoints) {
    const Points pts = {Vec3d(0, 0, 0), Vec3d(0.01, 0, 0.001), Vec3d(-0.01, 0.02, -0.001)};
    DeformerModel m(tiny_config(0, Architecture::direct));
    randomize_head(m, 9);
    std::mt19937_64 rng(6);
    const auto out = m.predict_points(frame_of(random_grid(rng)), 0.2, point_nodes(pts, 0.05));
    ASSERT_EQ(out.size(), pts.size());
    EXPECT_GT(max_abs(out), 0.0);
}

TEST(DeformerLoss, Arithmetic) {
    CageDisplacementField pred{{Vec3d(1, 0, 0), Vec3d(0, 2, 0)}, 0.0};
    CageDisplacementField gt{{Vec3d(0, 0, 0), Vec3d(0, 0, 0)}, 0.0};
    CageDisplacementField prev{{Vec3d(1, 0, 0), Vec3d(0, 0, 0)}, 0.0};
    // (1 + 4) / 2 and 0.5 * (0 + 4) / 2.
    EXPECT_DOUBLE_EQ(deformer_loss(pred, gt, nullptr, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(deformer_loss(pred, gt, &prev, 0.5), 3.5);
    CageDisplacementField short_gt{{Vec3d::Zero()}, 0.0};
    EXPECT_THROW(deformer_loss(pred, short_gt, nullptr, 0.0), ShapeError);
}

TEST(CosineLr, Endpoints) {
    TrainConfig c;
    c.epochs = 11;
    c.lr0 = 1e-3;
    c.lr_min_ratio = 0.01;
    EXPECT_DOUBLE_EQ(cosine_lr(c, 0), 1e-3);
    EXPECT_NEAR(cosine_lr(c, 10), 1e-5, 1e-15);
    EXPECT_NEAR(cosine_lr(c, 5), 0.5 * (1e-3 + 1e-5), 1e-15);
    for (int e = 1; e < 11; ++e) EXPECT_LT(cosine_lr(c, e), cosine_lr(c, e - 1));
}

TEST(Train, ToyProblemConverges) {
    const CageGrid cage = small_cage();
    const NodeSet nodes = cage_nodes(cage, 0.05);
    std::mt19937_64 rng(7);
    std::vector<TrainingSequence> data{toy_sequence(nodes, 6, rng)};
    DeformerModel m(tiny_config(cage.node_count()));
    TrainConfig tc;
    tc.epochs = 200;
    tc.lr0 = 1e-2;
    tc.window = 1;
    tc.lambda_smooth = 0.0;
    tc.noise_std = 0.0;
    tc.max_windows = 1;
    tc.seed = 3;
    const auto r = train(m, data, tc);
    ASSERT_EQ(r.history.size(), 200u);
    double first = 0.0, last = 0.0;
    for (int e = 0; e < 10; ++e) first += r.history[e].train_loss;
    for (int e = 190; e < 200; ++e) last += r.history[e].train_loss;
    EXPECT_LT(last, 0.1 * first);
}

TEST(Train, LargeSmoothnessWeightFlattensTime) {
    const CageGrid cage = small_cage();
    const NodeSet nodes = cage_nodes(cage, 0.05);
    std::mt19937_64 rng(8);
    std::vector<TrainingSequence> data{toy_sequence(nodes, 6, rng)};

    auto spread_after = [&](double lambda) {
        DeformerModel m(tiny_config(cage.node_count()));
        TrainConfig tc;
        tc.epochs = 150;
        tc.lr0 = 1e-2;
        tc.window = 6;
        tc.lambda_smooth = lambda;
        tc.noise_std = 0.0;
        tc.seed = 4;
        train(m, data, tc);
        const auto &s = data[0];
        const Points a = m.predict_points(frame_of(s.frames.front()), s.t_norm.front(), nodes);
        const Points b = m.predict_points(frame_of(s.frames.back()), s.t_norm.back(), nodes);
        double d = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, (a[i] - b[i]).norm());
        return d;
    };
    const double free_spread = spread_after(0.0);
    const double smooth_spread = spread_after(1e3);
    EXPECT_GT(free_spread, 0.003);
    EXPECT_LT(smooth_spread, 0.1 * free_spread);
}

TEST(Train, SameSeedSameParameters) {
    const CageGrid cage = small_cage();
    const NodeSet nodes = cage_nodes(cage, 0.05);
    std::mt19937_64 rng(9);
    std::vector<TrainingSequence> data{toy_sequence(nodes, 5, rng), toy_sequence(nodes, 5, rng)};
    TrainConfig tc;
    tc.epochs = 5;
    tc.window = 2;
    tc.seed = 12;
    DeformerModel a(tiny_config(cage.node_count()));
    DeformerModel b(tiny_config(cage.node_count()));
    const auto ra = train(a, data, tc);
    const auto rb = train(b, data, tc);
    ASSERT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t e = 0; e < ra.history.size(); ++e) EXPECT_EQ(ra.history[e].val_loss, rb.history[e].val_loss);
    for (std::size_t k = 0; k < a.parameters().size(); ++k)
        EXPECT_EQ(a.parameters()[k].second->values, b.parameters()[k].second->values) << a.parameters()[k].first;
}

TEST(Train, RejectsInconsistentData) {
    const CageGrid cage = small_cage();
    const NodeSet nodes = cage_nodes(cage, 0.05);
    std::mt19937_64 rng(10);
    std::vector<TrainingSequence> data{toy_sequence(nodes, 4, rng)};
    data[0].targets.pop_back();
    DeformerModel m(tiny_config(cage.node_count()));
    EXPECT_THROW(train(m, data, TrainConfig{}), InvalidArgument);
    EXPECT_THROW(train(m, std::span<const TrainingSequence>{}, TrainConfig{}), InvalidArgument);
}

TEST(Ema, Arithmetic) {
    const CageDisplacementField a{{Vec3d(1, 0, 0)}, 0.0};
    const CageDisplacementField b{{Vec3d(3, 0, 0)}, 1.0};
    EmaState none(0.0);
    none.update(a);
    EXPECT_EQ(none.update(b).offsets[0], Vec3d(3, 0, 0));

    EmaState half(0.5);
    EXPECT_EQ(half.update(a).offsets[0], Vec3d(1, 0, 0));
    EXPECT_EQ(half.update(b).offsets[0], Vec3d(2, 0, 0));
    EXPECT_EQ(half.update(b).offsets[0], Vec3d(2.5, 0, 0));
    EXPECT_DOUBLE_EQ(half.smoothed->timestamp, 1.0);

    EmaState fixed(0.9);
    fixed.update(b);
    for (int k = 0; k < 20; ++k) EXPECT_EQ(fixed.update(b).offsets[0], Vec3d(3, 0, 0));

    EXPECT_THROW(EmaState(1.0), InvalidArgument);
    EXPECT_THROW(EmaState(-0.1), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
    TempDir dir;
    const CageGrid cage = small_cage();
    DeformerModel m(tiny_config(cage.node_count()));
    randomize_head(m, 21);
    m.rng().discard(17);
    save_checkpoint(m, dir / "model.bin");
    DeformerModel r = load_checkpoint(dir / "model.bin", cage.node_count());
    ASSERT_EQ(r.parameters().size(), m.parameters().size());
    for (std::size_t k = 0; k < m.parameters().size(); ++k) {
        EXPECT_EQ(r.parameters()[k].first, m.parameters()[k].first);
        EXPECT_EQ(r.parameters()[k].second->values, m.parameters()[k].second->values);
    }
    EXPECT_EQ(r.rng(), m.rng());
    std::mt19937_64 rng(22);
    const auto frame = frame_of(random_grid(rng));
    EXPECT_EQ(r.predict(frame, 0.6, cage).offsets, m.predict(frame, 0.6, cage).offsets);
}

TEST(Checkpoint, NodeCountMismatchFails) {
    TempDir dir;
    const CageGrid cage = small_cage();
    DeformerModel m(tiny_config(cage.node_count()));
    save_checkpoint(m, dir / "model.bin");
    EXPECT_THROW(load_checkpoint(dir / "model.bin", cage.node_count() + 4), ShapeError);
}

TEST(Checkpoint, TruncatedOrForeignFilesFail) {
    TempDir dir;
    DeformerModel m(tiny_config(8));
    save_checkpoint(m, dir / "model.bin");
    const auto size = std::filesystem::file_size(dir / "model.bin");
    std::filesystem::copy_file(dir / "model.bin", dir / "cut.bin");
    std::filesystem::resize_file(dir / "cut.bin", size - 10);
    EXPECT_THROW(load_checkpoint(dir / "cut.bin"), FormatError);
    std::ofstream(dir / "junk.bin") << "not a model";
    EXPECT_THROW(load_checkpoint(dir / "junk.bin"), FormatError);
    EXPECT_THROW(load_checkpoint(dir / "missing.bin"), IoError);
}
