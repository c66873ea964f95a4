// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/error.hpp"
#include "cagesplat/sensor.hpp"
#include "test_util.hpp"

#include <algorithm>

using namespace cagesplat;
using cagesplat::testing::TempDir;

namespace {

SensorFrame constant_frame(int rows, int cols, double v, double t = 0.0) {
    SensorFrame f;
    f.grid = SensorGrid::Constant(rows, cols, v);
    f.timestamp = t;
    return f;
}

SensorFrame random_frame(int rows, int cols, std::mt19937_64 &rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    SensorFrame f;
    f.grid.resize(rows, cols);
    for (Eigen::Index i = 0; i < f.grid.size(); ++i) f.grid.data()[i] = u(rng);
    return f;
}

/// Straight rod of n points along `dir`, from 0 to length.
Points rod(const Vec3d &dir, double length, int n = 201) {
    Points p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = dir * (length * i / (n - 1));
    return p;
}

} // namespace

TEST(Calibrate, BaselineAndAffine) {
    const CalibrationTable t = CalibrationTable::uniform(10, 10, 1000.0);
    const SensorFrame zero = calibrate(constant_frame(10, 10, 1000.0), t);
    EXPECT_EQ(zero.grid.cwiseAbs().maxCoeff(), 0.0);

    SensorFrame raw = constant_frame(10, 10, 1000.0);
    raw.grid(3, 4) = 2000.0;
    const SensorFrame one = calibrate(raw, t);
    EXPECT_DOUBLE_EQ(one.grid(3, 4), 1.0);
    EXPECT_EQ(one.grid.cwiseAbs().sum(), 1.0);

    EXPECT_THROW(calibrate(constant_frame(10, 20, 1.0), t), ShapeError);
}

TEST(Calibrate, RoundTripWithSpread) {
    std::mt19937_64 rng(1);
    const CalibrationTable t = CalibrationTable::with_spread(10, 10, 1000.0, 0.08, 5);
    EXPECT_GT(t.r0.minCoeff(), 0.0);
    for (int trial = 0; trial < 50; ++trial) {
        const SensorFrame x = random_frame(10, 10, rng, -0.2, 0.2);
        const SensorFrame back = calibrate(decalibrate(x, t), t);
        EXPECT_LT((back.grid - x.grid).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(LowPass, StepCoefficient) {
    LowPassFilter f(10.0, 250.0);
    EXPECT_NEAR(f.coefficient(), 1.0 - std::exp(-2.0 * std::numbers::pi * 10.0 / 250.0), 1e-15);
    EXPECT_NEAR(f.coefficient(), 0.222232, 1e-6);
    const SensorFrame y1 = f.apply(constant_frame(10, 10, 1.0));
    EXPECT_DOUBLE_EQ(y1.grid(0, 0), f.coefficient());
}

TEST(LowPass, ConstantInputConverges) {
    LowPassFilter f(10.0, 250.0);
    double prev_err = 1.0;
    for (int t = 0; t < 200; ++t) {
        const double err = std::abs(f.apply(constant_frame(10, 10, 1.0)).grid(5, 5) - 1.0);
        EXPECT_LE(err, prev_err);
        prev_err = err;
    }
    EXPECT_LT(prev_err, 1e-12);
}

TEST(LowPass, AttenuatesFiveTimesCutoff) {
    const double fs = 250.0, fc = 10.0;
    std::vector<SensorFrame> seq;
    for (int t = 0; t < 2000; ++t)
        seq.push_back(constant_frame(10, 10, std::sin(2.0 * std::numbers::pi * 5.0 * fc * t / fs), t / fs));
    const auto out = lowpass_iir(seq, fc, fs);
    double in_sq = 0.0, out_sq = 0.0;
    for (std::size_t t = 500; t < seq.size(); ++t) {
        in_sq += seq[t].grid(0, 0) * seq[t].grid(0, 0);
        out_sq += out[t].grid(0, 0) * out[t].grid(0, 0);
    }
    EXPECT_LT(std::sqrt(out_sq / in_sq), 0.3);
    EXPECT_THROW(lowpass_iir(seq, 125.0, fs), InvalidArgument);
    EXPECT_THROW(LowPassFilter(0.0, fs), InvalidArgument);
}

TEST(Median, MatchesBruteForce) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const SensorFrame f = random_frame(10, 10, rng);
        const SensorFrame m = median3x3(f);
        for (int r = 0; r < 10; ++r)
            for (int c = 0; c < 10; ++c) {
                std::vector<double> w;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc)
                        w.push_back(f.grid(std::clamp(r + dr, 0, 9), std::clamp(c + dc, 0, 9)));
                std::sort(w.begin(), w.end());
                EXPECT_EQ(m.grid(r, c), w[4]);
            }
    }
}

TEST(Median, ConstantAndSpike) {
    SensorFrame f = constant_frame(10, 10, 0.5);
    EXPECT_EQ(median3x3(f).grid, f.grid);
    f.grid(4, 6) = 100.0;
    EXPECT_EQ(median3x3(f).grid(4, 6), 0.5);
    EXPECT_THROW(median3x3(constant_frame(2, 10, 0.0)), ShapeError);
}

TEST(Tile, IdentityAndConcatenation) {
    std::mt19937_64 rng(3);
    SensorFrame a = random_frame(10, 10, rng), b = random_frame(10, 10, rng);
    a.timestamp = 1.0;
    b.timestamp = 1.002;
    const std::vector<SensorFrame> one{a};
    EXPECT_EQ(tile_frames(one, 1, 1, 250.0).grid, a.grid);
    const std::vector<SensorFrame> two{a, b};
    const SensorFrame t = tile_frames(two, 1, 2, 250.0);
    ASSERT_EQ(t.rows(), 10);
    ASSERT_EQ(t.cols(), 20);
    EXPECT_EQ(SensorGrid(t.grid.leftCols(10)), a.grid);
    EXPECT_EQ(SensorGrid(t.grid.rightCols(10)), b.grid);
    EXPECT_DOUBLE_EQ(t.timestamp, 1.002);

    b.timestamp = 1.01;
    const std::vector<SensorFrame> skew{a, b};
    EXPECT_THROW(tile_frames(skew, 1, 2, 250.0), InvalidArgument);
    EXPECT_THROW(tile_frames(two, 2, 2, 250.0), InvalidArgument);
}

TEST(Chain, RestingRawStreamIsZero) {
    AcquisitionChain chain(CalibrationTable::uniform(10, 10, 1000.0), 10.0, 250.0);
    for (int t = 0; t < 5; ++t) EXPECT_EQ(chain.process(constant_frame(10, 10, 1000.0, t / 250.0)).grid.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Chain, IdempotentAtDc) {
    // A filtered constant stream stays constant after a second pass.
    AcquisitionChain first(CalibrationTable::uniform(10, 10, 1000.0), 10.0, 250.0);
    std::vector<SensorFrame> once;
    for (int t = 0; t < 400; ++t) once.push_back(first.process(constant_frame(10, 10, 1100.0, t / 250.0)));
    const auto twice = lowpass_iir(std::span<const SensorFrame>(once).subspan(300), 10.0, 250.0);
    EXPECT_NEAR(once.back().grid(2, 2), 0.1, 1e-12);
    EXPECT_NEAR(median3x3(twice.back()).grid(2, 2), 0.1, 1e-6);
}

TEST(Oracle, ZeroMagnitudeIsZero) {
    const Points r = rod(Vec3d::UnitX(), 0.1);
    DeformationState s;
    for (auto mode : {DeformMode::bend, DeformMode::twist}) {
        s.mode = mode;
        for (const auto &d : oracle_deform(r, s)) EXPECT_EQ(d.norm(), 0.0);
    }
}

TEST(Oracle, RodBentAboutItsBase) {
    DeformationState s;
    s.mode = DeformMode::bend;
    s.magnitude = std::numbers::pi / 2;
    s.axis_angle = 0.3;
    s.anchor = 0.0;
    const double L = 0.1;
    const Points r = rod(actuation_frame(s).length, L);
    const Points d = oracle_deform(r, s);
    const double th = s.magnitude;
    const double expect = L * std::hypot(std::sin(th) / th - 1.0, (1.0 - std::cos(th)) / th);
    EXPECT_NEAR(d.back().norm(), expect, 1e-12);
    EXPECT_LT(d.front().norm(), 1e-15);
    // Arc length preserved along the centerline.
    double len = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i) len += ((r[i] + d[i]) - (r[i - 1] + d[i - 1])).norm();
    EXPECT_NEAR(len, L, 1e-6);
}

TEST(Oracle, TwistFixesCentroidsAndSections) {
    std::mt19937_64 rng(4);
    DeformationState s;
    s.mode = DeformMode::twist;
    s.magnitude = 0.9;
    s.axis_angle = 0.0;
    // Cylinder-like sections of 12 points at 9 stations along x.
    Points rest;
    for (int st = 0; st < 9; ++st)
        for (int k = 0; k < 12; ++k) {
            const double a = 2.0 * std::numbers::pi * k / 12.0;
            rest.emplace_back(0.0125 * st, 0.01 * std::cos(a), 0.01 * std::sin(a));
        }
    const Points d = oracle_deform(rest, s);
    for (int st = 0; st < 9; ++st) {
        Vec3d c0 = Vec3d::Zero(), c1 = Vec3d::Zero();
        for (int k = 0; k < 12; ++k) {
            const std::size_t j = static_cast<std::size_t>(12 * st + k);
            c0 += rest[j];
            c1 += rest[j] + d[j];
        }
        EXPECT_LT((c0 - c1).norm() / 12.0, 1e-9);
        for (int a = 0; a < 12; ++a)
            for (int b = a + 1; b < 12; ++b) {
                const std::size_t i = static_cast<std::size_t>(12 * st + a), j = static_cast<std::size_t>(12 * st + b);
                EXPECT_NEAR(((rest[i] + d[i]) - (rest[j] + d[j])).norm(), (rest[i] - rest[j]).norm(), 1e-9);
            }
    }
}

TEST(Oracle, SmoothInMagnitude) {
    const Points r = rod(Vec3d::UnitY(), 0.1, 21);
    DeformationState s;
    s.axis_angle = 0.0;
    for (auto mode : {DeformMode::bend, DeformMode::twist}) {
        s.mode = mode;
        double prev_step = -1.0;
        for (double m = 0.1; m < 1.5; m += 0.1) {
            s.magnitude = m;
            const Points a = oracle_deform(r, s);
            s.magnitude = m + 1e-6;
            const Points b = oracle_deform(r, s);
            double step = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) step = std::max(step, (a[j] - b[j]).norm());
            EXPECT_LT(step, 1e-6);
            if (prev_step >= 0.0) {
                EXPECT_NEAR(step, prev_step, 1e-7);
            }
            prev_step = step;
        }
    }
}

TEST(Simulate, RestingFrameIsBaseline) {
    DeformationState s;
    const SensorFrame f = simulate_resistance(s, 0.0, 1);
    EXPECT_EQ((f.grid.array() - 1000.0).abs().maxCoeff(), 0.0);
}

TEST(Simulate, RowsAreConstantAndSeedsRepeat) {
    DeformationState s;
    s.mode = DeformMode::bend;
    s.magnitude = 1.0;
    s.axis_angle = 0.0;
    const SensorFrame f = simulate_resistance(s, 0.0, 1);
    for (int r = 0; r < f.rows(); ++r)
        for (int c = 1; c < f.cols(); ++c) EXPECT_EQ(f.grid(r, c), f.grid(r, 0));
    // The row whose gauge runs across the fold reads the largest change.
    EXPECT_GT(std::abs(f.grid(5, 0) - 1000.0), std::abs(f.grid(0, 0) - 1000.0));

    const SensorFrame a = simulate_resistance(s, 2.0, 9), b = simulate_resistance(s, 2.0, 9),
                      c = simulate_resistance(s, 2.0, 10);
    EXPECT_EQ(a.grid, b.grid);
    EXPECT_NE(a.grid, c.grid);
    EXPECT_THROW(simulate_resistance(s, -1.0, 1), InvalidArgument);
}

TEST(Simulate, MonotoneInMagnitude) {
    for (auto mode : {DeformMode::bend, DeformMode::twist})
        for (double axis : {0.0, 0.7, 2.0}) {
            DeformationState s;
            s.mode = mode;
            s.axis_angle = axis;
            double prev = 0.0;
            for (double m = 0.0; m <= 1.6; m += 0.1) {
                s.magnitude = m;
                const SensorFrame f = simulate_resistance(s, 0.0, 0);
                const double peak = ((f.grid.array() - 1000.0) / 1000.0).abs().maxCoeff();
                EXPECT_GE(peak, prev - 1e-15);
                prev = peak;
            }
        }
}

TEST(Simulate, BendAndTwistSignaturesDiffer) {
    DeformationState b, t;
    b.mode = DeformMode::bend;
    t.mode = DeformMode::twist;
    b.magnitude = t.magnitude = 1.0;
    const SensorModel m;
    const SensorGrid gb = gauge_strain(b, m), gt = gauge_strain(t, m);
    EXPECT_GT((gb - gt).cwiseAbs().maxCoeff(), 1e-4);
    // A twist stretches one diagonal and compresses the other.
    EXPECT_GT(gt.col(0).maxCoeff(), 0.0);
    EXPECT_LT(gt.col(0).minCoeff(), 0.0);
}

TEST(Adc, RoundTripWithinOneCode) {
    SensorModel m;
    m.adc = true;
    SensorGrid ohms = SensorGrid::Constant(10, 10, 1000.0);
    ohms(0, 0) = 1100.0;
    const SensorGrid back = adc_decode(adc_encode(ohms, m), m);
    // One 12-bit code near mid-scale is about 1 ohm.
    EXPECT_LT((back - ohms).cwiseAbs().maxCoeff(), 1.0);
    DeformationState s;
    const SensorFrame f = simulate_resistance(s, 0.0, 0, m);
    ASSERT_TRUE(f.adc_raw.has_value());
}

TEST(Dataset, CountsTimestampsAndSeeds) {
    std::mt19937_64 rng(5);
    const GaussianScene scene = cagesplat::testing::random_scene(50, rng, 0.05);
    DatasetOptions opts;
    const auto seqs = generate_dataset(scene, DeformMode::bend, 1, 20, 8, 1, opts);
    ASSERT_EQ(seqs.size(), 1u);
    const MotionSequence &s = seqs[0];
    EXPECT_EQ(s.size(), 172u);
    EXPECT_EQ(s.states.size(), 172u);
    EXPECT_EQ(s.gt_displacements.size(), 172u);
    for (const auto &d : s.gt_displacements.front()) EXPECT_EQ(d.norm(), 0.0);
    EXPECT_EQ(s.states.front().magnitude, 0.0);
    EXPECT_NEAR(s.states.back().magnitude, opts.max_magnitude, 1e-12);
    for (std::size_t f = 1; f < s.size(); ++f) {
        EXPECT_NEAR(s.frames[f].timestamp - s.frames[f - 1].timestamp, 1.0 / 250.0, 1e-12);
        EXPECT_GT(s.frames[f].timestamp, s.frames[f - 1].timestamp);
    }

    const auto other = generate_dataset(scene, DeformMode::bend, 1, 20, 8, 2, opts);
    bool noise_differs = false;
    for (std::size_t f = 0; f < s.size(); ++f) {
        EXPECT_EQ(other[0].states[f].magnitude, s.states[f].magnitude);
        noise_differs |= other[0].frames[f].grid != s.frames[f].grid;
    }
    EXPECT_TRUE(noise_differs);

    const auto multi = generate_dataset(scene, DeformMode::twist, 4, 3, 1, 1, opts);
    ASSERT_EQ(multi.size(), 4u);
    for (int a = 0; a < 4; ++a) EXPECT_NEAR(multi[a].states[0].axis_angle, std::numbers::pi * a / 4, 1e-12);
    EXPECT_THROW(generate_dataset(scene, DeformMode::bend, 1, 1, 8, 1, opts), InvalidArgument);
}

TEST(Dataset, SequenceRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(6);
    const GaussianScene scene = cagesplat::testing::random_scene(40, rng, 0.05);
    auto seqs = generate_dataset(scene, DeformMode::twist, 1, 4, 2, 3);
    MotionSequence &s = seqs[0];
    save_sequence(s, dir / "seq");
    const MotionSequence r = load_sequence(dir / "seq");
    EXPECT_EQ(r.mode, s.mode);
    EXPECT_EQ(r.geometry_id, s.geometry_id);
    ASSERT_EQ(r.size(), s.size());
    for (std::size_t f = 0; f < s.size(); ++f) {
        EXPECT_LT((r.frames[f].grid - s.frames[f].grid).cwiseAbs().maxCoeff(), 1e-3);
        EXPECT_DOUBLE_EQ(r.frames[f].timestamp, s.frames[f].timestamp);
        EXPECT_NEAR(r.states[f].magnitude, s.states[f].magnitude, 1e-12);
        for (std::size_t j = 0; j < scene.size(); ++j)
            EXPECT_LT((r.gt_displacements[f][j] - s.gt_displacements[f][j]).norm(), 1e-7);
    }
    EXPECT_FALSE(r.has_labels());

    s.labels.assign(s.size(), CageDisplacementField::zeros(8));
    s.labels[1].offsets[3] = Vec3d(1e-3, 2e-3, 3e-3);
    save_labels(s, dir / "seq");
    const MotionSequence l = load_sequence(dir / "seq", false);
    ASSERT_TRUE(l.has_labels());
    EXPECT_TRUE(l.gt_displacements.empty());
    EXPECT_LT((l.labels[1].offsets[3] - Vec3d(1e-3, 2e-3, 3e-3)).norm(), 1e-9);

    std::filesystem::remove(dir / "seq" / "gt.bin");
    EXPECT_THROW(load_sequence(dir / "seq", true), IoError);
}
