// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/sensor.hpp"

#include "binary_io.hpp"
#include "cagesplat/error.hpp"
#include "rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace cagesplat {

namespace {

void require_same_dims(const SensorGrid &a, const SensorGrid &b, const char *what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                         ")");
}

// sin(x)/x and (1 - cos x)/x, stable near zero.
double sinc(double x) { return std::abs(x) < 1e-4 ? 1.0 - x * x / 6.0 : std::sin(x) / x; }
double versinc(double x) {
    if (std::abs(x) < 1e-4) return x / 2.0 - x * x * x / 24.0;
    const double h = std::sin(0.5 * x);
    return 2.0 * h * h / x;
}

} // namespace

CalibrationTable CalibrationTable::uniform(int rows, int cols, double r0_ohm) {
    CalibrationTable t;
    t.r0 = SensorGrid::Constant(rows, cols, r0_ohm);
    t.gain = SensorGrid::Ones(rows, cols);
    t.offset = SensorGrid::Zero(rows, cols);
    return t;
}

CalibrationTable CalibrationTable::with_spread(int rows, int cols, double r0_ohm, double spread, std::uint64_t seed) {
    CalibrationTable t = uniform(rows, cols, r0_ohm);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-spread, spread);
    for (Eigen::Index i = 0; i < t.r0.size(); ++i) t.r0.data()[i] = r0_ohm * (1.0 + uni(rng));
    return t;
}

SensorFrame calibrate(const SensorFrame &raw, const CalibrationTable &table) {
    require_same_dims(raw.grid, table.r0, "calibrate");
    SensorFrame out;
    out.timestamp = raw.timestamp;
    const SensorGrid ohms = (table.gain.array() * raw.grid.array() + table.offset.array()).matrix();
    out.grid = ((ohms.array() - table.r0.array()) / table.r0.array()).matrix();
    return out;
}

SensorFrame decalibrate(const SensorFrame &normalized, const CalibrationTable &table) {
    require_same_dims(normalized.grid, table.r0, "decalibrate");
    SensorFrame out;
    out.timestamp = normalized.timestamp;
    const SensorGrid ohms = (table.r0.array() * (1.0 + normalized.grid.array())).matrix();
    out.grid = ((ohms.array() - table.offset.array()) / table.gain.array()).matrix();
    return out;
}

LowPassFilter::LowPassFilter(double cutoff_hz, double sample_hz) {
    if (!(sample_hz > 0.0) || !(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * sample_hz)
        throw InvalidArgument("lowpass_iir: need 0 < cutoff < sample_hz / 2");
    a_ = 1.0 - std::exp(-2.0 * std::numbers::pi * cutoff_hz / sample_hz);
}

SensorFrame LowPassFilter::apply(const SensorFrame &frame) {
    if (!state_) state_ = SensorGrid::Zero(frame.rows(), frame.cols());
    require_same_dims(*state_, frame.grid, "lowpass_iir");
    *state_ = a_ * frame.grid + (1.0 - a_) * *state_;
    SensorFrame out;
    out.grid = *state_;
    out.timestamp = frame.timestamp;
    return out;
}

std::vector<SensorFrame> lowpass_iir(std::span<const SensorFrame> sequence, double cutoff_hz, double sample_hz) {
    LowPassFilter f(cutoff_hz, sample_hz);
    std::vector<SensorFrame> out;
    out.reserve(sequence.size());
    for (const auto &fr : sequence) out.push_back(f.apply(fr));
    return out;
}

SensorFrame median3x3(const SensorFrame &frame) {
    const int h = frame.rows(), w = frame.cols();
    if (h < 3 || w < 3) throw ShapeError("median3x3: frame must be at least 3x3");
    SensorFrame out;
    out.timestamp = frame.timestamp;
    out.grid.resize(h, w);
    std::array<double, 9> win{};
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            int n = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                    win[n++] = frame.grid(std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1));
            std::nth_element(win.begin(), win.begin() + 4, win.end());
            out.grid(r, c) = win[4];
        }
    }
    return out;
}

SensorFrame tile_frames(std::span<const SensorFrame> patches, int layout_rows, int layout_cols, double sample_hz) {
    if (layout_rows < 1 || layout_cols < 1 ||
        static_cast<std::size_t>(layout_rows) * static_cast<std::size_t>(layout_cols) != patches.size())
        throw InvalidArgument("tile_frames: layout does not match the patch count");
    const int h = patches[0].rows(), w = patches[0].cols();
    double tmin = patches[0].timestamp, tmax = patches[0].timestamp;
    for (const auto &p : patches) {
        if (p.rows() != h || p.cols() != w) throw ShapeError("tile_frames: patches differ in size");
        tmin = std::min(tmin, p.timestamp);
        tmax = std::max(tmax, p.timestamp);
    }
    if (tmax - tmin > 1.0 / sample_hz) throw InvalidArgument("tile_frames: patch timestamps skewed beyond one period");

    SensorFrame out;
    out.timestamp = tmax;
    out.grid.resize(h * layout_rows, w * layout_cols);
    for (int r = 0; r < layout_rows; ++r)
        for (int c = 0; c < layout_cols; ++c)
            out.grid.block(r * h, c * w, h, w) = patches[static_cast<std::size_t>(r * layout_cols + c)].grid;
    return out;
}

std::string to_string(DeformMode m) { return m == DeformMode::bend ? "bend" : "twist"; }

DeformMode parse_mode(const std::string &s) {
    if (s == "bend") return DeformMode::bend;
    if (s == "twist") return DeformMode::twist;
    throw InvalidArgument("unknown deformation mode '" + s + "'");
}

ActuationFrame actuation_frame(const DeformationState &state) {
    const Vec3d axis(std::cos(state.axis_angle), std::sin(state.axis_angle), 0.0);
    const Vec3d across(-std::sin(state.axis_angle), std::cos(state.axis_angle), 0.0);
    return {axis, state.mode == DeformMode::bend ? across : axis};
}

double actuated_span(std::span<const Vec3d> rest, const DeformationState &state) {
    if (rest.empty()) return 0.0;
    const Vec3d dir = actuation_frame(state).length;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto &p : rest) {
        const double s = p.dot(dir);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    return hi - lo;
}

Points oracle_deform(std::span<const Vec3d> rest, const DeformationState &state) {
    Points out(rest.size(), Vec3d::Zero());
    if (rest.empty() || state.magnitude == 0.0) return out;

    const ActuationFrame fr = actuation_frame(state);
    const Vec3d center = Aabb::of(rest).center();
    const Vec3d normal = Vec3d::UnitZ();

    double s_min = std::numeric_limits<double>::infinity(), s_max = -s_min;
    for (const auto &p : rest) {
        const double s = (p - center).dot(fr.length);
        s_min = std::min(s_min, s);
        s_max = std::max(s_max, s);
    }
    const double span = s_max - s_min;
    if (!(span > 0.0)) return out;
    const double s0 = s_min + state.anchor * span;

    if (state.mode == DeformMode::bend) {
        const double kappa = state.magnitude / span;
        for (std::size_t j = 0; j < rest.size(); ++j) {
            const Vec3d q = rest[j] - center;
            const double sp = q.dot(fr.length) - s0;
            const double n = q.dot(normal);
            const double x = kappa * sp;
            const double ds = sp * sinc(x) - n * std::sin(x) - sp;
            const double dn = sp * versinc(x) + n * std::cos(x) - n;
            out[j] = ds * fr.length + dn * normal;
        }
    } else {
        const Vec3d &axis = fr.axis;
        for (std::size_t j = 0; j < rest.size(); ++j) {
            const Vec3d q = rest[j] - center;
            const double s = q.dot(axis);
            const Vec3d perp = q - s * axis;
            const double alpha = state.magnitude * (s - s0) / span;
            const Vec3d rotated = std::cos(alpha) * perp + std::sin(alpha) * axis.cross(perp);
            out[j] = rotated - perp;
        }
    }
    return out;
}

Points oracle_deform(const GaussianScene &scene, const DeformationState &state) {
    const Points c = scene.centers();
    return oracle_deform(c, state);
}

SensorGrid gauge_strain(const DeformationState &state, const SensorModel &model) {
    const double span = state.span > 0.0 ? state.span : model.default_span;
    const double rate = state.magnitude / span;  // curvature or twist rate, 1/m
    const Eigen::Vector2d axis(std::cos(state.axis_angle), std::sin(state.axis_angle));
    const Eigen::Vector2d across(-std::sin(state.axis_angle), std::cos(state.axis_angle));
    Eigen::Matrix2d k;
    if (state.mode == DeformMode::bend)
        k = rate * across * across.transpose();
    else
        k = rate * (axis * across.transpose() + across * axis.transpose());

    SensorGrid strain(model.rows, model.cols);
    for (int r = 0; r < model.rows; ++r) {
        const double theta = std::numbers::pi * r / model.rows;
        const Eigen::Vector2d g(std::cos(theta), std::sin(theta));
        // Curling toward the gauge side compresses it.
        strain.row(r).setConstant(-model.strain_offset * g.dot(k * g));
    }
    return strain;
}

AdcGrid adc_encode(const SensorGrid &ohms, const SensorModel &model) {
    const double full = std::ldexp(1.0, model.adc_bits) - 1.0;
    AdcGrid codes(ohms.rows(), ohms.cols());
    for (Eigen::Index i = 0; i < ohms.size(); ++i) {
        const double frac = ohms.data()[i] / (ohms.data()[i] + model.divider_ref_ohm);
        codes.data()[i] = static_cast<std::uint16_t>(std::clamp(std::round(frac * full), 1.0, full - 1.0));
    }
    return codes;
}

SensorGrid adc_decode(const AdcGrid &codes, const SensorModel &model) {
    const double full = std::ldexp(1.0, model.adc_bits) - 1.0;
    SensorGrid ohms(codes.rows(), codes.cols());
    for (Eigen::Index i = 0; i < codes.size(); ++i) {
        const double frac = codes.data()[i] / full;
        ohms.data()[i] = model.divider_ref_ohm * frac / (1.0 - frac);
    }
    return ohms;
}

SensorFrame simulate_resistance(const DeformationState &state, double noise_std, std::uint64_t seed,
                                const SensorModel &model) {
    if (noise_std < 0.0) throw InvalidArgument("simulate_resistance: noise_std must be >= 0");
    const CalibrationTable &cal = model.calibration;
    if (cal.r0.rows() != model.rows || cal.r0.cols() != model.cols)
        throw ShapeError("simulate_resistance: calibration table does not match the sensor grid");

    const SensorGrid strain = gauge_strain(state, model);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    SensorGrid ohms(model.rows, model.cols);
    for (int r = 0; r < model.rows; ++r) {
        for (int c = 0; c < model.cols; ++c) {
            double value = cal.r0(r, c) * (1.0 + model.gauge_factor * strain(r, c));
            if (noise_std > 0.0) value += noise_std * noise(rng);
            ohms(r, c) = std::max(value, 1e-6 * cal.r0(r, c));
        }
    }

    SensorFrame frame;
    frame.timestamp = 0.0;
    if (model.adc) {
        frame.adc_raw = adc_encode(ohms, model);
        ohms = adc_decode(*frame.adc_raw, model);
    }
    // Report the reading each channel's two-point calibration maps back to R.
    frame.grid = ((ohms.array() - cal.offset.array()) / cal.gain.array()).matrix();
    return frame;
}

AcquisitionChain::AcquisitionChain(CalibrationTable table, double cutoff_hz, double sample_hz, bool median)
    : table_(std::move(table)), lowpass_(cutoff_hz, sample_hz), median_(median) {}

SensorFrame AcquisitionChain::process(const SensorFrame &raw) {
    SensorFrame f = lowpass_.apply(calibrate(raw, table_));
    return median_ ? median3x3(f) : f;
}

std::vector<MotionSequence> generate_dataset(const GaussianScene &scene, DeformMode mode, int n_axes, int n_keyposes,
                                             int n_interp, std::uint64_t seed, const DatasetOptions &opts) {
    if (n_keyposes < 2) throw InvalidArgument("generate_dataset: n_keyposes must be >= 2");
    if (n_axes < 1 || n_interp < 0) throw InvalidArgument("generate_dataset: n_axes >= 1 and n_interp >= 0 required");

    const Points rest = scene.centers();
    const int length = n_keyposes + (n_keyposes - 1) * n_interp;
    std::vector<MotionSequence> out(static_cast<std::size_t>(n_axes));

#pragma omp parallel for schedule(dynamic)
    for (int a = 0; a < n_axes; ++a) {
        MotionSequence &seq = out[static_cast<std::size_t>(a)];
        seq.geometry_id = opts.geometry_id;
        seq.mode = mode;
        seq.sample_hz = opts.sample_hz;
        const double axis_angle = opts.axis_offset + std::numbers::pi * a / n_axes;
        DeformationState probe{mode, 0.0, axis_angle, 0.0, 0.0};
        const double span = actuated_span(rest, probe);

        for (int i = 0; i < length; ++i) {
            // Position along the key-pose ramp, in key units.
            const double key = static_cast<double>(i) / (n_interp + 1);
            DeformationState st;
            st.mode = mode;
            st.magnitude = opts.max_magnitude * key / (n_keyposes - 1);
            st.axis_angle = axis_angle;
            st.phase = length > 1 ? static_cast<double>(i) / (length - 1) : 0.0;
            st.span = span;
            st.anchor = opts.anchor;

            SensorFrame frame = simulate_resistance(
                st, opts.noise_ohm, detail::mix_seed(seed, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(i)),
                opts.sensor);
            frame.timestamp = i / opts.sample_hz;
            seq.frames.push_back(std::move(frame));
            seq.states.push_back(st);
            seq.gt_displacements.push_back(oracle_deform(rest, st));
        }
    }
    return out;
}

namespace {

std::map<std::string, std::string> read_meta(const std::filesystem::path &file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed meta line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const std::string &meta_get(const std::map<std::string, std::string> &kv, const std::string &key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("meta is missing key '" + key + "'");
    return it->second;
}

} // namespace

void save_labels(const MotionSequence &seq, const std::filesystem::path &dir) {
    std::ofstream lb(dir / "labels.bin", std::ios::binary);
    if (!lb) throw IoError("cannot write " + (dir / "labels.bin").string());
    for (const auto &field : seq.labels)
        for (const auto &o : field.offsets)
            for (int a = 0; a < 3; ++a) io::write_pod(lb, static_cast<float>(o[a]));
    if (!lb) throw IoError("failed writing labels.bin");
}

void save_sequence(const MotionSequence &seq, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    const int rows = seq.frames.empty() ? 0 : seq.frames[0].rows();
    const int cols = seq.frames.empty() ? 0 : seq.frames[0].cols();
    const std::size_t ng = seq.gt_displacements.empty() ? 0 : seq.gt_displacements[0].size();
    {
        std::ofstream meta(dir / "meta");
        if (!meta) throw IoError("cannot write " + (dir / "meta").string());
        meta << std::setprecision(17);
        meta << "geometry_id=" << seq.geometry_id << '\n'
             << "mode=" << to_string(seq.mode) << '\n'
             << "sample_hz=" << seq.sample_hz << '\n'
             << "frames=" << seq.frames.size() << '\n'
             << "rows=" << rows << '\n'
             << "cols=" << cols << '\n'
             << "gaussians=" << ng << '\n'
             << "axis_angle=" << (seq.states.empty() ? 0.0 : seq.states[0].axis_angle) << '\n';
    }
    {
        std::ofstream st(dir / "states.csv");
        st << std::setprecision(17) << "frame,timestamp,mode,magnitude,axis_angle,phase,span,anchor\n";
        for (std::size_t i = 0; i < seq.states.size(); ++i) {
            const auto &s = seq.states[i];
            st << i << ',' << seq.frames[i].timestamp << ',' << to_string(s.mode) << ',' << s.magnitude << ','
               << s.axis_angle << ',' << s.phase << ',' << s.span << ',' << s.anchor << '\n';
        }
    }
    {
        std::ofstream fb(dir / "frames.bin", std::ios::binary);
        for (const auto &f : seq.frames) {
            for (Eigen::Index i = 0; i < f.grid.size(); ++i) io::write_pod(fb, static_cast<float>(f.grid.data()[i]));
            io::write_pod(fb, f.timestamp);
        }
        if (!fb) throw IoError("failed writing frames.bin");
    }
    if (!seq.gt_displacements.empty()) {
        std::ofstream gb(dir / "gt.bin", std::ios::binary);
        for (const auto &d : seq.gt_displacements)
            for (const auto &v : d)
                for (int a = 0; a < 3; ++a) io::write_pod(gb, static_cast<float>(v[a]));
        if (!gb) throw IoError("failed writing gt.bin");
    }
    if (seq.has_labels()) save_labels(seq, dir);
}

MotionSequence load_sequence(const std::filesystem::path &dir, bool with_gt) {
    const auto kv = read_meta(dir / "meta");
    MotionSequence seq;
    seq.geometry_id = meta_get(kv, "geometry_id");
    seq.mode = parse_mode(meta_get(kv, "mode"));
    seq.sample_hz = std::stod(meta_get(kv, "sample_hz"));
    const auto frames = static_cast<std::size_t>(std::stoull(meta_get(kv, "frames")));
    const int rows = std::stoi(meta_get(kv, "rows"));
    const int cols = std::stoi(meta_get(kv, "cols"));
    const auto ng = static_cast<std::size_t>(std::stoull(meta_get(kv, "gaussians")));

    {
        std::ifstream fb(dir / "frames.bin", std::ios::binary);
        if (!fb) throw IoError("missing frames.bin in " + dir.string());
        std::vector<float> buf(static_cast<std::size_t>(rows * cols));
        for (std::size_t i = 0; i < frames; ++i) {
            if (!io::read_span(fb, std::span<float>(buf))) throw FormatError("truncated frames.bin", i);
            SensorFrame f;
            f.grid.resize(rows, cols);
            for (std::size_t c = 0; c < buf.size(); ++c) f.grid.data()[c] = buf[c];
            f.timestamp = io::read_pod<double>(fb);
            if (!fb) throw FormatError("truncated frames.bin timestamp", i);
            seq.frames.push_back(std::move(f));
        }
    }
    {
        std::ifstream st(dir / "states.csv");
        if (!st) throw IoError("missing states.csv in " + dir.string());
        std::string line;
        std::getline(st, line);
        while (std::getline(st, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != 8) throw FormatError("malformed states.csv row: " + line);
            DeformationState s;
            s.mode = parse_mode(cells[2]);
            s.magnitude = std::stod(cells[3]);
            s.axis_angle = std::stod(cells[4]);
            s.phase = std::stod(cells[5]);
            s.span = std::stod(cells[6]);
            s.anchor = std::stod(cells[7]);
            seq.states.push_back(s);
        }
        if (seq.states.size() != frames) throw FormatError("states.csv row count does not match meta frames");
    }
    if (with_gt) {
        std::ifstream gb(dir / "gt.bin", std::ios::binary);
        if (!gb) throw IoError("missing gt.bin in " + dir.string());
        std::vector<float> buf(ng * 3);
        for (std::size_t i = 0; i < frames; ++i) {
            if (!io::read_span(gb, std::span<float>(buf))) throw FormatError("truncated gt.bin", i);
            Points d(ng);
            for (std::size_t j = 0; j < ng; ++j) d[j] = Vec3d(buf[3 * j], buf[3 * j + 1], buf[3 * j + 2]);
            seq.gt_displacements.push_back(std::move(d));
        }
    }
    if (std::filesystem::exists(dir / "labels.bin")) {
        const auto bytes = std::filesystem::file_size(dir / "labels.bin");
        if (frames > 0 && bytes % (frames * 12) == 0 && bytes > 0) {
            const std::size_t nc = bytes / (frames * 12);
            std::ifstream lb(dir / "labels.bin", std::ios::binary);
            std::vector<float> buf(nc * 3);
            for (std::size_t i = 0; i < frames; ++i) {
                if (!io::read_span(lb, std::span<float>(buf))) throw FormatError("truncated labels.bin", i);
                CageDisplacementField field = CageDisplacementField::zeros(nc, seq.frames[i].timestamp);
                for (std::size_t c = 0; c < nc; ++c) field.offsets[c] = Vec3d(buf[3 * c], buf[3 * c + 1], buf[3 * c + 2]);
                seq.labels.push_back(std::move(field));
            }
        } else {
            throw FormatError("labels.bin size is inconsistent with the frame count in " + dir.string());
        }
    }
    return seq;
}

} // namespace cagesplat
