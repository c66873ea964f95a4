// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/deformer.hpp"

#include "binary_io.hpp"
#include "cagesplat/error.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cagesplat {

namespace {

constexpr char kCheckpointMagic[5] = "CDNN";
constexpr std::uint32_t kCheckpointVersion = 1;

int conv_out(int n) { return (n + 2 - 3) / 2 + 1; }

ad::TensorPtr targets_tensor(const Points &pts, double scale) {
    std::vector<float> v(pts.size() * 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int a = 0; a < 3; ++a) v[3 * i + a] = static_cast<float>(pts[i][a] / scale);
    return ad::make_tensor({static_cast<int>(pts.size()), 3}, std::move(v));
}

// In-plane coordinates in coord_scale units; the through-thickness one is
// divided by the set's half-thickness so thin and thick bodies share a range.
ad::TensorPtr node_features(std::span<const Vec3d> pts, double scale) {
    double half = 0.0;
    for (const auto &p : pts) half = std::max(half, std::abs(p.z()));
    if (!(half > 1e-9)) half = 1.0;
    std::vector<float> v(pts.size() * 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        v[3 * i] = static_cast<float>(pts[i].x() / scale);
        v[3 * i + 1] = static_cast<float>(pts[i].y() / scale);
        v[3 * i + 2] = static_cast<float>(pts[i].z() / half);
    }
    return ad::make_tensor({static_cast<int>(pts.size()), 3}, std::move(v));
}

} // namespace

std::string to_string(Architecture a) { return a == Architecture::cage_gat ? "cage_gat" : "direct"; }

Architecture parse_architecture(const std::string &s) {
    if (s == "cage_gat") return Architecture::cage_gat;
    if (s == "direct") return Architecture::direct;
    throw InvalidArgument("unknown architecture '" + s + "'");
}

std::vector<float> time_embedding(double t_norm, int bands) {
    const double t = std::clamp(t_norm, 0.0, 1.0);
    std::vector<float> e(static_cast<std::size_t>(2 * bands));
    for (int b = 0; b < bands; ++b) {
        const double w = std::ldexp(std::numbers::pi, b) * t;
        e[2 * b] = static_cast<float>(std::sin(w));
        e[2 * b + 1] = static_cast<float>(std::cos(w));
    }
    return e;
}

NodeSet cage_nodes(const CageGrid &cage, double coord_scale) {
    NodeSet ns;
    ns.positions = point_nodes(cage.nodes, coord_scale).positions;
    ns.attention = ad::Adjacency::from_lists(cage.neighbors, true);
    ns.neighbors = ad::Adjacency::from_lists(cage.neighbors, false);
    return ns;
}

NodeSet point_nodes(std::span<const Vec3d> points, double coord_scale) {
    if (!(coord_scale > 0.0)) throw InvalidArgument("coord_scale must be positive");
    NodeSet ns;
    ns.positions = node_features(points, coord_scale);
    const std::vector<std::vector<std::uint32_t>> none(points.size());
    ns.attention = ad::Adjacency::from_lists(none, true);
    ns.neighbors = ad::Adjacency::from_lists(none, false);
    return ns;
}

DeformerModel::DeformerModel(const ModelConfig &cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg.grid_rows < 3 || cfg.grid_cols < 3) throw InvalidArgument("model: sensor grid must be at least 3x3");
    if (cfg.heads < 1 || cfg.hidden < 1 || cfg.feature_dim < 1 || cfg.time_bands < 0)
        throw InvalidArgument("model: widths must be positive");
    if (!(cfg.coord_scale > 0.0)) throw InvalidArgument("model: coord_scale must be positive");

    const int h2 = conv_out(conv_out(cfg.grid_rows)), w2 = conv_out(conv_out(cfg.grid_cols));
    const int flat = cfg.conv2_channels * h2 * w2;
    const int row = cfg.feature_dim + 2 * cfg.time_bands;
    const int H = cfg.heads, D = cfg.hidden, HD = H * D;

    add_param("enc.conv1.w", {cfg.conv1_channels, 1, 3, 3}, 9, 9.0 * cfg.conv1_channels);
    add_param("enc.conv1.b", {cfg.conv1_channels}, 0, 0);
    add_param("enc.conv2.w", {cfg.conv2_channels, cfg.conv1_channels, 3, 3}, 9.0 * cfg.conv1_channels,
              9.0 * cfg.conv2_channels);
    add_param("enc.conv2.b", {cfg.conv2_channels}, 0, 0);
    add_param("enc.fc.w", {flat, cfg.feature_dim}, flat, cfg.feature_dim);
    add_param("enc.fc.b", {1, cfg.feature_dim}, 0, 0);

    if (cfg.architecture == Architecture::cage_gat) {
        add_param("gat1.w_fe", {row, HD}, row + 3, HD);
        add_param("gat1.w_pos", {3, HD}, row + 3, HD);
        add_param("gat1.a_src", {H, D}, D, 1);
        add_param("gat1.a_dst", {H, D}, D, 1);
        add_param("gat1.b", {1, HD}, 0, 0);
        add_param("gat2.w", {HD, HD}, HD, HD);
        add_param("gat2.a_src", {H, D}, D, 1);
        add_param("gat2.a_dst", {H, D}, D, 1);
        add_param("gat2.b", {1, D}, 0, 0);
        add_param("gconv.w_self", {D, D}, D, D);
        add_param("gconv.w_nbr", {D, D}, D, D);
        add_param("gconv.b", {1, D}, 0, 0);
    } else {
        add_param("mlp1.w_fe", {row, HD}, row + 3, HD);
        add_param("mlp1.w_pos", {3, HD}, row + 3, HD);
        add_param("mlp1.b", {1, HD}, 0, 0);
        add_param("mlp2.w", {HD, D}, HD, D);
        add_param("mlp2.b", {1, D}, 0, 0);
        add_param("mlp3.w", {D, D}, D, D);
        add_param("mlp3.b", {1, D}, 0, 0);
    }
    add_param("head.w1", {D, D}, D, D);
    add_param("head.b1", {1, D}, 0, 0);
    // Zero head: an untrained model predicts the rest pose.
    add_param("head.w2", {D, 3}, 0, 0);
    add_param("head.b2", {1, 3}, 0, 0);
}

ad::TensorPtr DeformerModel::add_param(const std::string &name, ad::Shape shape, double fan_in, double fan_out) {
    auto t = ad::zeros(std::move(shape), true);
    if (fan_in > 0.0) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> uni(-limit, limit);
        for (auto &v : t->values) v = static_cast<float>(uni(rng_));
    }
    params_.emplace_back(name, t);
    return t;
}

ad::TensorPtr DeformerModel::parameter(const std::string &name) const {
    for (const auto &[n, t] : params_)
        if (n == name) return t;
    throw InvalidArgument("model has no parameter '" + name + "'");
}

std::size_t DeformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto &p : params_) n += p.second->size();
    return n;
}

void DeformerModel::check_frame(const SensorGrid &frame) const {
    if (frame.rows() != cfg_.grid_rows || frame.cols() != cfg_.grid_cols)
        throw ShapeError("model expects " + std::to_string(cfg_.grid_rows) + "x" + std::to_string(cfg_.grid_cols) +
                         " frames, got " + std::to_string(frame.rows()) + "x" + std::to_string(frame.cols()));
}

ad::TensorPtr DeformerModel::encode(ad::Tape &tape, const SensorGrid &frame, double t_norm) const {
    check_frame(frame);
    std::vector<float> px(static_cast<std::size_t>(frame.size()));
    for (Eigen::Index i = 0; i < frame.size(); ++i) px[static_cast<std::size_t>(i)] = static_cast<float>(frame.data()[i]);
    auto x = ad::make_tensor({1, cfg_.grid_rows, cfg_.grid_cols}, std::move(px));

    auto h = tape.elu(tape.conv2d(x, parameter("enc.conv1.w"), parameter("enc.conv1.b"), 2, 1));
    h = tape.elu(tape.conv2d(h, parameter("enc.conv2.w"), parameter("enc.conv2.b"), 2, 1));
    auto f = tape.elu(tape.add_row(tape.matmul(tape.flatten(h), parameter("enc.fc.w")), parameter("enc.fc.b")));
    if (cfg_.time_bands == 0) return f;
    auto e = ad::make_tensor({1, 2 * cfg_.time_bands}, time_embedding(t_norm, cfg_.time_bands));
    return tape.concat_cols({f, e});
}

ad::TensorPtr DeformerModel::forward(ad::Tape &tape, const SensorGrid &frame, double t_norm,
                                     const NodeSet &nodes) const {
    if (!nodes.positions || nodes.size() == 0) throw ShapeError("forward: empty node set");
    if (cfg_.architecture == Architecture::cage_gat && cfg_.node_count != 0 && nodes.size() != cfg_.node_count)
        throw ShapeError("model was built for " + std::to_string(cfg_.node_count) + " cage nodes, got " +
                         std::to_string(nodes.size()));
    const auto row = encode(tape, frame, t_norm);
    const int H = cfg_.heads;
    const auto &P = [this](const char *n) { return parameter(n); };

    ad::TensorPtr h;
    if (cfg_.architecture == Architecture::cage_gat) {
        // [row | pos] W splits into a shared row term plus a per-node term.
        auto z1 = tape.add_row(tape.matmul(nodes.positions, P("gat1.w_pos")), tape.matmul(row, P("gat1.w_fe")));
        auto h1 = tape.elu(tape.add_row(tape.graph_attention(z1, P("gat1.a_src"), P("gat1.a_dst"), nodes.attention, H),
                                        P("gat1.b")));
        auto z2 = tape.matmul(h1, P("gat2.w"));
        auto a2 = tape.head_mean(tape.graph_attention(z2, P("gat2.a_src"), P("gat2.a_dst"), nodes.attention, H), H);
        auto h2 = tape.elu(tape.add_row(a2, P("gat2.b")));
        auto g = tape.add(tape.matmul(h2, P("gconv.w_self")), tape.matmul(tape.neighbor_mean(h2, nodes.neighbors), P("gconv.w_nbr")));
        h = tape.elu(tape.add_row(g, P("gconv.b")));
    } else {
        auto shared = tape.add(tape.matmul(row, P("mlp1.w_fe")), P("mlp1.b"));
        auto h1 = tape.elu(tape.add_row(tape.matmul(nodes.positions, P("mlp1.w_pos")), shared));
        auto h2 = tape.elu(tape.add_row(tape.matmul(h1, P("mlp2.w")), P("mlp2.b")));
        h = tape.elu(tape.add_row(tape.matmul(h2, P("mlp3.w")), P("mlp3.b")));
    }
    auto o = tape.elu(tape.add_row(tape.matmul(h, P("head.w1")), P("head.b1")));
    return tape.add_row(tape.matmul(o, P("head.w2")), P("head.b2"));
}

CageDisplacementField DeformerModel::predict(const SensorFrame &frame, double t_norm, const NodeSet &nodes) const {
    const Points p = predict_points(frame, t_norm, nodes);
    return {p, frame.timestamp};
}

CageDisplacementField DeformerModel::predict(const SensorFrame &frame, double t_norm, const CageGrid &cage) const {
    return predict(frame, t_norm, cage_nodes(cage, cfg_.coord_scale));
}

Points DeformerModel::predict_points(const SensorFrame &frame, double t_norm, const NodeSet &nodes) const {
    ad::Tape tape;
    const auto out = forward(tape, frame.grid, t_norm, nodes);
    Points p(nodes.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (int a = 0; a < 3; ++a) p[i][a] = static_cast<double>(out->values[3 * i + a]) * cfg_.coord_scale;
    return p;
}

double deformer_loss(const CageDisplacementField &pred, const CageDisplacementField &gt,
                     const CageDisplacementField *prev, double lambda) {
    if (pred.size() != gt.size() || (prev && prev->size() != pred.size()))
        throw ShapeError("deformer_loss: field lengths differ");
    if (pred.size() == 0) return 0.0;
    const double n = static_cast<double>(pred.size());
    double reg = 0.0, smooth = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        reg += (pred.offsets[i] - gt.offsets[i]).squaredNorm();
        if (prev) smooth += (pred.offsets[i] - prev->offsets[i]).squaredNorm();
    }
    return reg / n + lambda * smooth / n;
}

double cosine_lr(const TrainConfig &cfg, int epoch) {
    const double lr_min = cfg.lr_min_ratio * cfg.lr0;
    if (cfg.epochs <= 1) return cfg.lr0;
    const double x = std::clamp(static_cast<double>(epoch) / (cfg.epochs - 1), 0.0, 1.0);
    return lr_min + 0.5 * (cfg.lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * x));
}

namespace {

struct Window {
    std::size_t seq;
    std::size_t start;
    std::size_t length;
};

std::vector<Window> make_windows(std::span<const TrainingSequence> data, const std::vector<std::size_t> &seqs,
                                 int window) {
    std::vector<Window> out;
    for (auto s : seqs) {
        const std::size_t n = data[s].frames.size();
        if (n == 0) continue;
        const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(window), n);
        for (std::size_t b = 0; b + len <= n; ++b) out.push_back({s, b, len});
    }
    return out;
}

/// Records the windowed objective; returns the scalar loss tensor.
ad::TensorPtr window_loss(ad::Tape &tape, const DeformerModel &model, const TrainingSequence &seq, const Window &w,
                          double lambda, double noise_std, std::mt19937_64 *rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    const double scale = model.config().coord_scale;
    ad::TensorPtr reg, smooth, prev;
    for (std::size_t k = 0; k < w.length; ++k) {
        const std::size_t f = w.start + k;
        SensorGrid x = seq.frames[f];
        if (rng && noise_std > 0.0)
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += noise_std * noise(*rng);
        auto pred = model.forward(tape, x, seq.t_norm[f], *seq.nodes);
        auto term = tape.mse(pred, targets_tensor(seq.targets[f], scale));
        reg = reg ? tape.add(reg, term) : term;
        if (prev && lambda > 0.0) {
            auto s = tape.mse(pred, prev);
            smooth = smooth ? tape.add(smooth, s) : s;
        }
        prev = pred;
    }
    auto loss = tape.scale(reg, 1.0f / static_cast<float>(w.length));
    if (smooth)
        loss = tape.add(loss, tape.scale(smooth, static_cast<float>(lambda / static_cast<double>(w.length - 1))));
    return loss;
}

double evaluate(const DeformerModel &model, std::span<const TrainingSequence> data, const std::vector<std::size_t> &seqs,
                const TrainConfig &cfg) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto &w : make_windows(data, seqs, cfg.window)) {
        ad::Tape tape;
        total += window_loss(tape, model, data[w.seq], w, cfg.lambda_smooth, 0.0, nullptr)->values[0];
        ++count;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<std::vector<float>> snapshot(const DeformerModel &model) {
    std::vector<std::vector<float>> s;
    for (const auto &p : model.parameters()) s.push_back(p.second->values);
    return s;
}

void restore(DeformerModel &model, const std::vector<std::vector<float>> &s) {
    for (std::size_t i = 0; i < s.size(); ++i) model.parameters()[i].second->values = s[i];
}

} // namespace

TrainResult train(DeformerModel &model, std::span<const TrainingSequence> data, const TrainConfig &cfg) {
    if (data.empty()) throw InvalidArgument("train: empty dataset");
    if (cfg.epochs < 1 || !(cfg.lr0 > 0.0) || cfg.window < 1 || cfg.lambda_smooth < 0.0 || cfg.noise_std < 0.0)
        throw InvalidArgument("train: invalid training configuration");
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto &seq = data[s];
        if (!seq.nodes) throw InvalidArgument("train: sequence " + std::to_string(s) + " has no node set");
        if (seq.targets.size() != seq.frames.size() || seq.t_norm.size() != seq.frames.size())
            throw InvalidArgument("train: sequence " + std::to_string(s) + " is missing labels");
        for (const auto &t : seq.targets)
            if (t.size() != seq.nodes->size())
                throw ShapeError("train: label count does not match the node count in sequence " + std::to_string(s));
    }

    std::mt19937_64 rng(detail::mix_seed(cfg.seed, 0x7261696eULL));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = 0;
    if (data.size() >= 2 && cfg.val_fraction > 0.0)
        n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cfg.val_fraction * data.size())), 1,
                                        data.size() - 1);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());

    std::vector<ad::TensorPtr> params;
    for (auto &p : model.parameters()) params.push_back(p.second);
    ad::Adam adam(params);

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    auto best_params = snapshot(model);
    int since_best = 0;
    auto windows = make_windows(data, tr, cfg.window);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg, epoch);
        std::shuffle(windows.begin(), windows.end(), rng);
        const std::size_t steps = cfg.max_windows ? std::min(cfg.max_windows, windows.size()) : windows.size();
        double train_sum = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            const Window &w = windows[s];
            ad::Tape tape;
            adam.zero_grad();
            auto loss = window_loss(tape, model, data[w.seq], w, cfg.lambda_smooth, cfg.noise_std, &model.rng());
            if (!std::isfinite(loss->values[0]))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(s) + " (sequence " + std::to_string(w.seq) + ", frame " +
                                   std::to_string(w.start) + ")");
            tape.backward(loss);
            adam.step(lr);
            train_sum += loss->values[0];
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = steps ? train_sum / static_cast<double>(steps) : 0.0;
        rec.val_loss = val.empty() ? rec.train_loss : evaluate(model, data, val, cfg);
        result.history.push_back(rec);

        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_params = snapshot(model);
            result.best_epoch = epoch;
            since_best = 0;
        } else if (!val.empty() && ++since_best >= cfg.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }
    restore(model, best_params);
    return result;
}

void write_history_csv(const TrainResult &r, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_loss,lr\n" << std::setprecision(9);
    for (const auto &e : r.history) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
}

EmaState::EmaState(double b) : beta(b) {
    if (!(b >= 0.0 && b < 1.0)) throw InvalidArgument("EMA beta must lie in [0, 1)");
}

const CageDisplacementField &EmaState::update(const CageDisplacementField &raw) {
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("EMA beta must lie in [0, 1)");
    if (!smoothed || smoothed->size() != raw.size()) {
        smoothed = raw;
        return *smoothed;
    }
    for (std::size_t i = 0; i < raw.size(); ++i)
        smoothed->offsets[i] = beta * smoothed->offsets[i] + (1.0 - beta) * raw.offsets[i];
    smoothed->timestamp = raw.timestamp;
    return *smoothed;
}

CageDisplacementField infer_smoothed(const DeformerModel &model, const SensorFrame &frame, double t_norm,
                                     const NodeSet &nodes, EmaState &ema) {
    return ema.update(model.predict(frame, t_norm, nodes));
}

void save_checkpoint(const DeformerModel &model, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const ModelConfig &c = model.config();
    io::write_magic(out, kCheckpointMagic);
    io::write_pod(out, kCheckpointVersion);
    io::write_pod(out, static_cast<std::uint32_t>(c.architecture));
    for (int v : {c.grid_rows, c.grid_cols, c.conv1_channels, c.conv2_channels, c.feature_dim, c.time_bands, c.heads,
                  c.hidden})
        io::write_pod(out, static_cast<std::int32_t>(v));
    io::write_pod(out, c.coord_scale);
    io::write_pod(out, static_cast<std::uint64_t>(c.node_count));
    io::write_pod(out, c.seed);

    std::ostringstream rs;
    rs << model.rng();
    const std::string rng_state = rs.str();
    io::write_pod(out, static_cast<std::uint32_t>(rng_state.size()));
    out.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));

    io::write_pod(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto &[name, t] : model.parameters()) {
        io::write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_pod(out, static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) io::write_pod(out, static_cast<std::int32_t>(d));
        io::write_span(out, std::span<const float>(t->values));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

DeformerModel load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (!io::check_magic(in, kCheckpointMagic)) throw FormatError(path.string() + ": not a deformer checkpoint");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (!in) throw FormatError(path.string() + ": truncated header");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

    ModelConfig c;
    const auto arch = io::read_pod<std::uint32_t>(in);
    if (arch > 1) throw FormatError(path.string() + ": unknown architecture id");
    c.architecture = static_cast<Architecture>(arch);
    for (int *v : {&c.grid_rows, &c.grid_cols, &c.conv1_channels, &c.conv2_channels, &c.feature_dim, &c.time_bands,
                   &c.heads, &c.hidden})
        *v = io::read_pod<std::int32_t>(in);
    c.coord_scale = io::read_pod<double>(in);
    c.node_count = io::read_pod<std::uint64_t>(in);
    c.seed = io::read_pod<std::uint64_t>(in);
    const auto rng_len = io::read_pod<std::uint32_t>(in);
    if (!in || rng_len > (1u << 16)) throw FormatError(path.string() + ": truncated or corrupt header");
    std::string rng_state(rng_len, '\0');
    in.read(rng_state.data(), rng_len);
    if (!in) throw FormatError(path.string() + ": truncated header");

    DeformerModel model = [&] {
        try {
            return DeformerModel(c);
        } catch (const InvalidArgument &e) {
            throw FormatError(path.string() + ": corrupt architecture header (" + e.what() + ")");
        }
    }();
    std::istringstream rs(rng_state);
    rs >> model.rng();
    if (!rs) throw FormatError(path.string() + ": corrupt rng state");

    const auto count = io::read_pod<std::uint32_t>(in);
    if (!in || count != model.parameters().size())
        throw FormatError(path.string() + ": parameter count does not match the architecture");
    for (std::uint32_t k = 0; k < count; ++k) {
        auto &[name, t] = model.parameters()[k];
        const auto name_len = io::read_pod<std::uint32_t>(in);
        if (!in || name_len > 256) throw FormatError(path.string() + ": corrupt parameter block", k);
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        const auto ndim = io::read_pod<std::uint32_t>(in);
        if (!in || ndim > 8) throw FormatError(path.string() + ": corrupt parameter block", k);
        ad::Shape shape(ndim);
        for (auto &d : shape) d = io::read_pod<std::int32_t>(in);
        if (!in) throw FormatError(path.string() + ": truncated parameter block", k);
        if (stored != name || shape != t->shape)
            throw FormatError(path.string() + ": parameter '" + stored + "' " + ad::shape_string(shape) +
                                  " does not match '" + name + "' " + ad::shape_string(t->shape),
                              k);
        if (!io::read_span(in, std::span<float>(t->values)))
            throw FormatError(path.string() + ": truncated parameter data", k);
    }
    return model;
}

DeformerModel load_checkpoint(const std::filesystem::path &path, std::size_t node_count) {
    DeformerModel m = load_checkpoint(path);
    if (m.config().architecture == Architecture::cage_gat && m.config().node_count != node_count)
        throw ShapeError(path.string() + ": model was built for " + std::to_string(m.config().node_count) +
                         " cage nodes, the cage has " + std::to_string(node_count));
    return m;
}

} // namespace cagesplat
